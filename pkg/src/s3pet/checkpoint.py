"""Checkpoint container and its manifest + f32le payload file format.

Layout::

    # s3pet-checkpoint v1
    # key=value            (metadata, any number)
    name dim0 dim1 ... byte_offset
    ...
    <blank line>
    <payload: little-endian float32, entries back to back>
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

HEADER = "# s3pet-checkpoint v1"
SKIP_BUFFERS = ("num_batches_tracked",)


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def stage(self) -> str:
        return self.meta.get("stage", "")

    def n_values(self) -> int:
        return sum(a.size for a in self.tensors.values())

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Every parameter and persistent buffer as float32 arrays, in state-dict order."""
    out = {}
    for name, t in module.state_dict().items():
        if name.rsplit(".", 1)[-1] in SKIP_BUFFERS:
            continue
        out[name] = t.detach().cpu().numpy().astype(np.float32, copy=True)
    return out


def load_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    state = module.state_dict()
    expected = {k for k in state if k.rsplit(".", 1)[-1] not in SKIP_BUFFERS}
    given = {k[len(prefix):] for k in tensors if k.startswith(prefix)}
    if expected != given:
        missing, extra = sorted(expected - given), sorted(given - expected)
        raise ValueError(f"checkpoint/model mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    new = {}
    for k in expected:
        arr = tensors[prefix + k]
        if tuple(arr.shape) != tuple(state[k].shape):
            raise ValueError(f"shape mismatch for {prefix + k}: {arr.shape} vs {tuple(state[k].shape)}")
        new[k] = torch.from_numpy(np.array(arr)).to(state[k].dtype)
    module.load_state_dict(new, strict=False)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    lines = [HEADER]
    for k, v in ckpt.meta.items():
        if "\n" in k or "\n" in str(v) or "=" in k:
            raise ValueError(f"bad metadata entry {k!r}")
        lines.append(f"# {k}={v}")
    offset = 0
    chunks = []
    for name, arr in ckpt.tensors.items():
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"bad tensor name {name!r}")
        lines.append(" ".join([name, *map(str, arr.shape), str(offset)]))
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(data)
        offset += len(data)
    return ("\n".join(lines) + "\n\n").encode("ascii") + b"".join(chunks)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    sep = buf.find(b"\n\n")
    if sep < 0:
        raise FormatError("manifest not terminated by a blank line", len(buf))
    try:
        head = buf[:sep].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("manifest is not ASCII", exc.start) from None
    payload = buf[sep + 2:]
    base = sep + 2
    lines = head.split("\n")
    if lines[0] != HEADER:
        raise FormatError(f"bad checkpoint header {lines[0][:40]!r}", 0)
    meta: dict[str, str] = {}
    entries = []
    pos = len(lines[0]) + 1
    for line in lines[1:]:
        if line.startswith("#"):
            key, eq, val = line[1:].strip().partition("=")
            if not eq:
                raise FormatError(f"bad metadata line {line!r}", pos)
            meta[key] = val
        else:
            parts = line.split()
            if len(parts) < 2:
                raise FormatError(f"bad manifest line {line!r}", pos)
            try:
                nums = [int(p) for p in parts[1:]]
            except ValueError:
                raise FormatError(f"non-integer field in manifest line {line!r}", pos) from None
            entries.append((parts[0], tuple(nums[:-1]), nums[-1], pos))
        pos += len(line) + 1

    tensors: dict[str, np.ndarray] = {}
    expect = 0
    for i, (name, shape, off, lpos) in enumerate(entries):
        if name in tensors:
            raise FormatError(f"duplicate entry {name!r}", lpos)
        if off != expect:
            raise FormatError(f"entry {name!r} offset {off} is not contiguous (expected {expect})", lpos)
        end = entries[i + 1][2] if i + 1 < len(entries) else len(payload)
        span = end - off
        size = int(np.prod(shape, dtype=np.int64)) * 4
        if span != size:
            raise FormatError(f"entry {name!r} shape {shape} needs {size} bytes, span is {span}", base + off)
        if off + size > len(payload):
            raise FormatError(f"payload truncated inside {name!r}", base + len(payload))
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=off).reshape(shape).astype(np.float32)
        expect = off + size
    if expect != len(payload):
        raise FormatError("payload length does not match manifest", base + expect)
    return Checkpoint(tensors, meta)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
