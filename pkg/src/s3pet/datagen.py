"""Synthetic SPET phantoms, low-dose simulation, data splits and the PVOL format.

Phantoms are sums of 3D ellipsoids on a constant background: one large
"body" ellipsoid followed by smaller inserts, each carrying one of the
configured intensity levels. Overlaps add and the result is clamped to
[0, 1]. Low-dose counterparts are Poisson-thinned, rescaled and blurred.
"""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError

PVOL_MAGIC = b"PVOL1"
ROLES = ("unpaired_spet", "lpet_pretrain", "paired_train", "paired_eval")


@dataclass
class ImageVolume:
    """Normalized intensity grid stored as ``(depth, height, width, channels)`` float32."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4:
            raise ConfigError(f"volume must be 3D or 4D, got shape {data.shape}")
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("volume contains non-finite values")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ConfigError("volume values must lie in [0, 1]")

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    def slices(self) -> np.ndarray:
        """Single-channel slices as a ``(depth, height, width)`` view."""
        return self.data[..., 0]


@dataclass
class PhantomSpec:
    n_ellipses: tuple[int, int] = (3, 6)
    intensity_levels: tuple[float, ...] = (0.25, 0.35, 0.5)
    background: float = 0.02
    slice_size: int = 64
    volume_depth: int = 8
    patch_size: int = 8

    def validate(self) -> None:
        lo, hi = self.n_ellipses
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad ellipse count range {self.n_ellipses}")
        if hi > 0 and not self.intensity_levels:
            raise ConfigError("at least one intensity level is required")
        if any(not (0.0 < v <= 1.0) for v in self.intensity_levels):
            raise ConfigError("intensity levels must lie in (0, 1]")
        if not (0.0 <= self.background <= 0.1):
            raise ConfigError("background must lie in [0, 0.1]")
        if self.slice_size <= 0 or self.volume_depth <= 0:
            raise ConfigError("slice_size and volume_depth must be positive")
        if self.slice_size % self.patch_size:
            raise ConfigError(
                f"slice_size {self.slice_size} not divisible by patch size {self.patch_size}"
            )


@dataclass
class DoseParams:
    drf: float = 100.0
    counts_per_unit: float = 1e3
    blur_sigma: float = 0.5

    def validate(self) -> None:
        if not self.drf >= 1.0:
            raise ConfigError(f"drf must be >= 1, got {self.drf}")
        if not self.counts_per_unit > 0.0:
            raise ConfigError("counts_per_unit must be positive")
        if not self.blur_sigma >= 0.0:
            raise ConfigError("blur_sigma must be non-negative")


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]  # (z, y, x) in normalized [-1, 1] coordinates
    radii: tuple[float, float, float]
    angle: float  # in-plane rotation, radians
    level: float


def volume_seed(seed: int, volume_id: str, stream: int = 0) -> list[int]:
    """Independent RNG entropy for one volume, stable across processes."""
    return [int(seed), zlib.crc32(volume_id.encode("utf-8")), int(stream)]


def sample_ellipsoids(rng: np.random.Generator, spec: PhantomSpec) -> list[Ellipsoid]:
    lo, hi = spec.n_ellipses
    count = int(rng.integers(lo, hi + 1))
    levels = np.asarray(spec.intensity_levels, dtype=np.float64)
    shapes = []
    for k in range(count):
        if k == 0:
            center = (rng.uniform(-0.2, 0.2), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05))
            radii = (rng.uniform(1.2, 2.0), rng.uniform(0.7, 0.8), rng.uniform(0.7, 0.8))
            level = float(levels[0])
        else:
            center = (rng.uniform(-0.8, 0.8), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45))
            radii = (rng.uniform(0.4, 1.2), rng.uniform(0.06, 0.2), rng.uniform(0.06, 0.2))
            level = float(levels[rng.integers(len(levels))])
        angle = rng.uniform(0.0, np.pi)
        shapes.append(Ellipsoid(tuple(map(float, center)), tuple(map(float, radii)), float(angle), level))
    return shapes


def _grid(spec: PhantomSpec):
    n, d = spec.slice_size, spec.volume_depth
    # pixel centres mapped into [-1, 1]
    yx = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    z = (np.arange(d) + 0.5) / d * 2.0 - 1.0
    return np.meshgrid(z, yx, yx, indexing="ij")


def ellipsoid_mask(shape: Ellipsoid, z, y, x) -> np.ndarray:
    cz, cy, cx = shape.center
    rz, ry, rx = shape.radii
    c, s = np.cos(shape.angle), np.sin(shape.angle)
    dy, dx = y - cy, x - cx
    u = c * dy + s * dx
    v = -s * dy + c * dx
    return ((z - cz) / rz) ** 2 + (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def render(shapes: Sequence[Ellipsoid], spec: PhantomSpec) -> np.ndarray:
    z, y, x = _grid(spec)
    vol = np.full(z.shape, spec.background, dtype=np.float64)
    for shape in shapes:
        vol += shape.level * ellipsoid_mask(shape, z, y, x)
    return np.clip(vol, 0.0, 1.0)


def gen_spet_volume(seed, spec: PhantomSpec) -> ImageVolume:
    """Standard-dose phantom; a pure function of ``(seed, spec)``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    shapes = sample_ellipsoids(rng, spec)
    return ImageVolume(render(shapes, spec).astype(np.float32))


def derive_lpet(spet: ImageVolume, dose: DoseParams, seed) -> ImageVolume:
    """Low-dose counterpart: Poisson thinning at ``1/drf`` of the counts, then in-plane blur."""
    dose.validate()
    rng = np.random.default_rng(seed)
    scale = dose.counts_per_unit / dose.drf
    counts = rng.poisson(spet.data.astype(np.float64) * scale)
    img = counts / scale
    if dose.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, sigma=(0, dose.blur_sigma, dose.blur_sigma, 0), mode="nearest")
    return ImageVolume(np.clip(img, 0.0, 1.0).astype(np.float32))


# -- PVOL format -------------------------------------------------------------

def encode_volume(vol: ImageVolume) -> bytes:
    d, h, w, c = vol.dims
    header = b"%s\ndims=%d %d %d %d\ndtype=f32le\n\n" % (PVOL_MAGIC, d, h, w, c)
    return header + vol.data.astype("<f4", copy=False).tobytes(order="C")


def decode_volume(buf: bytes) -> ImageVolume:
    lines = []
    pos = 0
    for _ in range(4):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated header", pos)
        lines.append((pos, buf[pos:end]))
        pos = end + 1
    (o0, magic), (o1, dims_line), (o2, dtype_line), (o3, blank) = lines
    if magic != PVOL_MAGIC:
        raise FormatError(f"bad magic {magic[:16]!r}", o0)
    if not dims_line.startswith(b"dims="):
        raise FormatError("expected dims= line", o1)
    try:
        dims = tuple(int(t) for t in dims_line[5:].split())
    except ValueError:
        raise FormatError("unparseable dims", o1) from None
    if len(dims) != 4 or any(n <= 0 for n in dims):
        raise FormatError(f"dims must be four positive integers, got {dims}", o1)
    if dtype_line != b"dtype=f32le":
        raise FormatError(f"unsupported dtype {dtype_line!r}", o2)
    if blank != b"":
        raise FormatError("header must end with an empty line", o3)
    n = int(np.prod(dims))
    expected = n * 4
    payload = buf[pos:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}", pos + len(payload)
        )
    if len(payload) > expected:
        raise FormatError("trailing bytes after payload", pos + expected)
    data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    bad = ~np.isfinite(data)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("non-finite value in payload", pos + 4 * idx)
    out = (data < 0) | (data > 1)
    if out.any():
        idx = int(np.flatnonzero(out.ravel())[0])
        raise FormatError("value outside [0, 1] in payload", pos + 4 * idx)
    return ImageVolume(data.astype(np.float32))


def write_volume(path, vol: ImageVolume) -> None:
    Path(path).write_bytes(encode_volume(vol))


def read_volume(path) -> ImageVolume:
    return decode_volume(Path(path).read_bytes())


# -- splits ------------------------------------------------------------------

@dataclass
class SplitConfig:
    n_unpaired: int = 12
    n_pretrain_lpet: int = 3
    n_paired_train: int = 3
    n_paired_eval: int = 2
    unpaired_pool: int | None = None
    paired_pool: int | None = None


@dataclass
class SplitManifest:
    unpaired_spet: list[str] = field(default_factory=list)
    lpet_pretrain: list[str] = field(default_factory=list)
    paired_train: list[str] = field(default_factory=list)
    paired_eval: list[str] = field(default_factory=list)

    def items(self) -> Iterable[tuple[str, str]]:
        for role in ROLES:
            for vid in getattr(self, role):
                yield role, vid

    def paired_ids(self) -> list[str]:
        seen = dict.fromkeys(self.paired_train + self.paired_eval + self.lpet_pretrain)
        return list(seen)


def build_splits(cfg: SplitConfig) -> SplitManifest:
    counts = (cfg.n_unpaired, cfg.n_pretrain_lpet, cfg.n_paired_train, cfg.n_paired_eval)
    if min(counts) < 1:
        raise ConfigError(f"every split count must be >= 1, got {counts}")
    unpaired_pool = cfg.n_unpaired if cfg.unpaired_pool is None else cfg.unpaired_pool
    extra = max(0, cfg.n_pretrain_lpet - cfg.n_paired_train)
    paired_needed = cfg.n_paired_train + cfg.n_paired_eval + extra
    paired_pool = paired_needed if cfg.paired_pool is None else cfg.paired_pool
    if cfg.n_unpaired > unpaired_pool:
        raise ConfigError(f"{cfg.n_unpaired} unpaired volumes requested, pool holds {unpaired_pool}")
    if paired_needed > paired_pool:
        raise ConfigError(f"{paired_needed} paired volumes requested, pool holds {paired_pool}")

    paired = [f"p{i:03d}" for i in range(paired_needed)]
    train = paired[: cfg.n_paired_train]
    evals = paired[cfg.n_paired_train : cfg.n_paired_train + cfg.n_paired_eval]
    dedicated = paired[cfg.n_paired_train + cfg.n_paired_eval :]
    pretrain = (train + dedicated)[: cfg.n_pretrain_lpet]
    return SplitManifest(
        unpaired_spet=[f"u{i:03d}" for i in range(cfg.n_unpaired)],
        lpet_pretrain=pretrain,
        paired_train=train,
        paired_eval=evals,
    )


def write_manifest(path, manifest: SplitManifest) -> None:
    text = "".join(f"{role}\t{vid}\n" for role, vid in manifest.items())
    Path(path).write_text(text, encoding="utf-8")


def read_manifest(path) -> SplitManifest:
    manifest = SplitManifest()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in ROLES:
            raise FormatError(f"{path}:{lineno}: expected 'role<TAB>volume_id'")
        getattr(manifest, parts[0]).append(parts[1])
    if set(manifest.paired_train) & set(manifest.paired_eval):
        raise FormatError(f"{path}: paired_train and paired_eval overlap")
    return manifest


# -- dataset directories -------------------------------------------------------

def generate_dataset(out_dir, spec: PhantomSpec, dose: DoseParams, split_cfg: SplitConfig, seed: int) -> SplitManifest:
    """Write ``spet/<id>.pvol``, ``lpet/<id>.pvol`` and ``splits.tsv`` under ``out_dir``."""
    spec.validate()
    dose.validate()
    manifest = build_splits(split_cfg)
    root = Path(out_dir)
    (root / "spet").mkdir(parents=True, exist_ok=True)
    (root / "lpet").mkdir(parents=True, exist_ok=True)
    for vid in manifest.unpaired_spet:
        write_volume(root / "spet" / f"{vid}.pvol", gen_spet_volume(volume_seed(seed, vid, 0), spec))
    for vid in manifest.paired_ids():
        spet = gen_spet_volume(volume_seed(seed, vid, 0), spec)
        write_volume(root / "spet" / f"{vid}.pvol", spet)
        write_volume(root / "lpet" / f"{vid}.pvol", derive_lpet(spet, dose, volume_seed(seed, vid, 1)))
    write_manifest(root / "splits.tsv", manifest)
    return manifest


def load_slices(data_dir, kind: str, ids: Sequence[str]) -> np.ndarray:
    """Stack every slice of the listed volumes into a ``(n, H, W)`` float32 array."""
    root = Path(data_dir)
    vols = []
    for vid in ids:
        path = root / kind / f"{vid}.pvol"
        if not path.exists():
            raise FileNotFoundError(os.fspath(path))
        vols.append(read_volume(path).slices())
    if not vols:
        raise ConfigError(f"no {kind} volumes listed")
    return np.concatenate(vols, axis=0)
