"""Patch tokens, fixed 2D sin-cos positions, random masking and the patch embedding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError


def patchify(x: torch.Tensor, patch: int) -> torch.Tensor:
    """``(..., H, W)`` -> ``(..., N, P*P)``; tile ``k`` is the k-th tile in row-major order."""
    *lead, h, w = x.shape
    if h % patch or w % patch:
        raise ConfigError(f"slice {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    t = x.reshape(*lead, gh, patch, gw, patch)
    nd = len(lead)
    t = t.permute(*range(nd), nd, nd + 2, nd + 1, nd + 3)
    return t.reshape(*lead, gh * gw, patch * patch)


def unpatchify(patches: torch.Tensor, h: int, w: int, patch: int) -> torch.Tensor:
    *lead, n, pd = patches.shape
    if pd != patch * patch or n * pd != h * w or h % patch or w % patch:
        raise ShapeError(f"cannot lay out {n} patches of dim {pd} as {h}x{w} with P={patch}")
    gh, gw = h // patch, w // patch
    nd = len(lead)
    t = patches.reshape(*lead, gh, gw, patch, patch)
    t = t.permute(*range(nd), nd, nd + 2, nd + 1, nd + 3)
    return t.reshape(*lead, h, w)


def positional_table(grid_side: int, dim: int) -> torch.Tensor:
    """Fixed 2D sinusoidal table of shape ``(grid_side**2, dim)`` in float64.

    The first ``dim/2`` channels encode the tile row, the rest the column;
    each half is ``[sin(p*w_0..), cos(p*w_0..)]`` with ``w_i = 10000**(-i/(dim/4))``.
    """
    if dim % 4:
        raise ConfigError(f"positional dim {dim} must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.divmod(np.arange(grid_side * grid_side), grid_side)

    def half(pos):
        ang = pos[:, None].astype(np.float64) * omega[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    return torch.from_numpy(np.concatenate([half(rows), half(cols)], axis=1))


@dataclass(frozen=True)
class MaskPlan:
    visible: tuple[int, ...]
    masked: tuple[int, ...]
    keep_ratio: float


def n_visible(n: int, keep_ratio: float) -> int:
    return max(1, int(round(keep_ratio * n)))


def sample_mask(n: int, keep_ratio: float, seed) -> MaskPlan:
    if not (0.0 < keep_ratio <= 1.0):
        raise ConfigError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    k = n_visible(n, keep_ratio)
    return MaskPlan(
        visible=tuple(sorted(int(i) for i in perm[:k])),
        masked=tuple(sorted(int(i) for i in perm[k:])),
        keep_ratio=keep_ratio,
    )


class PatchEmbed(nn.Module):
    """Linear patch projection plus the fixed positional table."""

    def __init__(self, patch: int, grid_side: int, dim: int):
        super().__init__()
        self.patch = patch
        self.grid_side = grid_side
        self.proj = nn.Linear(patch * patch, dim)
        self.register_buffer("pos", positional_table(grid_side, dim).float(), persistent=False)

    @property
    def n_tokens(self) -> int:
        return self.grid_side * self.grid_side

    def forward(self, patches: torch.Tensor, index: torch.Tensor | None = None) -> torch.Tensor:
        """Embed ``(B, n, P*P)`` patches; ``index`` gives their token positions, ``(B, n)``."""
        return embed(patches, self.proj.weight, self.proj.bias, self.pos_for(index, patches))

    def pos_for(self, index: torch.Tensor | None, like: torch.Tensor) -> torch.Tensor:
        pos = self.pos.to(like.dtype)
        if index is None:
            return pos
        return pos[index]


def embed(patches: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    """``token_k = weight @ patch_k + bias + pos_k``."""
    if patches.shape[-1] != weight.shape[1] or pos.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"patch dim {patches.shape[-1]} / pos dim {pos.shape[-1]} incompatible with projection {tuple(weight.shape)}"
        )
    if pos.shape[-2] != patches.shape[-2]:
        raise ShapeError(f"{patches.shape[-2]} patches but {pos.shape[-2]} positions")
    return patches @ weight.T + bias + pos


def grid_side(n_tokens: int) -> int:
    side = math.isqrt(n_tokens)
    if side * side != n_tokens:
        raise ShapeError(f"{n_tokens} tokens do not form a square grid")
    return side
