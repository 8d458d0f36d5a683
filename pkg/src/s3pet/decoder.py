"""CNN dose decoders: tokens -> 2D feature map -> full-resolution image."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError, ShapeError
from .tokenizer import grid_side


def fuse_tokens(specific: torch.Tensor, invariant: torch.Tensor) -> torch.Tensor:
    """Concatenate ``(B, N, d)`` streams to a ``(B, 2d, sqrt N, sqrt N)`` map, tiles row-major."""
    if specific.shape != invariant.shape:
        raise ShapeError(f"stream shapes differ: {tuple(specific.shape)} vs {tuple(invariant.shape)}")
    b, n, d = specific.shape
    side = grid_side(n)
    t = torch.cat([specific, invariant], dim=-1)
    return t.transpose(1, 2).reshape(b, 2 * d, side, side)


class ConvBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout, momentum=0.1),
            nn.ReLU(),
        )


class DoseDecoder(nn.Module):
    """Four Conv-BN-ReLU blocks with nearest 2x upsampling between them, then 1x1 conv + sigmoid.

    Channels: 2d -> d -> d/2 -> d/4 -> d/4 -> 1.
    """

    def __init__(self, dim: int):
        super().__init__()
        if dim % 4:
            raise ShapeError(f"decoder dim {dim} must be divisible by 4")
        self.dim = dim
        widths = [2 * dim, dim, dim // 2, dim // 4, dim // 4]
        self.blocks = nn.ModuleList(ConvBlock(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.head = nn.Conv2d(widths[-1], 1, 1)

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        if fmap.shape[1] != 2 * self.dim:
            raise ShapeError(f"expected {2 * self.dim} channels, got {fmap.shape[1]}")
        x = fmap
        for i, block in enumerate(self.blocks):
            if i:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation in decoder block {i}")
        return torch.sigmoid(self.head(x))[:, 0]


def decode(fmap: torch.Tensor, decoder: DoseDecoder) -> torch.Tensor:
    return decoder(fmap)
