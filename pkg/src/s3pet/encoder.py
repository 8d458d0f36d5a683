"""Pre-norm transformer encoder shared by the LPET and SPET branches."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericError
from .tokenizer import PatchEmbed


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        *lead, n, d = t.shape
        return t.reshape(*lead, n, self.heads, d // self.heads).transpose(-3, -2)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax attention weights, ``(..., heads, N, N)``."""
        q, k = self._split(self.q(x)), self._split(self.k(x))
        scale = 1.0 / math.sqrt(q.shape[-1])
        return torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attn = self.weights(x)
        v = self._split(self.v(x))
        y = (attn @ v).transpose(-3, -2)
        return self.out(y.reshape(x.shape))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class TransformerEncoder(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int):
        super().__init__()
        if depth < 0:
            raise ConfigError("depth must be >= 0")
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return encode(tokens, self)


def encode(tokens: torch.Tensor, encoder: TransformerEncoder) -> torch.Tensor:
    if tokens.shape[-1] != encoder.dim:
        raise ConfigError(f"token dim {tokens.shape[-1]} != encoder dim {encoder.dim}")
    x = tokens
    for i, block in enumerate(encoder.blocks):
        x = block(x)
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite activation after encoder block {i}")
    return x


def init_weights_(module: nn.Module, generator: torch.Generator, std: float = 0.02) -> None:
    """Truncated-normal (at 2 std) linear weights, zero biases, unit LayerNorm gains."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std, generator=generator)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def init_encoder(seed: int, dim: int, depth: int, heads: int) -> TransformerEncoder:
    enc = TransformerEncoder(dim, depth, heads)
    init_weights_(enc, torch.Generator().manual_seed(int(seed)))
    return enc


class DoseEncoder(nn.Module):
    """Patch embedding followed by the transformer blocks (one per dose)."""

    def __init__(self, patch: int, grid_side: int, dim: int, depth: int, heads: int):
        super().__init__()
        self.embed = PatchEmbed(patch, grid_side, dim)
        self.encoder = TransformerEncoder(dim, depth, heads)

    @property
    def patch(self) -> int:
        return self.embed.patch

    def forward(self, patches: torch.Tensor, index: torch.Tensor | None = None) -> torch.Tensor:
        return self.encoder(self.embed(patches, index))
