"""Dose-specific masked autoencoder used for unpaired pretraining."""
from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .encoder import DoseEncoder, init_weights_
from .errors import ConfigError, NumericError, ShapeError
from .tokenizer import MaskPlan, patchify, sample_mask, unpatchify


class DsMAE(nn.Module):
    """Mask -> encode visible tokens -> per-token linear head over every position."""

    def __init__(self, dose: str, keep_ratio: float, *, slice_size: int = 64, patch: int = 8,
                 dim: int = 64, depth: int = 4, heads: int = 4):
        super().__init__()
        if dose not in ("L", "S"):
            raise ConfigError(f"dose must be 'L' or 'S', got {dose!r}")
        if not (0.0 < keep_ratio <= 1.0):
            raise ConfigError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
        if slice_size % patch:
            raise ConfigError(f"slice size {slice_size} not divisible by patch {patch}")
        self.dose = dose
        self.keep_ratio = keep_ratio
        self.slice_size = slice_size
        self.dose_encoder = DoseEncoder(patch, slice_size // patch, dim, depth, heads)
        self.mask_token = nn.Parameter(torch.zeros(dim))
        self.head = nn.Linear(dim, patch * patch)

    @property
    def patch(self) -> int:
        return self.dose_encoder.patch

    @property
    def n_tokens(self) -> int:
        return self.dose_encoder.embed.n_tokens

    def plans(self, seeds: Sequence) -> list[MaskPlan]:
        return [sample_mask(self.n_tokens, self.keep_ratio, s) for s in seeds]

    def forward(self, x: torch.Tensor, plans: Sequence[MaskPlan]) -> torch.Tensor:
        """Reconstruct a ``(B, H, W)`` batch given one mask plan per slice."""
        b, h, w = x.shape
        if h != self.slice_size or w != self.slice_size:
            raise ShapeError(f"expected {self.slice_size}x{self.slice_size} slices, got {h}x{w}")
        if len(plans) != b:
            raise ShapeError(f"{len(plans)} mask plans for a batch of {b}")
        patches = patchify(x, self.patch)
        vis = torch.tensor([p.visible for p in plans], dtype=torch.long)
        gathered = torch.gather(patches, 1, vis[..., None].expand(-1, -1, patches.shape[-1]))
        encoded = self.dose_encoder(gathered, vis)

        embed = self.dose_encoder.embed
        full = (self.mask_token + embed.pos_for(None, x)).expand(b, -1, -1)
        full = full.scatter(1, vis[..., None].expand(-1, -1, encoded.shape[-1]), encoded)
        out = self.head(full)
        if not torch.isfinite(out).all():
            raise NumericError("non-finite output at stage 'mae_head'")
        return unpatchify(out, h, w, self.patch)


def init_dsmae(seed: int, dose: str, keep_ratio: float, **dims) -> DsMAE:
    model = DsMAE(dose, keep_ratio, **dims)
    gen = torch.Generator().manual_seed(int(seed))
    init_weights_(model, gen)
    nn.init.xavier_uniform_(model.dose_encoder.embed.proj.weight, generator=gen)
    nn.init.trunc_normal_(model.mask_token, std=0.02, a=-0.04, b=0.04, generator=gen)
    return model


def mae_forward(x: torch.Tensor, model: DsMAE, seed) -> tuple[torch.Tensor, MaskPlan]:
    """Single-slice convenience wrapper: ``(H, W)`` -> ``(recon, plan)``."""
    plan = model.plans([seed])[0]
    return model(x[None], [plan])[0], plan


def stage1_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every pixel."""
    if recon.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(recon.shape)} vs {tuple(target.shape)}")
    return (recon - target).abs().mean()
