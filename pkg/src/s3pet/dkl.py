"""Dose-specific knowledge learning: token swap, linear transfer and the transfer loss."""
from __future__ import annotations

import torch
from torch import nn

from .dkd import DecoupledTokens, token_js
from .errors import ShapeError


def token_swap(l: DecoupledTokens, s: DecoupledTokens) -> tuple[DecoupledTokens, DecoupledTokens]:
    """Exchange the dose-specific streams; invariant streams stay with their sample."""
    if l.dose_specific.shape != s.dose_specific.shape or l.dose_invariant.shape != s.dose_invariant.shape:
        raise ShapeError("token sets to swap must have matching shapes")
    return (
        DecoupledTokens(s.dose_specific, l.dose_invariant, l.dose),
        DecoupledTokens(l.dose_specific, s.dose_invariant, s.dose),
    )


class Transfer(nn.Module):
    """Per-token map from LPET-specific to predicted SPET-specific tokens.

    ``depth=1`` is a single affine layer; deeper stacks put GELU between layers.
    """

    def __init__(self, dim: int, depth: int = 1):
        super().__init__()
        if depth < 1:
            raise ValueError("transfer depth must be >= 1")
        layers: list[nn.Module] = []
        for i in range(depth):
            if i:
                layers.append(nn.GELU())
            layers.append(nn.Linear(dim, dim))
        self.net = nn.Sequential(*layers)
        self.dim = dim

    def forward(self, l_ds: torch.Tensor) -> torch.Tensor:
        if l_ds.shape[-1] != self.dim:
            raise ShapeError(f"token dim {l_ds.shape[-1]} != transfer dim {self.dim}")
        return self.net(l_ds)


def transfer_loss(s_ds: torch.Tensor, s_ds_pred: torch.Tensor) -> torch.Tensor:
    """JS between true and predicted SPET-specific tokens; the true tokens are a fixed target."""
    return token_js(s_ds.detach(), s_ds_pred)
