"""Dose knowledge decoupling: specific / invariant projections and the JS alignment loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ShapeError

JS_EPS = 1e-8
LN2 = math.log(2.0)


@dataclass
class DecoupledTokens:
    dose_specific: torch.Tensor
    dose_invariant: torch.Tensor
    dose: str


class DKD(nn.Module):
    """Per-dose specific projectors and one invariant projector referenced by both doses."""

    def __init__(self, dim: int):
        super().__init__()
        self.specific_L = nn.Linear(dim, dim)
        self.specific_S = nn.Linear(dim, dim)
        self.invariant = nn.Linear(dim, dim)

    def specific(self, dose: str) -> nn.Linear:
        return {"L": self.specific_L, "S": self.specific_S}[dose]

    def invariant_for(self, dose: str) -> nn.Linear:
        if dose not in ("L", "S"):
            raise KeyError(dose)
        return self.invariant

    def decouple(self, e: torch.Tensor, dose: str) -> DecoupledTokens:
        if e.shape[-1] != self.invariant.in_features:
            raise ShapeError(f"token dim {e.shape[-1]} != projector dim {self.invariant.in_features}")
        return DecoupledTokens(self.specific(dose)(e), self.invariant_for(dose)(e), dose)


def token_softmax(t: torch.Tensor) -> torch.Tensor:
    """Channel-wise softmax turning each token into a probability vector."""
    return torch.softmax(t, dim=-1)


def js_divergence(p: torch.Tensor, q: torch.Tensor, eps: float = JS_EPS) -> torch.Tensor:
    """Row-wise Jensen-Shannon divergence (natural log) over the last axis."""
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch {tuple(p.shape)} vs {tuple(q.shape)}")
    with torch.no_grad():
        for name, r in (("p", p), ("q", q)):
            if (r < 0).any() or ((r.sum(-1) - 1).abs() > 1e-4).any():
                raise ValueError(f"{name} is not a probability distribution")
    m = 0.5 * (p + q)
    log_m = m.clamp_min(eps).log()
    kl_pm = (p * (p.clamp_min(eps).log() - log_m)).sum(-1)
    kl_qm = (q * (q.clamp_min(eps).log() - log_m)).sum(-1)
    return (0.5 * kl_pm + 0.5 * kl_qm).clamp_min(0.0)


def token_js(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean per-token JS divergence between the softmax-normalized token sets."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return js_divergence(token_softmax(a), token_softmax(b)).mean()


def alignment_loss(l_di: torch.Tensor, s_di: torch.Tensor) -> torch.Tensor:
    return token_js(l_di, s_di)
