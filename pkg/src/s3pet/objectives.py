"""Composite fine-tuning objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError


@dataclass
class LossWeights:
    gamma: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 5.0

    def __post_init__(self):
        for name in ("gamma", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")


@dataclass
class LossReport:
    align: float
    transfer: float
    rec: float
    total: float


def _l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def rec_loss(pred_l, x_l, pred_s, x_s, gamma: float = 1.0):
    """Auxiliary L1 plus ``gamma`` times master L1."""
    return _l1(pred_l, x_l) + gamma * _l1(pred_s, x_s)


def stage2_total(align, transfer, rec, w: LossWeights):
    return align + w.lambda1 * transfer + w.lambda2 * rec


def stage2_loss(align, transfer, rec, w: LossWeights) -> LossReport:
    vals = [float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for v in (align, transfer, rec)]
    return LossReport(*vals, total=float(stage2_total(*vals, w)))
