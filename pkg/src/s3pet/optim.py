"""Adam with bias correction over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import torch

from .errors import NumericError


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor | None],
              state: OptimizerState, lr: float) -> None:
    """Update ``params`` in place. Parameters whose gradient is ``None`` are left alone."""
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state shape {tuple(m.shape)} != parameter {name!r} {tuple(p.shape)}")
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.sub_(lr * (m / c1) / denom)


def step_module(module: torch.nn.Module, state: OptimizerState, lr: float) -> None:
    params = dict(module.named_parameters())
    adam_step(params, {k: p.grad for k, p in params.items()}, state, lr)
