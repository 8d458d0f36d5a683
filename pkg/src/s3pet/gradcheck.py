"""Analytic-vs-central-difference gradient check of both training objectives."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from unittest import mock

import numpy as np
import torch

from .dsmae import init_dsmae, stage1_loss
from .network import ModelConfig, S3PETNet, init_network
from .objectives import LossWeights
from .trainer import stage2_step_losses

TINY = ModelConfig(slice_size=16, patch=8, dim=8, depth=1, heads=2, keep_l=0.25, keep_s=0.5)
STEP = {torch.float64: 1e-4, torch.float32: 1e-2}
THRESHOLD = {torch.float64: 1e-5, torch.float32: 1e-3}
# gradients below this magnitude are compared absolutely
REL_FLOOR = 1e-6


@dataclass
class GradEntry:
    loss: str
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_err(self) -> float:
        return rel_error(self.analytic, self.numeric)


@dataclass
class GradcheckReport:
    entries: list[GradEntry]
    shared: dict
    threshold: float
    dtype: str
    modules: set[str] = field(default_factory=set)
    rejected: int = 0

    @property
    def max_rel_err(self) -> float:
        errs = [e.rel_err for e in self.entries] + [self.shared["rel_err"]]
        return max(errs)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold

    def offenders(self) -> list[GradEntry]:
        return [e for e in self.entries if e.rel_err >= self.threshold]

    def format(self) -> str:
        lines = [f"gradcheck dtype={self.dtype} params={len(self.entries)} "
                 f"kink-rejected draws={self.rejected} modules={','.join(sorted(self.modules))}"]
        for e in self.entries:
            lines.append(f"  {e.loss:8s} {e.name}{list(e.index)} analytic={e.analytic:+.6e} "
                         f"numeric={e.numeric:+.6e} rel={e.rel_err:.2e}")
        s = self.shared
        lines.append(f"  shared invariant projector {s['name']}{list(s['index'])}: analytic={s['analytic']:+.6e} "
                     f"L-branch={s['fd_L']:+.6e} S-branch={s['fd_S']:+.6e} rel={s['rel_err']:.2e}")
        lines.append(f"max relative error {self.max_rel_err:.3e} (threshold {self.threshold:.0e}): "
                     + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def rel_error(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


class KinkProbe:
    """Records the sign pattern of every ReLU input plus extra tensors (L1 residuals)."""

    def __init__(self, module: torch.nn.Module):
        self.signs: list[torch.Tensor] = []
        self.handles = [m.register_forward_hook(self._hook) for m in module.modules()
                        if isinstance(m, torch.nn.ReLU)]

    def _hook(self, _m, inputs, _out):
        self.signs.append(inputs[0].detach() > 0)

    def add(self, t: torch.Tensor) -> None:
        self.signs.append(t.detach() > 0)

    def take(self) -> torch.Tensor:
        out = torch.cat([s.flatten() for s in self.signs]) if self.signs else torch.zeros(0, dtype=torch.bool)
        self.signs = []
        return out


def _central(loss_fn, p: torch.Tensor, idx: tuple, h: float, probe: KinkProbe | None = None) -> tuple[float, bool]:
    """Central difference and whether a ReLU / L1 kink lies inside ``[x - h, x + h]``."""
    with torch.no_grad():
        orig = p[idx].item()
        p[idx] = orig + h
        plus = loss_fn().item()
        s_plus = probe.take() if probe else None
        p[idx] = orig - h
        minus = loss_fn().item()
        s_minus = probe.take() if probe else None
        p[idx] = orig
    crossed = bool(probe) and not torch.equal(s_plus, s_minus)
    return (plus - minus) / (2 * h), crossed


def _sample(module: torch.nn.Module, groups: list[str], n: int, rng: np.random.Generator):
    """``n`` (group, name, param, index) picks, cycling over groups so every module is covered."""
    params = dict(module.named_parameters())
    by_group = {g: [k for k in params if k == g or k.startswith(g + ".")] for g in groups}
    picks = []
    for i in range(n):
        g = groups[i % len(groups)]
        names = by_group[g]
        sizes = np.array([params[k].numel() for k in names], dtype=float)
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        picks.append((g, name, p, idx))
    return picks


def _check(loss_fn, module, groups, n, rng, h, label, probe, max_tries: int = 50) -> tuple[list[GradEntry], int]:
    """Checked entries plus the number of draws rejected because the stencil straddled a kink."""
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    probe.take()
    entries, rejected = [], 0
    for i in range(n):
        for _ in range(max_tries):
            _, name, p, idx = _sample(module, [groups[i % len(groups)]], 1, rng)[0]
            numeric, crossed = _central(loss_fn, p, idx, h, probe)
            if not crossed:
                break
            rejected += 1
        analytic = p.grad[idx].item() if p.grad is not None else 0.0
        entries.append(GradEntry(label, name, idx, analytic, numeric))
    return entries, rejected


def gradient_check(cfg: ModelConfig = TINY, dtype: torch.dtype = torch.float64, n_params: int = 24,
                   seed: int = 0, batch: int = 3, weights: LossWeights | None = None) -> GradcheckReport:
    """Compare autograd against central differences for the Stage-I and Stage-II losses.

    The transfer target is a constant in the Stage-II objective, so the
    finite differences hold it at its unperturbed value.
    """
    weights = weights or LossWeights()
    h = STEP[dtype]
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    size = cfg.slice_size
    x_l = torch.rand(batch, size, size, generator=gen, dtype=dtype)
    x_s = torch.rand(batch, size, size, generator=gen, dtype=dtype)

    mae = init_dsmae(seed, "L", cfg.keep_s, **cfg.dims()).to(dtype)
    plans = mae.plans([[seed, i] for i in range(batch)])

    probe1 = KinkProbe(mae)

    def stage1():
        recon = mae(x_l, plans)
        probe1.add(recon - x_l)
        return stage1_loss(recon, x_l)

    entries, rej1 = _check(stage1, mae, ["dose_encoder", "mask_token", "head"], n_params, rng, h, "stage_I", probe1)

    net = init_network(seed, cfg, "full").to(dtype).train()
    with torch.no_grad():
        target = net.dkd.decouple(net.encode(x_s, "S"), "S").dose_specific.clone()

    probe2 = KinkProbe(net)

    def stage2():
        total, out = stage2_step_losses(net, x_l, x_s, weights, frozen_target=target)
        probe2.add(out["pred_l"] - x_l)
        probe2.add(out["pred_s"] - x_s)
        return total

    groups = ["enc_L", "enc_S", "dkd", "transfer", "dec_aux", "dec_master"]
    more, rej2 = _check(stage2, net, groups, n_params, rng, h, "stage_II", probe2)
    shared = _shared_projector_check(net, stage2, rng, h, probe2)
    return GradcheckReport(entries + more, shared, THRESHOLD[dtype], str(dtype).replace("torch.", ""),
                           modules=set(groups) | {"dose_encoder", "mask_token", "head"},
                           rejected=rej1 + rej2 + shared["rejected"])


def _shared_projector_check(net: S3PETNet, loss_fn, rng, h, probe: KinkProbe, max_tries: int = 50) -> dict:
    """Shared-weight gradient vs the sum of one-branch-at-a-time finite differences."""
    inv = net.dkd.invariant
    net.zero_grad(set_to_none=True)
    loss_fn().backward()
    probe.take()
    rejected = 0
    for _ in range(max_tries):
        idx = (int(rng.integers(inv.weight.shape[0])), int(rng.integers(inv.weight.shape[1])))
        contrib, crossed = {}, False
        for branch in ("L", "S"):
            twin = copy.deepcopy(inv)
            routed = lambda dose, _b=branch, _t=twin: _t if dose == _b else inv  # noqa: E731
            with mock.patch.object(net.dkd, "invariant_for", routed):
                contrib[branch], c = _central(loss_fn, twin.weight, idx, h, probe)
            crossed = crossed or c
        if not crossed:
            break
        rejected += 1
    analytic = inv.weight.grad[idx].item()
    total = contrib["L"] + contrib["S"]
    return {"name": "dkd.invariant.weight", "index": idx, "analytic": analytic, "rejected": rejected,
            "fd_L": contrib["L"], "fd_S": contrib["S"], "rel_err": rel_error(analytic, total)}
