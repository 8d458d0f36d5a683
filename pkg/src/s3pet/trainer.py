"""Stage-I pretraining, Stage-II fine-tuning, inference and checkpoint assembly."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch

from .checkpoint import Checkpoint, config_hash, load_tensors, module_tensors
from .datagen import ImageVolume
from .dsmae import DsMAE, init_dsmae, stage1_loss
from .errors import ConfigError
from .network import VARIANTS, ModelConfig, S3PETNet, init_network
from .objectives import LossReport, LossWeights, rec_loss, stage2_loss, stage2_total
from .optim import OptimizerState, step_module

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    # full schedule is 300 epochs (Stage I) / 100 epochs (Stage II); max_steps caps it at desk scale
    epochs: int = 100
    max_steps: int = 0
    batch_size: int = 32
    lr: float = 2e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    dtype: str = "float32"
    augment: bool = False  # random dihedral transform per Stage-II batch

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("epochs and batch_size must be positive, max_steps non-negative")
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise ConfigError(f"bad learning rate {self.lr}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {list(DTYPES)}")

    def total_steps(self, n: int) -> int:
        steps = self.epochs * math.ceil(n / self.batch_size)
        return min(steps, self.max_steps) if self.max_steps else steps


def batches(n: int, cfg: TrainConfig) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(step, indices)``; order is reshuffled each epoch from ``(seed, epoch)``."""
    total = cfg.total_steps(n)
    step = 0
    epoch = 0
    while step < total:
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= total:
                return
            yield step, perm[start:start + cfg.batch_size]
            step += 1
        epoch += 1


def _meta(stage: str, step: int, cfg: ModelConfig, tcfg: TrainConfig, **extra) -> dict[str, str]:
    meta = {"stage": stage, "step": str(step)}
    meta.update({k: str(v) for k, v in asdict(cfg).items()})
    meta.update({k: str(v) for k, v in extra.items()})
    meta["config_hash"] = config_hash(repr((sorted(meta.items()), asdict(tcfg))))
    return meta


def model_config_from_meta(meta: dict[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            slice_size=int(meta["slice_size"]), patch=int(meta["patch"]), dim=int(meta["dim"]),
            depth=int(meta["depth"]), heads=int(meta["heads"]), keep_l=float(meta["keep_l"]),
            keep_s=float(meta["keep_s"]), transfer_depth=int(meta["transfer_depth"]),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint metadata incomplete: {exc}") from None


# -- Stage I -------------------------------------------------------------------

def mask_seeds(seed: int, step: int, idx) -> list[list[int]]:
    return [[int(seed), int(step), int(i)] for i in idx]


def evaluate_stage1(model: DsMAE, slices: np.ndarray, seed: int = 12345) -> float:
    """Stage-I loss over all slices with a fixed set of masks."""
    x = torch.from_numpy(slices).to(model.mask_token.dtype)
    with torch.no_grad():
        recon = model(x, model.plans([[int(seed), 2**32 - 1, i] for i in range(len(slices))]))
        return float(stage1_loss(recon, x))


def pretrain_stage1(slices: np.ndarray, dose: str, cfg: ModelConfig, tcfg: TrainConfig,
                    log_path=None) -> tuple[Checkpoint, list[float]]:
    """Train one DsMAE on unpaired slices of a single dose."""
    cfg.validate()
    tcfg.validate()
    if len(slices) == 0:
        raise ConfigError("stage I needs at least one slice")
    keep = cfg.keep_l if dose == "L" else cfg.keep_s
    model = init_dsmae(tcfg.seed, dose, keep, **cfg.dims()).to(DTYPES[tcfg.dtype])
    data = torch.from_numpy(np.asarray(slices, dtype=np.float32)).to(DTYPES[tcfg.dtype])
    state = OptimizerState()
    history: list[float] = []
    step = 0
    for step, idx in batches(len(data), tcfg):
        x = data[torch.from_numpy(idx)]
        model.zero_grad(set_to_none=True)
        loss = stage1_loss(model(x, model.plans(mask_seeds(tcfg.seed, step, idx))), x)
        loss.backward()
        step_module(model, state, tcfg.lr)
        history.append(loss.item())
    steps = len(history)
    log.info("stage I (%s): %d steps, loss %.4f -> %.4f", dose, steps, history[0], history[-1])
    if log_path is not None:
        Path(log_path).write_text("step,loss\n" + "".join(f"{i},{v:.8g}\n" for i, v in enumerate(history)))
    ckpt = Checkpoint(module_tensors(model), _meta("I", steps, cfg, tcfg, dose=dose))
    return ckpt, history


def dsmae_from_checkpoint(ckpt: Checkpoint) -> DsMAE:
    if ckpt.stage != "I":
        raise ConfigError(f"expected a stage-I checkpoint, got stage {ckpt.stage!r}")
    cfg = model_config_from_meta(ckpt.meta)
    dose = ckpt.meta.get("dose", "S")
    model = DsMAE(dose, cfg.keep_l if dose == "L" else cfg.keep_s, **cfg.dims())
    load_tensors(model, ckpt.tensors)
    return model


# -- Stage II ------------------------------------------------------------------

def dihedral(x: torch.Tensor, k: int, flip: bool) -> torch.Tensor:
    """One of the 8 square symmetries applied to the last two axes."""
    x = torch.rot90(x, k, (-2, -1))
    return x.flip(-1) if flip else x


def augment_draw(seed: int, step: int) -> tuple[int, bool]:
    r = np.random.default_rng([int(seed), int(step), 7])
    return int(r.integers(4)), bool(r.integers(2))


def stage2_step_losses(net: S3PETNet, x_l: torch.Tensor, x_s: torch.Tensor, w: LossWeights,
                       frozen_target: torch.Tensor | None = None) -> tuple[torch.Tensor, dict]:
    out = net(x_l, x_s, frozen_target=frozen_target)
    rec = rec_loss(out["pred_l"], x_l, out["pred_s"], x_s, w.gamma)
    total = stage2_total(out["align"], out["transfer"], rec, w)
    out["rec"] = rec
    return total, out


def _load_pretrained(net: S3PETNet, ckpt: Checkpoint, dose: str, cfg: ModelConfig) -> None:
    if ckpt.stage != "I":
        raise ConfigError(f"expected a stage-I checkpoint for dose {dose}, got stage {ckpt.stage!r}")
    if ckpt.meta.get("dose", dose) != dose:
        raise ConfigError(f"checkpoint is for dose {ckpt.meta.get('dose')}, expected {dose}")
    src = model_config_from_meta(ckpt.meta)
    if src.dims() != cfg.dims():
        raise ConfigError(f"checkpoint dims {src.dims()} differ from model dims {cfg.dims()}")
    load_tensors(getattr(net, f"enc_{dose}"), ckpt.subset("dose_encoder."))


def finetune_stage2(x_l: np.ndarray, x_s: np.ndarray, ckpt_l: Checkpoint | None, ckpt_s: Checkpoint | None,
                    cfg: ModelConfig, tcfg: TrainConfig, variant: str = "full", log_path=None,
                    on_step: Callable[[int, LossReport, S3PETNet], None] | None = None) -> tuple[Checkpoint, list[LossReport]]:
    """Paired fine-tuning of both encoders, DKD, DKL and both decoders with one Adam instance."""
    cfg.validate()
    tcfg.validate()
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if x_l.shape != x_s.shape or len(x_l) == 0:
        raise ConfigError(f"paired data shapes differ or are empty: {x_l.shape} vs {x_s.shape}")
    if x_l.shape[1:] != (cfg.slice_size, cfg.slice_size):
        raise ConfigError(f"slices {x_l.shape[1:]} do not match model slice size {cfg.slice_size}")
    net = init_network(tcfg.seed, cfg, variant)
    if VARIANTS[variant][0]:
        if ckpt_l is None or ckpt_s is None:
            raise ConfigError(f"variant {variant!r} needs both stage-I checkpoints")
        _load_pretrained(net, ckpt_l, "L", cfg)
        _load_pretrained(net, ckpt_s, "S", cfg)
    dtype = DTYPES[tcfg.dtype]
    net = net.to(dtype).train()
    dl = torch.from_numpy(np.asarray(x_l, dtype=np.float32)).to(dtype)
    ds = torch.from_numpy(np.asarray(x_s, dtype=np.float32)).to(dtype)
    state = OptimizerState()
    history: list[LossReport] = []
    for step, idx in batches(len(dl), tcfg):
        ti = torch.from_numpy(idx)
        a, b = dl[ti], ds[ti]
        if tcfg.augment:
            k, flip = augment_draw(tcfg.seed, step)
            a, b = dihedral(a, k, flip), dihedral(b, k, flip)
        net.zero_grad(set_to_none=True)
        total, out = stage2_step_losses(net, a, b, tcfg.weights)
        total.backward()
        step_module(net, state, tcfg.lr)
        report = stage2_loss(out["align"], out["transfer"], out["rec"], tcfg.weights)
        history.append(report)
        if on_step is not None:
            on_step(step, report, net)
    if history:
        log.info("stage II (%s): %d steps, total %.4f -> %.4f", variant, len(history), history[0].total, history[-1].total)
    if log_path is not None:
        write_training_log(log_path, history)
    meta = _meta("II", len(history), cfg, tcfg, variant=variant)
    return Checkpoint(module_tensors(net), meta), history


def write_training_log(path, history: list[LossReport]) -> None:
    rows = ["step,align,transfer,rec,total"]
    rows += [f"{i},{r.align:.8g},{r.transfer:.8g},{r.rec:.8g},{r.total:.8g}" for i, r in enumerate(history)]
    Path(path).write_text("\n".join(rows) + "\n")


def network_from_checkpoint(ckpt: Checkpoint) -> S3PETNet:
    if ckpt.stage != "II":
        raise ConfigError(f"inference needs a stage-II checkpoint, got stage {ckpt.stage!r}")
    cfg = model_config_from_meta(ckpt.meta)
    net = S3PETNet(cfg, ckpt.meta.get("variant", "full"))
    load_tensors(net, ckpt.tensors)
    return net.eval()


def reconstruct_slices(net: S3PETNet, slices: np.ndarray) -> np.ndarray:
    net.eval()
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        out = net.reconstruct(torch.from_numpy(np.asarray(slices, dtype=np.float32)).to(dtype))
    return out.float().numpy()


def infer(lpet: ImageVolume, ckpt: Checkpoint | S3PETNet) -> ImageVolume:
    """RPET volume from an LPET volume; eval-mode normalization, deterministic."""
    net = ckpt if isinstance(ckpt, S3PETNet) else network_from_checkpoint(ckpt)
    if lpet.height != net.cfg.slice_size or lpet.width != net.cfg.slice_size:
        raise ConfigError(f"volume slices {lpet.height}x{lpet.width} do not match model size {net.cfg.slice_size}")
    rpet = reconstruct_slices(net, lpet.slices())
    return ImageVolume(np.clip(rpet, 0.0, 1.0)[..., None])
