"""Dataset-directory level steps shared by the CLI and the experiment scripts."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import Config
from .datagen import generate_dataset, load_slices, read_manifest, read_volume
from .errors import ConfigError
from .metrics import MetricReport, evaluate
from .network import VARIANTS
from .trainer import finetune_stage2, infer, network_from_checkpoint, pretrain_stage1

log = logging.getLogger(__name__)

MAE_FILES = {"L": "mae_L.ckpt", "S": "mae_S.ckpt"}


def gen_data(cfg: Config, out_dir) -> None:
    generate_dataset(out_dir, cfg.phantom_spec(), cfg.dose_params(), cfg.split_config(), cfg["data.seed"])


def pretrain(cfg: Config, data_dir, out_dir) -> dict[str, Checkpoint]:
    """Stage I for both doses: SPET on the unpaired pool, LPET on the pretraining pool."""
    manifest = read_manifest(Path(data_dir) / "splits.tsv")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources = {"S": load_slices(data_dir, "spet", manifest.unpaired_spet),
               "L": load_slices(data_dir, "lpet", manifest.lpet_pretrain)}
    ckpts = {}
    for dose in ("L", "S"):
        ckpt, _ = pretrain_stage1(sources[dose], dose, cfg.model_config(), cfg.train_config("I"),
                                  log_path=out / f"stage1_{dose}.csv")
        save_checkpoint(out / MAE_FILES[dose], ckpt)
        ckpts[dose] = ckpt
    return ckpts


def load_pretrained(cfg: Config, out_dir) -> dict[str, Checkpoint]:
    src = Path(cfg["train.pretrained_dir"] or out_dir)
    found = {}
    for dose, name in MAE_FILES.items():
        path = src / name
        if not path.exists():
            raise FileNotFoundError(f"missing stage-I checkpoint {path}; run 'pretrain' first")
        found[dose] = load_checkpoint(path)
    return found


def paired(data_dir, role: str) -> tuple[np.ndarray, np.ndarray]:
    manifest = read_manifest(Path(data_dir) / "splits.tsv")
    ids = manifest.paired_train if role == "train" else manifest.paired_eval
    return load_slices(data_dir, "lpet", ids), load_slices(data_dir, "spet", ids)


def finetune(cfg: Config, data_dir, out_dir, variant: str | None = None,
             pretrained: dict[str, Checkpoint] | None = None) -> Checkpoint:
    variant = variant or cfg["train.variant"]
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    if VARIANTS[variant][0] and pretrained is None:
        pretrained = load_pretrained(cfg, out_dir)
    pretrained = pretrained or {}
    x_l, x_s = paired(data_dir, "train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, _ = finetune_stage2(x_l, x_s, pretrained.get("L"), pretrained.get("S"), cfg.model_config(),
                              cfg.train_config("II"), variant=variant, log_path=out / f"stage2_{variant}.csv")
    save_checkpoint(out / f"s3pet_{variant}.ckpt", ckpt)
    return ckpt


def evaluate_dataset(ckpt: Checkpoint, data_dir, max_val: float = 1.0) -> list[MetricReport]:
    """One RPET row and one LPET-baseline row per held-out volume."""
    manifest = read_manifest(Path(data_dir) / "splits.tsv")
    net = network_from_checkpoint(ckpt)
    rows = []
    for vid in manifest.paired_eval:
        lpet = read_volume(Path(data_dir) / "lpet" / f"{vid}.pvol")
        spet = read_volume(Path(data_dir) / "spet" / f"{vid}.pvol")
        rows.append(evaluate(vid, infer(lpet, net), spet, max_val))
        rows.append(evaluate(f"{vid}:lpet", lpet, spet, max_val))
    return rows


@dataclass
class AblationRow:
    variant: str
    seed: int
    psnr: float
    ssim: float
    nmse: float


def mean_rpet(rows: list[MetricReport]) -> tuple[float, float, float]:
    rp = [r for r in rows if not r.case.endswith(":lpet")]
    return (float(np.mean([r.psnr for r in rp])), float(np.mean([r.ssim for r in rp])),
            float(np.mean([r.nmse for r in rp])))


def ablate(cfg: Config, data_dir, out_dir, seeds) -> list[AblationRow]:
    """Every variant for every seed; pretraining is shared by the variants of one seed."""
    runs = []
    for seed in seeds:
        run_cfg = Config(dict(cfg.values))
        run_cfg.values["train.seed"] = seed
        seed_dir = Path(out_dir) / f"seed{seed}"
        pretrained = pretrain(run_cfg, data_dir, seed_dir)
        for variant in VARIANTS:
            ckpt = finetune(run_cfg, data_dir, seed_dir, variant, pretrained)
            psnr, ssim, nmse = mean_rpet(evaluate_dataset(ckpt, data_dir, cfg["eval.max_val"]))
            log.info("seed %d %-10s psnr %.3f", seed, variant, psnr)
            runs.append(AblationRow(variant, seed, psnr, ssim, nmse))
    return runs


def write_ablation_csv(path, runs: list[AblationRow]) -> None:
    """Per-variant means over seeds, one row per variant in fixed order."""
    lines = ["variant,n_seeds,psnr_mean,psnr_std,ssim_mean,nmse_mean"]
    for variant in VARIANTS:
        rs = [r for r in runs if r.variant == variant]
        p = np.array([r.psnr for r in rs])
        lines.append(f"{variant},{len(rs)},{p.mean():.6f},{p.std():.6f},"
                     f"{np.mean([r.ssim for r in rs]):.6f},{np.mean([r.nmse for r in rs]):.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_ablation_runs(path, runs: list[AblationRow]) -> None:
    lines = ["variant,seed,psnr,ssim,nmse"]
    lines += [f"{r.variant},{r.seed},{r.psnr:.6f},{r.ssim:.6f},{r.nmse:.6f}" for r in runs]
    Path(path).write_text("\n".join(lines) + "\n")
