"""End-to-end desk run: synthetic data, both training stages, held-out metrics.

    python scripts/run_pipeline.py --out runs/demo [--config my.cfg] [--variant full]
"""
import argparse
import logging
from pathlib import Path

import torch

from s3pet import pipeline
from s3pet.config import parse_config
from s3pet.metrics import write_metrics_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--variant", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    cfg = parse_config(args.config)
    data, run = args.out / "data", args.out / "run"
    pipeline.gen_data(cfg, data)
    variant = args.variant or cfg["train.variant"]
    pretrained = pipeline.pretrain(cfg, data, run) if variant != "baseline" else None
    ckpt = pipeline.finetune(cfg, data, run, variant, pretrained)
    rows = pipeline.evaluate_dataset(ckpt, data, cfg["eval.max_val"])
    write_metrics_csv(run / f"metrics_{variant}.csv", rows)
    for r in rows:
        print(f"{r.case:<12} psnr {r.psnr:7.3f}  ssim {r.ssim:.4f}  nmse {r.nmse:.4f}")


if __name__ == "__main__":
    main()
