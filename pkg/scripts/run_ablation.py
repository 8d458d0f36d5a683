"""Four-variant ablation over several seeds on one synthetic dataset.

    python scripts/run_ablation.py --out runs/ablation --seeds 0 1 2 [--config my.cfg]
"""
import argparse
import logging
from pathlib import Path

import torch

from s3pet import pipeline
from s3pet.config import parse_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    cfg = parse_config(args.config)
    data = args.out / "data"
    if not (data / "splits.tsv").exists():
        pipeline.gen_data(cfg, data)
    runs = pipeline.ablate(cfg, data, args.out, args.seeds)
    pipeline.write_ablation_csv(args.out / "ablation.csv", runs)
    pipeline.write_ablation_runs(args.out / "ablation_runs.csv", runs)
    print((args.out / "ablation.csv").read_text(), end="")


if __name__ == "__main__":
    main()
