"""Command-line entry point: data generation, both training stages, inference, evaluation, ablation and gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .checkpoint import load_checkpoint
from .config import DEFAULTS, Config, parse_config
from .datagen import read_volume, write_volume
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .gradcheck import gradient_check
from .metrics import evaluate, write_metrics_csv
from .trainer import infer

COMMANDS = {
    "gen-data": "write synthetic SPET/LPET volumes and splits.tsv to --out",
    "pretrain": "Stage I: train the LPET and SPET DsMAEs on --in data; writes mae_L.ckpt, mae_S.ckpt to --out",
    "finetune": "Stage II on the paired training split of --in; writes s3pet_<variant>.ckpt to --out",
    "infer": "RPET volume from the LPET volume --in using --ckpt; writes --out",
    "eval": "metrics CSV to --out: --in pred.pvol with --ref, or --in data dir with --ckpt",
    "ablate": "all four variants over eval.ablation_seeds seeds on --in data; writes ablation.csv to --out",
    "gradcheck": "analytic vs finite-difference gradients on a tiny model",
}


def _epilog() -> str:
    width = max(len(k) for k in DEFAULTS)
    keys = "\n".join(f"  {k:<{width}}  {v!s:<14} {h}" for k, (v, h) in DEFAULTS.items())
    cmds = "\n".join(f"  {c:<10} {h}" for c, h in COMMANDS.items())
    return f"commands:\n{cmds}\n\nconfig keys (key = value lines, '#' comments):\n{keys}\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3pet", description=__doc__, epilog=_epilog(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=list(COMMANDS), metavar="command")
    parser.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
    parser.add_argument("--in", dest="inp", type=Path, help="input data directory or volume")
    parser.add_argument("--out", type=Path, help="output directory or file")
    parser.add_argument("--seed", type=int, help="overrides data.seed and train.seed")
    parser.add_argument("--ckpt", type=Path, help="stage-II checkpoint (infer, eval)")
    parser.add_argument("--ref", type=Path, help="reference volume (eval)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _need(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--in" if n == "inp" else f"--{n}" for n in missing)
        raise ConfigError(f"{args.command} needs {flags}")


def run(args: argparse.Namespace, cfg: Config) -> int:
    cmd = args.command
    if cmd == "gen-data":
        _need(args, "out")
        pipeline.gen_data(cfg, args.out)
    elif cmd == "pretrain":
        _need(args, "inp", "out")
        pipeline.pretrain(cfg, args.inp, args.out)
    elif cmd == "finetune":
        _need(args, "inp", "out")
        pipeline.finetune(cfg, args.inp, args.out)
    elif cmd == "infer":
        _need(args, "inp", "ckpt", "out")
        write_volume(args.out, infer(read_volume(args.inp), load_checkpoint(args.ckpt)))
    elif cmd == "eval":
        _need(args, "inp", "out")
        if args.ref is not None:
            pred, ref = read_volume(args.inp), read_volume(args.ref)
            rows = [evaluate(args.inp.stem, pred, ref, cfg["eval.max_val"])]
        else:
            _need(args, "ckpt")
            rows = pipeline.evaluate_dataset(load_checkpoint(args.ckpt), args.inp, cfg["eval.max_val"])
        write_metrics_csv(args.out, rows)
    elif cmd == "ablate":
        _need(args, "inp", "out")
        seeds = [cfg["train.seed"] + i for i in range(cfg["eval.ablation_seeds"])]
        runs = pipeline.ablate(cfg, args.inp, args.out, seeds)
        pipeline.write_ablation_csv(args.out / "ablation.csv", runs)
        pipeline.write_ablation_runs(args.out / "ablation_runs.csv", runs)
        print((args.out / "ablation.csv").read_text(), end="")
    elif cmd == "gradcheck":
        dtypes = {"float64": torch.float64, "float32": torch.float32}
        dtype = cfg["eval.gradcheck_dtype"]
        if dtype not in dtypes:
            raise ConfigError(f"eval.gradcheck_dtype must be float64 or float32, got {dtype!r}")
        report = gradient_check(dtype=dtypes[dtype], n_params=cfg["eval.gradcheck_params"], seed=cfg["train.seed"])
        print(report.format())
        return 0 if report.passed else 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.values["data.seed"] = args.seed
            cfg.values["train.seed"] = args.seed
        return run(args, cfg)
    except (ConfigError, FormatError, NumericError, ShapeError, FileNotFoundError, OSError) as exc:
        print(f"s3pet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
