"""Flat ``key = value`` run configuration with namespaced keys."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .datagen import DoseParams, PhantomSpec, SplitConfig
from .errors import ConfigError
from .network import ModelConfig
from .objectives import LossWeights
from .trainer import TrainConfig

# key -> (default, help). The default's type is the key's type.
DEFAULTS: dict[str, tuple[object, str]] = {
    "data.seed": (0, "phantom / dose-simulation seed"),
    "data.slice_size": (64, "slice height and width in pixels"),
    "data.depth": (8, "slices per volume"),
    "data.n_ellipses_min": (3, "minimum ellipsoids per phantom (body included)"),
    "data.n_ellipses_max": (6, "maximum ellipsoids per phantom"),
    "data.levels": ("0.25,0.35,0.5", "comma-separated intensity levels; the first is the body"),
    "data.background": (0.02, "background intensity in [0, 0.1]"),
    "data.drf": (100.0, "dose reduction factor"),
    "data.counts_per_unit": (1e3, "expected counts at intensity 1 for the standard dose"),
    "data.blur_sigma": (0.5, "in-plane Gaussian blur of the low-dose image, pixels"),
    "data.n_unpaired": (12, "unpaired SPET volumes"),
    "data.n_pretrain_lpet": (3, "LPET volumes used for pretraining"),
    "data.n_paired_train": (3, "paired volumes for fine-tuning"),
    "data.n_paired_eval": (2, "held-out paired volumes"),
    "model.d": (64, "token embedding width"),
    "model.T": (4, "transformer blocks per encoder"),
    "model.heads": (4, "attention heads"),
    "model.patch": (8, "patch size"),
    "model.keep_l": (0.15, "visible fraction for LPET masking"),
    "model.keep_s": (0.25, "visible fraction for SPET masking"),
    "model.transfer_depth": (1, "layers in the transfer module"),
    "train.seed": (0, "initialization / shuffling seed"),
    "train.batch_size": (32, "batch size"),
    "train.lr": (2e-4, "Adam learning rate"),
    "train.stage1_epochs": (300, "Stage-I epochs"),
    "train.stage1_max_steps": (300, "cap on Stage-I steps per dose (0 = no cap)"),
    "train.stage2_epochs": (1500, "Stage-II epochs (one step per epoch when the paired set fits one batch)"),
    "train.stage2_max_steps": (1500, "cap on Stage-II steps (0 = no cap)"),
    "train.augment": (True, "random rotations / flips of Stage-II batches"),
    "train.pretrained_dir": ("", "directory holding mae_L.ckpt / mae_S.ckpt (default: --out)"),
    "train.variant": ("full", "baseline | dsmae | dsmae_dkd | full"),
    "loss.gamma": (1.0, "weight of the master-branch L1 term"),
    "loss.lambda1": (1.0, "weight of the transfer loss"),
    "loss.lambda2": (5.0, "weight of the reconstruction loss"),
    "eval.max_val": (1.0, "PSNR peak value"),
    "eval.ablation_seeds": (1, "seeds run by the ablate command"),
    "eval.gradcheck_params": (24, "scalar parameters sampled per loss by gradcheck"),
    "eval.gradcheck_dtype": ("float64", "float64 | float32"),
}


def _coerce(key: str, raw: str, lineno: int):
    default = DEFAULTS[key][0]
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse {key} = {raw!r} as {type(default).__name__}") from None
    return raw


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: v for k, (v, _) in DEFAULTS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw: str, lineno: int = 0) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        self.values[key] = _coerce(key, raw, lineno)

    def text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))

    def phantom_spec(self) -> PhantomSpec:
        try:
            levels = tuple(float(t) for t in str(self["data.levels"]).split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"data.levels: bad list {self['data.levels']!r}") from None
        return PhantomSpec(
            n_ellipses=(self["data.n_ellipses_min"], self["data.n_ellipses_max"]),
            intensity_levels=levels,
            background=self["data.background"],
            slice_size=self["data.slice_size"],
            volume_depth=self["data.depth"],
            patch_size=self["model.patch"],
        )

    def dose_params(self) -> DoseParams:
        return DoseParams(self["data.drf"], self["data.counts_per_unit"], self["data.blur_sigma"])

    def split_config(self) -> SplitConfig:
        return SplitConfig(self["data.n_unpaired"], self["data.n_pretrain_lpet"],
                           self["data.n_paired_train"], self["data.n_paired_eval"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            slice_size=self["data.slice_size"], patch=self["model.patch"], dim=self["model.d"],
            depth=self["model.T"], heads=self["model.heads"], keep_l=self["model.keep_l"],
            keep_s=self["model.keep_s"], transfer_depth=self["model.transfer_depth"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self["loss.gamma"], self["loss.lambda1"], self["loss.lambda2"])

    def train_config(self, stage: str) -> TrainConfig:
        n = "1" if stage == "I" else "2"
        return TrainConfig(
            epochs=self[f"train.stage{n}_epochs"], max_steps=self[f"train.stage{n}_max_steps"],
            batch_size=self["train.batch_size"], lr=self["train.lr"], seed=self["train.seed"],
            weights=self.loss_weights(), augment=stage == "II" and self["train.augment"],
        )


def parse_config_text(text: str) -> Config:
    cfg = Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, eq, raw = s.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {s!r}")
        cfg.set(key.strip(), raw.strip(), lineno)
    return cfg


def parse_config(path) -> Config:
    if path is None:
        return Config()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
