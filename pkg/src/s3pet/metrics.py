"""PSNR, SSIM and NMSE on restacked volumes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .datagen import ImageVolume
from .errors import ConfigError, ShapeError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    case: str
    psnr: float
    ssim: float
    nmse: float


def _arr(v) -> np.ndarray:
    data = v.data if isinstance(v, ImageVolume) else np.asarray(v)
    return data.astype(np.float64)


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(pred), _arr(ref)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def restack(slices: Sequence[np.ndarray]) -> ImageVolume:
    if len(slices) == 0:
        raise ShapeError("need at least one slice")
    shapes = {np.shape(s) for s in slices}
    if len(shapes) != 1:
        raise ShapeError(f"heterogeneous slice shapes {sorted(shapes)}")
    return ImageVolume(np.stack([np.asarray(s, dtype=np.float32) for s in slices]))


def psnr(pred, ref, max_val: float = 1.0) -> float:
    """Peak SNR in dB over all voxels; ``inf`` for identical inputs."""
    a, b = _pair(pred, ref)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_slice(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over all full (valid) Gaussian windows of one 2D slice."""
    if a.shape[0] < SSIM_WIN or a.shape[1] < SSIM_WIN:
        raise ConfigError(f"slice {a.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    w = gaussian_window()

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, w.shape), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(pred, ref, data_range: float = 1.0) -> float:
    """Per-slice 2D SSIM averaged over the depth axis."""
    a, b = _pair(pred, ref)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim == 4:
        a, b = a[..., 0], b[..., 0]
    return float(np.mean([ssim_slice(x, y, data_range) for x, y in zip(a, b)]))


def nmse(pred, ref) -> float:
    a, b = _pair(pred, ref)
    denom = np.sum(b ** 2)
    if denom == 0:
        raise ConfigError("NMSE undefined for an all-zero reference")
    return float(np.sum((a - b) ** 2) / denom)


def evaluate(case: str, pred, ref, max_val: float = 1.0) -> MetricReport:
    return MetricReport(case, psnr(pred, ref, max_val), ssim(pred, ref), nmse(pred, ref))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def write_metrics_csv(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "psnr", "ssim", "nmse"])
        for r in reports:
            w.writerow([r.case, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.nmse)])


def read_metrics_csv(path) -> list[MetricReport]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricReport(r["case"], float(r["psnr"]), float(r["ssim"]), float(r["nmse"])) for r in rows]
