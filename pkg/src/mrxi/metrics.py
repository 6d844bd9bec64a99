"""Image quality metrics and evaluation tables."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from .fileio import atomic_write_text, write_json


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, y, dynamic_range: float, window: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over all fully contained Gaussian windows.

    C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = ``dynamic_range``; local
    statistics are Gaussian-weighted (window ``window`` x ``window``,
    standard deviation ``sigma``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"ssim needs two 2D images of equal shape, got {x.shape} and {y.shape}")
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    if min(x.shape) < window:
        raise ValueError(f"images smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)

    def filt(a):
        return convolve2d(a, w, mode="valid")

    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def rel_l2(x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("rel_l2 needs arrays of equal size")
    ny = float(np.linalg.norm(y))
    if ny == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(x - y)) / ny


@dataclass
class EvaluationResult:
    ssim: float
    rel_l2: float
    misfit: float
    phantom: str
    method: str
    setup: str
    alpha: float | None = None
    dynamic_range: float = 1.0

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim {self.ssim} outside [-1, 1]")
        if self.rel_l2 < 0 or self.misfit < 0:
            raise ValueError("errors must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(recon, truth, misfit, phantom, method, setup, alpha=None, dynamic_range=None) -> EvaluationResult:
    truth = np.asarray(truth, dtype=float)
    L = float(truth.max()) if dynamic_range is None else float(dynamic_range)
    return EvaluationResult(
        ssim(recon, truth, L), rel_l2(recon, truth), float(misfit), phantom, method, setup, alpha, L
    )


def ssim_table(results, metric="ssim"):
    """Best value per (method, phantom); returns (methods, phantoms, rows)."""
    methods, phantoms = [], []
    best = {}
    for r in results:
        if r.method not in methods:
            methods.append(r.method)
        if r.phantom not in phantoms:
            phantoms.append(r.phantom)
        key = (r.method, r.phantom)
        val = getattr(r, metric)
        if key not in best:
            best[key] = val
        elif (val > best[key]) if metric == "ssim" else (val < best[key]):
            best[key] = val
    rows = [[best.get((m, p)) for p in phantoms] for m in methods]
    return methods, phantoms, rows


def table_csv(methods, phantoms, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["method"] + list(phantoms))
    for m, row in zip(methods, rows):
        wr.writerow([m] + ["" if v is None else f"{v:.6f}" for v in row])
    return buf.getvalue()


def write_table(path_stem, methods, phantoms, rows) -> list:
    csv_path = f"{path_stem}.csv"
    json_path = f"{path_stem}.json"
    atomic_write_text(csv_path, table_csv(methods, phantoms, rows))
    write_json(json_path, {"methods": methods, "phantoms": phantoms,
                           "values": {m: dict(zip(phantoms, row)) for m, row in zip(methods, rows)}})
    return [csv_path, json_path]
