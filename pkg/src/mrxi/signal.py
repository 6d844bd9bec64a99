"""Additive Gaussian noise at a prescribed SNR.

SNR convention: ``10 log10(P_signal / P_noise)`` with power taken as the mean
square over all channels. Noise is drawn from numpy's PCG64 bit generator
seeded with the given integer, so a (data, snr, seed) triple reproduces
across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import read_container, read_vector_csv, write_container, write_json, write_vector_csv


class ZeroSignalError(ValueError):
    pass


@dataclass
class Measurement:
    data: np.ndarray
    clean: np.ndarray | None = None
    snr_db: float | None = None
    seed: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if not np.all(np.isfinite(self.data)):
            raise ValueError("measurement entries must be finite")
        if self.snr_db is not None and self.seed is None:
            raise ValueError("a recorded SNR requires a recorded seed")

    @property
    def noise(self) -> np.ndarray | None:
        return None if self.clean is None else self.data - self.clean

    def sidecar(self) -> dict:
        snr = self.snr_db
        return {
            "length": int(self.data.size),
            "snr_db": None if snr is None else ("inf" if math.isinf(snr) else snr),
            "seed": self.seed,
            "snr_convention": "mean-square power over all channels",
            "generator": "numpy PCG64",
        }


def noise_sigma(g, snr_db: float) -> float:
    g = np.asarray(g, dtype=float).ravel()
    power = float(np.mean(g * g))
    return math.sqrt(power * 10.0 ** (-snr_db / 10.0))


def add_gaussian_noise(g, snr_db: float, seed: int) -> Measurement:
    """Return ``g + n`` with ``n ~ N(0, sigma^2 I)``, sigma set by ``snr_db``.

    ``snr_db = inf`` disables noise and returns ``g`` unchanged.
    """
    g = np.asarray(g, dtype=float).ravel()
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    if not np.any(g):
        raise ZeroSignalError("SNR is undefined for an all-zero signal")
    if math.isinf(snr_db):
        return Measurement(g.copy(), g.copy(), snr_db, seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    n = rng.standard_normal(g.size) * noise_sigma(g, snr_db)
    return Measurement(g + n, g.copy(), float(snr_db), int(seed))


def empirical_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=float)
    n = np.asarray(noisy, dtype=float) - clean
    return 10.0 * math.log10(float(clean @ clean) / float(n @ n))


def save_measurement(path, m: Measurement, fmt: str = "csv") -> list:
    """Write data as CSV or container plus a JSON sidecar; returns written paths."""
    path = Path(path)
    if fmt == "csv":
        write_vector_csv(path, m.data)
    elif fmt == "bin":
        write_container(path, m.data, [{"kind": "measurement"}, m.sidecar()])
    else:
        raise ValueError(f"unknown measurement format {fmt!r}")
    side = path.with_suffix(path.suffix + ".json")
    write_json(side, m.sidecar())
    return [path, side]


def load_measurement(path) -> Measurement:
    path = Path(path)
    side = path.with_suffix(path.suffix + ".json")
    meta = {}
    if side.exists():
        meta = json.loads(side.read_text())
    if path.read_bytes()[:4] == b"MRXK":
        data, _ = read_container(path)
        data = data[:, 0]
    else:
        data = read_vector_csv(path)
    snr = meta.get("snr_db")
    snr = math.inf if snr == "inf" else snr
    return Measurement(data, None, snr, meta.get("seed"))
