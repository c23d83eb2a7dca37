"""Synthetic datasets with known latent locations."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["conjugate_dataset", "bimodal_dataset", "write_dataset"]

BIMODAL_WEIGHTS = (0.7, 0.3)
BIMODAL_MEANS = (-0.5, 1.5)
BIMODAL_SD = 0.3
BIMODAL_NOISE_SCALE = 0.5
BIMODAL_NU = 4.0


def conjugate_dataset(n: int = 10_000, seed: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """``mu ~ N(0, 1)``, ``y | mu ~ N(mu, 1)``; returns ``(mu, y)``."""
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(n)
    return mu, mu + rng.standard_normal(n)


def bimodal_dataset(n: int = 5_000, seed: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """Two-component normal mixture for mu, t4 noise with scale 0.5."""
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < BIMODAL_WEIGHTS[1]
    mu = np.where(comp, BIMODAL_MEANS[1], BIMODAL_MEANS[0]) + BIMODAL_SD * rng.standard_normal(n)
    y = mu + BIMODAL_NOISE_SCALE * rng.standard_t(BIMODAL_NU, n)
    return mu, y


def write_dataset(path: str | Path, y: np.ndarray, column: str = "y") -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([column])
        for v in y:
            w.writerow([repr(float(v))])
    return path
