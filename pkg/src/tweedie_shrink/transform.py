"""Rank-based normal scores, robust scale and standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import DegenerateScale, EmptyInput, InvalidConfig, NonFiniteValue
from .ingest import Sample, quantile

__all__ = [
    "ScoreSet",
    "RobustScale",
    "ecdf_probabilities",
    "inverse_normal",
    "normal_cdf",
    "to_z_scores",
    "robust_scale",
    "standardize",
    "read_scoreset",
]

PLOTTING_POSITIONS = ("hazen", "weibull")


@dataclass(frozen=True)
class ScoreSet:
    """Scores on the z scale plus the parameters that produced them.

    ``provenance`` is one of ``"rank-inverse-normal"``, ``"standardization"``
    or ``"posterior-median"``. ``original = score * scale + center``.
    """

    scores: np.ndarray
    center: float = 0.0
    scale: float = 1.0
    provenance: str = "rank-inverse-normal"
    plotting_position: str | None = None

    def __post_init__(self):
        s = np.array(np.ravel(self.scores), dtype=float)
        if not np.all(np.isfinite(s)):
            raise NonFiniteValue("scores must be finite")
        if not self.scale > 0:
            raise DegenerateScale(f"scale must be positive, got {self.scale}")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "center", float(self.center))
        object.__setattr__(self, "scale", float(self.scale))

    def __len__(self) -> int:
        return int(self.scores.size)

    def invert(self, values=None) -> np.ndarray:
        """Map (by default) the stored scores back through the standardization."""
        v = self.scores if values is None else np.asarray(values, dtype=float)
        return v * self.scale + self.center

    @property
    def tag(self) -> tuple:
        return (self.provenance, self.center, self.scale)

    def metadata(self) -> dict:
        return {
            "center": self.center,
            "scale": self.scale,
            "provenance": self.provenance,
            "plotting_position": self.plotting_position,
        }

    def to_csv(self, path: str | Path) -> None:
        """Write ``index,score`` plus a JSON sidecar with center/scale."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "score"])
            for i, s in enumerate(self.scores):
                w.writerow([i, repr(float(s))])
        path.with_suffix(".json").write_text(
            json.dumps(self.metadata(), indent=2) + "\n", encoding="utf-8"
        )


def read_scoreset(path: str | Path) -> ScoreSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    scores = np.array([float(r["score"]) for r in rows])
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return ScoreSet(scores, **meta)


@dataclass(frozen=True)
class RobustScale:
    s_r: float
    p16: float
    p84: float


def ecdf_probabilities(values: Sequence[float], method: str = "hazen") -> np.ndarray:
    """Plotting-position probabilities, strictly inside (0, 1).

    Hazen: ``(r - 0.5) / n``; Weibull: ``r / (n + 1)``. Ties share their
    average rank.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("ecdf of an empty sequence")
    r = rankdata(x, method="average")
    n = x.size
    if method == "hazen":
        return (r - 0.5) / n
    if method == "weibull":
        return r / (n + 1)
    raise InvalidConfig(f"unknown plotting position {method!r}; use one of {PLOTTING_POSITIONS}")


# Acklam's rational approximation to the normal quantile (rel. error < 1.2e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT_2PI = np.sqrt(2 * np.pi)


def _acklam_lower(q: np.ndarray) -> np.ndarray:
    """Initial guess for Phi^-1(q), 0 < q <= 0.5."""
    x = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        t = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        x[tail] = num / den
    mid = ~tail
    if np.any(mid):
        u = q[mid] - 0.5
        r = u * u
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    return x


def normal_cdf(x):
    return ndtr(x)


def inverse_normal(p):
    """Standard normal quantile function.

    Acklam's approximation refined by one Halley step against ``ndtr``.
    The computation runs in the lower tail on ``min(p, 1 - p)`` (``1 - p``
    is exact for p >= 0.5), so accuracy holds near both ends.

    Raises ``ValueError`` unless every ``p`` lies in the open interval (0, 1).
    """
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if not np.all((p > 0) & (p < 1)):
        raise ValueError("inverse_normal requires 0 < p < 1")
    upper = p > 0.5
    q = np.where(upper, 1.0 - p, p)
    x = _acklam_lower(q)
    # Halley step; the density is computed directly so it stays representable deep in the tail.
    pdf = np.exp(-0.5 * x * x) / _SQRT_2PI
    u = (ndtr(x) - q) / pdf
    x = x - u / (1.0 + 0.5 * x * u)
    x[q == 0.5] = 0.0
    x = np.where(upper, -x, x)
    return float(x[0]) if scalar else x


def to_z_scores(sample: Sample | Sequence[float], plotting_position: str = "hazen") -> ScoreSet:
    """Normal scores ``Phi^-1(F_n(x))`` in input order."""
    x = sample.values if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    if np.size(x) < 2:
        raise EmptyInput("need at least 2 values for normal scores")
    p = ecdf_probabilities(x, plotting_position)
    return ScoreSet(
        inverse_normal(p),
        center=0.0,
        scale=1.0,
        provenance="rank-inverse-normal",
        plotting_position=plotting_position,
    )


def robust_scale(values: Sequence[float]) -> RobustScale:
    """Half the distance between the 16th and 84th percentiles (type-7)."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise EmptyInput("robust scale needs at least 2 values")
    p16, p84 = (float(v) for v in quantile(x, [0.16, 0.84]))
    s_r = (p84 - p16) / 2
    if not s_r > 0:
        raise DegenerateScale(f"16th and 84th percentiles coincide ({p16})")
    return RobustScale(s_r=s_r, p16=p16, p84=p84)


def standardize(
    scores: Sequence[float] | ScoreSet,
    center: float,
    scale: float,
    provenance: str = "standardization",
) -> ScoreSet:
    """``(x - center) / scale``, keeping center/scale for inversion."""
    if not scale > 0:
        raise DegenerateScale(f"scale must be positive, got {scale}")
    x = scores.scores if isinstance(scores, ScoreSet) else np.asarray(scores, dtype=float)
    return ScoreSet((x - center) / scale, center=center, scale=scale, provenance=provenance)
