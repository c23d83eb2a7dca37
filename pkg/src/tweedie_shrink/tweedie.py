"""Tweedie's formula and the permanent/temporary variance split.

For ``z ~ N(mu, sigma2)`` with marginal log-density ``l``::

    E[mu | z]   = z + sigma2 * l'(z)
    Var[mu | z] = sigma2 * (1 + sigma2 * l''(z))

Any object with ``converged`` and ``derivatives(z) -> (l1, l2)`` can supply
the log-density; :class:`~tweedie_shrink.lindsey.LogDensityFit` is the usual
one and :class:`GaussianLogDensity` gives the exact normal marginal.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DegenerateScale, EmptyInput, InvalidConfig, NonConvergence, ScaleMismatch
from .ingest import Sample, SummaryStats, quantile, summary_stats
from .transform import ScoreSet, normal_cdf

__all__ = [
    "TweedieConfig",
    "CorrectionResult",
    "GaussianLogDensity",
    "correct_mean",
    "correct_variance",
    "correct_scores",
    "decompose_variance",
    "back_transform_linear",
    "back_transform_quantile",
]


class LogDensity(Protocol):
    converged: bool

    def derivatives(self, z): ...


@dataclass(frozen=True)
class TweedieConfig:
    sigma2: float = 1.0
    clamp_negative_variance: bool = True
    include_extrapolated: bool = True

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise InvalidConfig(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class GaussianLogDensity:
    """Exact log-density of N(mean, var)."""

    mean: float = 0.0
    var: float = 1.0
    converged: bool = True
    support: tuple[float, float] = (-math.inf, math.inf)

    def derivatives(self, z):
        z = np.asarray(z, dtype=float)
        l1 = -(z - self.mean) / self.var
        l2 = np.full_like(z, -1.0 / self.var)
        if z.ndim == 0:
            return float(l1), float(l2)
        return l1, l2


def _check(fit) -> None:
    if not getattr(fit, "converged", False):
        raise NonConvergence("log-density fit did not converge")


def correct_mean(z, fit: LogDensity, config: TweedieConfig | None = None):
    """``z + sigma2 * l'(z)``."""
    cfg = config or TweedieConfig()
    _check(fit)
    l1, _ = fit.derivatives(z)
    return z + cfg.sigma2 * l1


def correct_variance(z, fit: LogDensity, config: TweedieConfig | None = None):
    """``sigma2 * (1 + sigma2 * l''(z))`` and a flag for clamped values.

    With clamping on, negative values become 0 and are flagged.
    """
    cfg = config or TweedieConfig()
    _check(fit)
    _, l2 = fit.derivatives(z)
    var = cfg.sigma2 * (1.0 + cfg.sigma2 * np.asarray(l2, dtype=float))
    clamped = (var < 0) if cfg.clamp_negative_variance else np.zeros_like(var, dtype=bool)
    var = np.where(clamped, 0.0, var)
    if np.ndim(z) == 0:
        return float(var), bool(clamped)
    return var, clamped


def decompose_variance(corrected_sd: float, original_sd: float, intermediate_sd: float):
    """Permanent share ``corrected/original`` and reduction ``1 - corrected/intermediate``."""
    if not (original_sd > 0 and intermediate_sd > 0):
        raise DegenerateScale("reference standard deviations must be positive")
    return corrected_sd / original_sd, 1.0 - corrected_sd / intermediate_sd


def back_transform_linear(corrected_score_mean, original_center: float, original_scale: float):
    if not original_scale > 0:
        raise DegenerateScale(f"scale must be positive, got {original_scale}")
    if np.ndim(corrected_score_mean):
        corrected_score_mean = np.asarray(corrected_score_mean, dtype=float)
    return original_center + corrected_score_mean * original_scale


def back_transform_quantile(corrected_score, sample: Sample | np.ndarray):
    """Empirical quantile of ``sample`` at ``Phi(corrected_score)`` (type-7)."""
    values = sample.values if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    if values.size == 0:
        raise EmptyInput("back-transform against an empty sample")
    out = quantile(values, normal_cdf(np.asarray(corrected_score, dtype=float)))
    return float(out) if np.ndim(corrected_score) == 0 else out


@dataclass(frozen=True)
class CorrectionResult:
    """Per-unit Tweedie corrections of a standardized score set.

    ``summary`` describes ``corrected_means_unstandardized`` (the scale the
    inputs had before standardization). ``permanent_share`` is the sd of
    those values over ``reference_sd``.
    """

    corrected_means: np.ndarray
    corrected_vars: np.ndarray
    clamped: np.ndarray
    input_scores: ScoreSet
    corrected_means_unstandardized: np.ndarray
    extrapolated: np.ndarray
    summary: SummaryStats
    permanent_share: float
    sd_reduction_vs_input: float
    reference_sd: float
    sigma2: float

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "input_score", "corrected_mean", "corrected_var", "clamped", "extrapolated"])
            for i in range(len(self.corrected_means)):
                w.writerow([
                    i,
                    repr(float(self.input_scores.scores[i])),
                    repr(float(self.corrected_means[i])),
                    repr(float(self.corrected_vars[i])),
                    str(bool(self.clamped[i])).lower(),
                    str(bool(self.extrapolated[i])).lower(),
                ])

    def summary_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "corrected_mean_standardized": float(np.mean(self.corrected_means)),
            "corrected_sd_standardized": float(np.std(self.corrected_means, ddof=1)),
            "summary": self.summary.as_dict(),
            "permanent_share": self.permanent_share,
            "sd_reduction_vs_input": self.sd_reduction_vs_input,
            "reference_sd": self.reference_sd,
            "n_clamped": int(self.clamped.sum()),
            "n_extrapolated": int(self.extrapolated.sum()),
        }

    def write_summary_json(self, path: str | Path, extra: dict | None = None) -> None:
        d = self.summary_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


def correct_scores(
    scores: ScoreSet,
    fit: LogDensity,
    config: TweedieConfig | None = None,
    reference_sd: float | None = None,
) -> CorrectionResult:
    """Apply the Tweedie correction to every unit of a standardized score set.

    ``reference_sd`` is the sd of the original z-scores, the denominator
    of the permanent share; it defaults to the sd of the unstandardized
    inputs. If the fit records the score set it was estimated on, that
    record must match ``scores``.
    """
    cfg = config or TweedieConfig()
    _check(fit)
    tag = getattr(fit, "score_tag", None)
    if tag is not None and tuple(tag) != scores.tag:
        raise ScaleMismatch(f"fit was estimated on {tuple(tag)}, scores are {scores.tag}")

    z = scores.scores
    means = correct_mean(z, fit, cfg)
    var, clamped = correct_variance(z, fit, cfg)
    lo, hi = getattr(fit, "support", (-math.inf, math.inf))
    extrapolated = (z < lo) | (z > hi)

    unstd = scores.invert(means)
    keep = np.ones_like(extrapolated) if cfg.include_extrapolated else ~extrapolated
    if keep.sum() < 2:
        raise EmptyInput("fewer than 2 corrected units to summarize")
    inputs_unstd = scores.invert()
    if reference_sd is None:
        reference_sd = float(np.std(inputs_unstd, ddof=1))
    corrected_sd = float(np.std(unstd[keep], ddof=1))
    input_sd = float(np.std(inputs_unstd[keep], ddof=1))
    share, reduction = decompose_variance(corrected_sd, reference_sd, input_sd)
    return CorrectionResult(
        corrected_means=means,
        corrected_vars=var,
        clamped=clamped,
        input_scores=scores,
        corrected_means_unstandardized=unstd,
        extrapolated=extrapolated,
        summary=summary_stats(unstd[keep]),
        permanent_share=share,
        sd_reduction_vs_input=reduction,
        reference_sd=float(reference_sd),
        sigma2=cfg.sigma2,
    )
