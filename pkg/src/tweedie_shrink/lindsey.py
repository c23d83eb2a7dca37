"""Lindsey's method: log-density estimation by polynomial Poisson regression.

Bin counts ``c_k`` are modelled as independent Poisson variables with
``log E[c_k] = sum_j beta_j t_k^j``, where ``t_k`` is the bin midpoint mapped
affinely onto [-1, 1]. The fitted log-intensity differs from the log-density
by a constant, so its derivatives are the derivatives of the log-density.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.special import gammaln

from .errors import EmptyInput, InvalidConfig, NonConvergence, RankDeficient
from .ingest import BinScheme, Histogram, histogram

__all__ = [
    "LindseyConfig",
    "LogDensityFit",
    "fit_poisson_poly",
    "select_order",
    "argmin_aic",
    "log_density_derivs",
    "write_aic_table",
]


@dataclass(frozen=True)
class LindseyConfig:
    n_bins: int = 100
    orders: tuple[int, ...] = (2, 3, 4, 5, 6, 7)
    range: tuple[float, float] | None = None
    irls_tol: float = 1e-10
    irls_max_iter: int = 100

    def __post_init__(self):
        orders = tuple(int(j) for j in self.orders)
        object.__setattr__(self, "orders", orders)
        if self.range is not None:
            object.__setattr__(self, "range", tuple(float(v) for v in self.range))
        if not orders or min(orders) < 1:
            raise InvalidConfig("orders must be a nonempty set of integers >= 1")
        if self.n_bins < max(orders) + 2:
            raise InvalidConfig(f"n_bins={self.n_bins} too small for order {max(orders)}")
        if not self.irls_tol > 0 or self.irls_max_iter < 1:
            raise InvalidConfig("irls_tol must be positive and irls_max_iter >= 1")

    def scheme(self) -> BinScheme:
        lo, hi = self.range if self.range is not None else (None, None)
        return BinScheme.count(self.n_bins, lo, hi)

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "orders": list(self.orders),
            "range": list(self.range) if self.range is not None else None,
            "irls_tol": self.irls_tol,
            "irls_max_iter": self.irls_max_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LindseyConfig":
        d = dict(d)
        if d.get("orders") is not None:
            d["orders"] = tuple(d["orders"])
        if d.get("range") is not None:
            d["range"] = tuple(d["range"])
        return cls(**d)


@dataclass(frozen=True)
class LogDensityFit:
    """A fitted polynomial log-intensity on the scaled basis ``t = (x - center) / halfwidth``."""

    coeffs: np.ndarray
    basis_center: float
    basis_halfwidth: float
    order: int
    log_lik: float
    aic: float
    deviance: float
    histogram: Histogram
    converged: bool
    n_iter: int = 0
    deviance_path: tuple[float, ...] = ()
    score_tag: tuple | None = field(default=None, compare=False)

    @property
    def support(self) -> tuple[float, float]:
        """Range covered by the fitted histogram."""
        return float(self.histogram.edges[0]), float(self.histogram.edges[-1])

    def _t(self, z):
        return (np.asarray(z, dtype=float) - self.basis_center) / self.basis_halfwidth

    def log_intensity(self, z):
        """Fitted eta(z): log expected count per bin."""
        return np.polynomial.polynomial.polyval(self._t(z), self.coeffs)

    def intensity(self, z):
        return np.exp(self.log_intensity(z))

    def fitted_counts(self) -> np.ndarray:
        return self.intensity(self.histogram.midpoints)

    def derivatives(self, z):
        return log_density_derivs(self, z)

    def to_dict(self) -> dict:
        h = self.histogram
        return {
            "order": self.order,
            "coeffs": [float(c) for c in self.coeffs],
            "basis_center": self.basis_center,
            "basis_halfwidth": self.basis_halfwidth,
            "log_lik": self.log_lik,
            "aic": self.aic,
            "deviance": self.deviance,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "histogram": {
                "edges": [float(e) for e in h.edges],
                "counts": [int(c) for c in h.counts],
                "n_below": h.n_below,
                "n_above": h.n_above,
            },
            "score_tag": list(self.score_tag) if self.score_tag is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogDensityFit":
        h = d["histogram"]
        return cls(
            coeffs=np.array(d["coeffs"], dtype=float),
            basis_center=d["basis_center"],
            basis_halfwidth=d["basis_halfwidth"],
            order=d["order"],
            log_lik=d["log_lik"],
            aic=d["aic"],
            deviance=d["deviance"],
            histogram=Histogram(np.array(h["edges"]), np.array(h["counts"]), h["n_below"], h["n_above"]),
            converged=d["converged"],
            n_iter=d.get("n_iter", 0),
            score_tag=tuple(d["score_tag"]) if d.get("score_tag") is not None else None,
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "LogDensityFit":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _poisson_deviance(c: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(c > 0, c * np.log(c / mu), 0.0)
    return float(2.0 * np.sum(term - (c - mu)))


def fit_poisson_poly(
    hist: Histogram,
    order: int,
    config: LindseyConfig | None = None,
    *,
    basis_center: float | None = None,
    basis_halfwidth: float | None = None,
    strict: bool = False,
) -> LogDensityFit:
    """Maximum-likelihood polynomial Poisson regression on histogram counts.

    Fitted by IRLS with step-halving whenever the deviance would increase.
    By default the basis maps the first and last midpoints to -1 and 1.
    A fit that does not converge within ``irls_max_iter`` comes back with
    ``converged=False``, or raises ``NonConvergence`` when ``strict``.
    """
    cfg = config or LindseyConfig(n_bins=max(hist.n_bins, order + 2), orders=(order,))
    c = hist.counts.astype(float)
    x = hist.midpoints
    k = c.size
    if order < 0 or k < order + 1:
        raise RankDeficient(f"{k} bins cannot support a degree-{order} polynomial")
    if c.sum() == 0:
        raise EmptyInput("histogram has no counts")
    if basis_center is None:
        basis_center = float((x[0] + x[-1]) / 2)
    if basis_halfwidth is None:
        basis_halfwidth = float((x[-1] - x[0]) / 2)
    if not basis_halfwidth > 0:
        raise RankDeficient("basis half-width must be positive")

    t = (x - basis_center) / basis_halfwidth
    X = np.vander(t, order + 1, increasing=True)
    if np.linalg.matrix_rank(X) < order + 1:
        raise RankDeficient("design matrix is rank deficient")

    beta = np.zeros(order + 1)
    beta[0] = math.log(c.mean() + 0.5)
    eta = X @ beta
    mu = np.exp(eta)
    dev = _poisson_deviance(c, mu)
    path = [dev]
    converged = False
    it = 0
    for it in range(1, cfg.irls_max_iter + 1):
        # empty tail bins can drive mu to underflow when the MLE runs off to infinity
        mu_w = np.maximum(mu, np.finfo(float).tiny)
        z = eta + (c - mu_w) / mu_w
        sw = np.sqrt(mu_w)
        new_beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = new_beta - beta
        for _ in range(60):
            cand = beta + step
            eta_c = X @ cand
            with np.errstate(over="ignore"):
                mu_c = np.exp(eta_c)  # an overflowing candidate gets infinite deviance and is halved
            dev_c = _poisson_deviance(c, mu_c) if np.all(np.isfinite(mu_c)) else math.inf
            # slack for rounding so the last Newton steps are not halved away
            if dev_c <= dev + 1e-12 * (1.0 + dev):
                break
            step = step / 2
        else:
            # no descent left: accept as converged only if the Newton step was negligible
            full = new_beta - beta
            converged = bool(np.linalg.norm(full) <= 1e-8 * (1.0 + np.linalg.norm(beta)))
            break
        change = abs(dev - dev_c)
        small_step = np.max(np.abs(step)) <= 1e-10 * (1.0 + np.max(np.abs(beta)))
        beta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        path.append(dev)
        if change < cfg.irls_tol and small_step:
            converged = True
            break

    if not converged and strict:
        raise NonConvergence(f"IRLS did not converge for order {order} in {it} iterations")
    log_lik = float(np.sum(c * eta - mu - gammaln(c + 1)))
    return LogDensityFit(
        coeffs=beta,
        basis_center=basis_center,
        basis_halfwidth=basis_halfwidth,
        order=order,
        log_lik=log_lik,
        aic=2 * (order + 1) - 2 * log_lik,
        deviance=dev,
        histogram=hist,
        converged=converged,
        n_iter=it,
        deviance_path=tuple(path),
    )


def argmin_aic(table: Mapping[int, float]) -> int:
    """Order with the smallest AIC; exact ties go to the lower order."""
    if not table:
        raise NonConvergence("no candidate fits")
    return min(table, key=lambda j: (table[j], j))


def select_order(
    hist: Histogram | Iterable[float],
    config: LindseyConfig | None = None,
    score_tag: tuple | None = None,
) -> tuple[LogDensityFit, dict[int, float], dict[int, LogDensityFit]]:
    """Fit every candidate order and keep the converged one with least AIC.

    ``hist`` may also be raw values, binned with ``config``'s scheme.
    Returns the chosen fit, the AIC table for all attempted orders and the
    fits themselves.
    """
    cfg = config or LindseyConfig()
    if not isinstance(hist, Histogram):
        hist = histogram(np.asarray(hist, dtype=float), cfg.scheme())
    fits: dict[int, LogDensityFit] = {}
    for j in sorted(cfg.orders):
        fit = fit_poisson_poly(hist, j, cfg)
        if score_tag is not None:
            object.__setattr__(fit, "score_tag", tuple(score_tag))
        fits[j] = fit
    table = {j: f.aic for j, f in fits.items()}
    ok = {j: f.aic for j, f in fits.items() if f.converged}
    if not ok:
        raise NonConvergence("no candidate order converged")
    return fits[argmin_aic(ok)], table, fits


def log_density_derivs(fit: LogDensityFit, z):
    """First and second derivatives of the fitted log-density at ``z``."""
    if not fit.converged:
        raise NonConvergence("derivatives of a non-converged fit")
    P = np.polynomial.polynomial
    h = fit.basis_halfwidth
    t = fit._t(z)
    d1 = P.polyval(t, P.polyder(fit.coeffs, 1)) / h
    d2 = P.polyval(t, P.polyder(fit.coeffs, 2)) / (h * h) if fit.order >= 2 else np.zeros_like(t)
    if np.ndim(z) == 0:
        return float(d1), float(d2)
    return d1, d2


def write_aic_table(fits: Mapping[int, LogDensityFit], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["order", "aic", "converged"])
        for j in sorted(fits):
            w.writerow([j, repr(float(fits[j].aic)), str(fits[j].converged).lower()])
