"""Hierarchical Student-t location model fitted by Gibbs sampling.

Model, for scores y_1..y_n::

    y_i | mu_i, sigma ~ t_nu(mu_i, sigma)
    mu_i | mu0, tau0  ~ N(mu0, 1 / tau0)
    log(sigma)        ~ Uniform(log_sigma_lower, log_sigma_upper)
    mu0               ~ N(hyper_loc_mean, hyper_loc_var)
    tau0              ~ Gamma(hyper_prec_shape, rate=hyper_prec_rate)

The t likelihood is written as a normal scale mixture,
``y_i ~ N(mu_i, sigma^2 / w_i)`` with ``w_i ~ Gamma(nu/2, rate=nu/2)``,
which makes every full conditional a standard distribution.

The scale prior is flat in log(sigma) on a bounded interval, as it would
have to be written in BUGS. Unbounded, it gives an improper posterior:
with one observation per mu_i the marginal likelihood tends to a positive
constant as sigma -> 0.

Plain Gibbs on this centered hierarchy mixes slowly in tau0 (the funnel
where all mu_i sit on mu0). By default each sweep therefore also updates
(log sigma^2, log tau0) by slice sampling from their conditional with the
mu_i integrated out, and then redraws mu from its exact conditional. The
pair of steps is a blocked update of (sigma^2, tau0, mu) and leaves the
posterior unchanged.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaincinv

from .errors import DegenerateScale, InvalidConfig, NonFiniteValue, TooFewDraws
from .transform import ScoreSet, robust_scale

__all__ = [
    "ModelConfig",
    "PosteriorDraws",
    "PosteriorSummary",
    "run_mcmc",
    "posterior_exceedance",
    "posterior_median",
    "summarize",
    "split_rhat",
    "effective_sample_size",
    "write_traces",
    "read_traces",
    "thread_cap",
]

_CHUNK = 256


def thread_cap() -> int:
    """Parallelism cap from ``TWEEDIE_SHRINK_THREADS`` (default 1)."""
    raw = os.environ.get("TWEEDIE_SHRINK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ModelConfig:
    """Sampler settings. ``nu = inf`` gives the Gaussian likelihood.

    The ``*_fixed`` fields pin a parameter at the given value instead of
    sampling it; they exist for checking the sampler against closed forms.
    """

    nu: float = 4.0
    n_iter: int = 11_000
    n_burn: int = 1_000
    n_chains: int = 2
    seed: int = 0
    thin: int = 1
    hyper_loc_mean: float = 0.0
    hyper_loc_var: float = 1_000_000.0
    hyper_prec_shape: float = 0.01
    hyper_prec_rate: float = 0.01
    sigma_fixed: float | None = None
    mu0_fixed: float | None = None
    tau0_fixed: float | None = None
    collapsed_variance_step: bool = True
    log_sigma_lower: float = -10.0
    log_sigma_upper: float = 10.0

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidConfig("nu must be positive")
        if not (0 <= self.n_burn < self.n_iter):
            raise InvalidConfig("need 0 <= n_burn < n_iter")
        if self.n_chains < 1 or self.thin < 1:
            raise InvalidConfig("n_chains and thin must be >= 1")
        if not (self.hyper_prec_shape > 0 and self.hyper_prec_rate > 0 and self.hyper_loc_var > 0):
            raise InvalidConfig("hyperprior shape, rate and variance must be positive")
        if not self.log_sigma_lower < self.log_sigma_upper:
            raise InvalidConfig("need log_sigma_lower < log_sigma_upper")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        for name in ("sigma_fixed", "tau0_fixed"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidConfig(f"{name} must be positive")

    @property
    def n_kept(self) -> int:
        """Kept draws per chain."""
        return len(range(self.n_burn, self.n_iter, self.thin))

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.nu):
            d["nu"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "nu" in d:
            d["nu"] = float(d["nu"])
        return cls(**d)


@dataclass(frozen=True)
class PosteriorDraws:
    """Kept draws, chains stacked along the first axis.

    ``mu_draws`` is stored as float32 to keep memory at 4 bytes per
    draw and unit; everything derived from it is computed in float64.
    """

    mu_draws: np.ndarray
    sigma_draws: np.ndarray
    mu0_draws: np.ndarray
    tau0_draws: np.ndarray
    chain_ids: np.ndarray
    config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        rows = self.mu_draws.shape[0]
        for name in ("sigma_draws", "mu0_draws", "tau0_draws", "chain_ids"):
            if getattr(self, name).shape[0] != rows:
                raise ValueError(f"{name} has inconsistent length")
        if np.any(self.sigma_draws <= 0) or np.any(self.tau0_draws <= 0):
            raise ValueError("sigma and tau0 draws must be positive")

    @property
    def n_units(self) -> int:
        return int(self.mu_draws.shape[1])

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_ids).size)

    def by_chain(self, values: np.ndarray) -> np.ndarray:
        """Reshape a stacked draw array to (chain, draw, ...)."""
        c = self.n_chains
        return values.reshape((c, values.shape[0] // c) + values.shape[1:])


@dataclass(frozen=True)
class PosteriorSummary:
    medians: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    ess: np.ndarray
    rhat_worst: float
    ess_min: float
    hyper_means: dict

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "median", "mean", "sd"])
            for i, (md, mn, sd) in enumerate(zip(self.medians, self.means, self.sds)):
                w.writerow([i, repr(float(md)), repr(float(mn)), repr(float(sd))])


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chain])))


def _slice(logf, x0: float, f0: float, rng: np.random.Generator, width: float = 1.0,
           max_steps: int = 32) -> tuple[float, float]:
    """One univariate slice-sampling update (stepping out, then shrinkage)."""
    level = f0 + math.log(rng.random())
    left = x0 - width * rng.random()
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and logf(right) > level:
        right += width
        k -= 1
    while True:
        x1 = left + (right - left) * rng.random()
        f1 = logf(x1)
        if f1 > level:
            return x1, f1
        if x1 < x0:
            left = x1
        else:
            right = x1


def _truncated_gamma(rng: np.random.Generator, a: float, lo: float, hi: float) -> float:
    """Standard Gamma(a) draw restricted to [lo, hi]."""
    for _ in range(16):
        x = rng.standard_gamma(a)
        if lo <= x <= hi:
            return x
    u = rng.random()
    f_lo, f_hi = gammainc(a, lo), gammainc(a, hi)
    if f_lo < 0.5 and f_hi > f_lo:
        return float(np.clip(gammaincinv(a, f_lo + (f_hi - f_lo) * u), lo, hi))
    q_lo, q_hi = gammaincc(a, lo), gammaincc(a, hi)
    if q_lo > q_hi:
        return float(np.clip(gammainccinv(a, q_hi + (q_lo - q_hi) * u), lo, hi))
    # no representable mass inside: the density is monotone across the interval
    return hi if hi < a else lo


def _collapsed_log_density(y, w, mu0, cfg):
    """log p(log sigma^2, log tau0 | y, w, mu0) with the mu_i integrated out."""
    d2 = (y - mu0) ** 2
    a, b = cfg.hyper_prec_shape, cfg.hyper_prec_rate

    lo2, hi2 = 2 * cfg.log_sigma_lower, 2 * cfg.log_sigma_upper

    def logf(log_s2: float, log_t: float) -> float:
        if not lo2 <= log_s2 <= hi2:
            return -math.inf
        v = np.exp(log_s2) / w + np.exp(-log_t)
        ll = -0.5 * float(np.sum(np.log(v) + d2 / v))
        # flat in log sigma^2 on its bounds; Gamma(a, b) on tau0 with the log Jacobian
        return ll + a * log_t - b * math.exp(log_t)

    return logf


def _run_chain(y: np.ndarray, cfg: ModelConfig, chain: int) -> dict:
    # y arrives sorted, so every vector draw and every reduction below
    # is independent of the caller's ordering of the units.
    rng = _chain_rng(cfg.seed, chain)
    n = y.size
    nu = cfg.nu
    gaussian = math.isinf(nu)
    s = robust_scale(y).s_r

    mu = y.copy()
    s = min(max(s, math.exp(cfg.log_sigma_lower)), math.exp(cfg.log_sigma_upper))
    sigma2 = cfg.sigma_fixed**2 if cfg.sigma_fixed is not None else s * s
    mu0 = cfg.mu0_fixed if cfg.mu0_fixed is not None else float(np.median(y)) + chain * 0.1 * s
    tau0 = cfg.tau0_fixed if cfg.tau0_fixed is not None else 1.0 / float(np.var(y, ddof=1))
    w = np.ones(n)

    kept = cfg.n_kept
    out_mu = np.empty((kept, n), dtype=np.float32)
    out_sigma = np.empty(kept)
    out_mu0 = np.empty(kept)
    out_tau0 = np.empty(kept)

    a_w = (nu + 1) / 2
    a_sigma = n / 2
    a_tau = cfg.hyper_prec_shape + n / 2
    prior_prec0 = 1.0 / cfg.hyper_loc_var
    k = 0
    for it in range(cfg.n_iter):
        if not gaussian:
            r2 = (y - mu) ** 2 / sigma2
            w = rng.standard_gamma(a_w, n) / ((nu + r2) / 2)

        if cfg.collapsed_variance_step and (cfg.sigma_fixed is None or cfg.tau0_fixed is None):
            logf = _collapsed_log_density(y, w, mu0, cfg)
            ls, lt = math.log(sigma2), math.log(tau0)
            f = logf(ls, lt)
            if cfg.sigma_fixed is None:
                ls, f = _slice(lambda v: logf(v, lt), ls, f, rng)
            if cfg.tau0_fixed is None:
                lt, f = _slice(lambda v: logf(ls, v), lt, f, rng)
            sigma2, tau0 = math.exp(ls), math.exp(lt)

        prec = w / sigma2 + tau0
        mu = (w * y / sigma2 + tau0 * mu0) / prec + rng.standard_normal(n) / np.sqrt(prec)

        if cfg.sigma_fixed is None:
            ss = float(np.sum(w * (y - mu) ** 2))
            # precision * ss/2 ~ Gamma(n/2), truncated to the sigma bounds
            half = ss / 2
            g = _truncated_gamma(
                rng, a_sigma,
                half * math.exp(-2 * cfg.log_sigma_upper),
                half * math.exp(-2 * cfg.log_sigma_lower),
            )
            sigma2 = half / g if half > 0 else math.exp(2 * cfg.log_sigma_lower)

        if cfg.mu0_fixed is None:
            p0 = n * tau0 + prior_prec0
            m0 = (tau0 * float(np.sum(mu)) + cfg.hyper_loc_mean * prior_prec0) / p0
            mu0 = m0 + rng.standard_normal() / math.sqrt(p0)

        if cfg.tau0_fixed is None:
            dev = float(np.sum((mu - mu0) ** 2))
            tau0 = rng.standard_gamma(a_tau) / (cfg.hyper_prec_rate + dev / 2)

        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0:
            out_mu[k] = mu
            out_sigma[k] = math.sqrt(sigma2)
            out_mu0[k] = mu0
            out_tau0[k] = tau0
            k += 1
    return {"mu": out_mu, "sigma": out_sigma, "mu0": out_mu0, "tau0": out_tau0}


def run_mcmc(scores: ScoreSet | Sequence[float], config: ModelConfig | None = None) -> PosteriorDraws:
    """Sample the joint posterior; deterministic given ``config.seed``.

    Chain ``c`` draws from a Philox stream keyed by ``(seed, c)``. Units are
    processed in sorted order, so permuting the input permutes the output
    columns and nothing else.
    """
    cfg = config or ModelConfig()
    y = scores.scores if isinstance(scores, ScoreSet) else np.asarray(scores, dtype=float)
    y = np.ravel(y).astype(float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteValue("scores must be finite")
    if np.unique(y).size < 2:
        raise DegenerateScale("the sampler needs at least 2 distinct scores")
    order = np.argsort(y, kind="stable")
    ys = y[order]

    workers = min(cfg.n_chains, thread_cap())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(lambda c: _run_chain(ys, cfg, c), range(cfg.n_chains)))
    else:
        chains = [_run_chain(ys, cfg, c) for c in range(cfg.n_chains)]

    mu_sorted = np.concatenate([c["mu"] for c in chains])
    mu = np.empty_like(mu_sorted)
    mu[:, order] = mu_sorted
    del mu_sorted
    return PosteriorDraws(
        mu_draws=mu,
        sigma_draws=np.concatenate([c["sigma"] for c in chains]),
        mu0_draws=np.concatenate([c["mu0"] for c in chains]),
        tau0_draws=np.concatenate([c["tau0"] for c in chains]),
        chain_ids=np.repeat(np.arange(cfg.n_chains), cfg.n_kept),
        config=cfg,
    )


def posterior_exceedance(draws: Sequence[float], m: float) -> float:
    """Fraction of draws strictly greater than ``m``."""
    d = np.asarray(draws, dtype=float)
    if d.size == 0:
        raise TooFewDraws("no draws")
    return float(np.mean(d > m))


def posterior_median(draws: Sequence[float]) -> float:
    d = np.asarray(draws, dtype=float)
    if d.size == 0:
        raise TooFewDraws("no draws")
    return float(np.quantile(d, 0.5, method="linear"))


def _split(x: np.ndarray) -> np.ndarray:
    """(chain, draw, ...) -> (2*chain, draw//2, ...), dropping a middle draw if odd."""
    c, n = x.shape[:2]
    half = n // 2
    first = x[:, :half]
    second = x[:, n - half:]
    return np.concatenate([first, second], axis=0)


def split_rhat(x: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction for draws shaped (chain, draw, ...)."""
    x = _split(np.asarray(x, dtype=float))
    m, n = x.shape[:2]
    chain_means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean(axis=0)
    b = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / w)


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation.

    ``x`` is shaped (chain, draw, ...); split chains are used.
    """
    x = _split(np.asarray(x, dtype=float))
    m, n = x.shape[:2]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean(axis=0)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus = var_plus + x.mean(axis=1).var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    n_pairs = n // 2
    pairs = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    positive = np.cumprod(pairs > 0, axis=0).astype(bool)
    pairs = np.minimum.accumulate(np.where(positive, pairs, 0.0), axis=0)
    tau = -1.0 + 2.0 * np.sum(np.where(positive, pairs, 0.0), axis=0)
    tau = np.maximum(tau, 1.0 / np.log10(m * n))
    return m * n / tau


def summarize(draws: PosteriorDraws) -> PosteriorSummary:
    """Per-unit medians, means, sds and convergence diagnostics.

    R-hat and ESS cover every mu_i plus log(sigma), mu0 and log(tau0);
    parameters held fixed in the config are skipped.
    """
    total = draws.mu_draws.shape[0]
    if total < 100:
        raise TooFewDraws(f"need at least 100 kept draws, got {total}")
    n = draws.n_units
    medians = np.empty(n)
    means = np.empty(n)
    sds = np.empty(n)
    ess = np.empty(n)
    rhat_max = 1.0
    for start in range(0, n, _CHUNK):
        block = draws.mu_draws[:, start : start + _CHUNK].astype(float)
        sl = slice(start, start + block.shape[1])
        medians[sl] = np.median(block, axis=0)
        means[sl] = block.mean(axis=0)
        sds[sl] = block.std(axis=0, ddof=1)
        by_chain = draws.by_chain(block)
        ess[sl] = effective_sample_size(by_chain)
        r = split_rhat(by_chain)
        r = r[np.isfinite(r)]
        if r.size:
            rhat_max = max(rhat_max, float(r.max()))

    cfg = draws.config
    scalars = []
    if cfg.sigma_fixed is None:
        scalars.append(np.log(draws.sigma_draws))
    if cfg.mu0_fixed is None:
        scalars.append(draws.mu0_draws)
    if cfg.tau0_fixed is None:
        scalars.append(np.log(draws.tau0_draws))
    ess_min = float(ess.min())
    if scalars:
        stacked = draws.by_chain(np.column_stack(scalars))
        r = split_rhat(stacked)
        r = r[np.isfinite(r)]
        if r.size:
            rhat_max = max(rhat_max, float(r.max()))
        ess_min = min(ess_min, float(effective_sample_size(stacked).min()))

    hyper = {
        "sigma": float(draws.sigma_draws.mean()),
        "mu0": float(draws.mu0_draws.mean()),
        "tau0": float(draws.tau0_draws.mean()),
    }
    return PosteriorSummary(medians, means, sds, ess, rhat_max, ess_min, hyper)


def write_traces(draws: PosteriorDraws, directory: str | Path) -> list[Path]:
    """Write scalar traces as long-format CSV and the mu draws as ``.npy``."""
    directory = Path(directory)
    cfg = draws.config
    iterations = np.tile(np.arange(cfg.n_burn, cfg.n_iter, cfg.thin)[: cfg.n_kept], draws.n_chains)
    csv_path = directory / "traces.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "chain", "iteration", "value"])
        for name, values in (
            ("sigma", draws.sigma_draws),
            ("mu0", draws.mu0_draws),
            ("tau0", draws.tau0_draws),
        ):
            for c, it, v in zip(draws.chain_ids, iterations, values):
                w.writerow([name, int(c), int(it), repr(float(v))])
    npy_path = directory / "mu_draws.npy"
    np.save(npy_path, draws.mu_draws, allow_pickle=False)
    return [csv_path, npy_path]


def read_traces(directory: str | Path, config: ModelConfig) -> PosteriorDraws:
    directory = Path(directory)
    cols: dict[str, list[float]] = {"sigma": [], "mu0": [], "tau0": []}
    chains: list[int] = []
    with (directory / "traces.csv").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cols[row["parameter"]].append(float(row["value"]))
            if row["parameter"] == "sigma":
                chains.append(int(row["chain"]))
    return PosteriorDraws(
        mu_draws=np.load(directory / "mu_draws.npy", allow_pickle=False),
        sigma_draws=np.array(cols["sigma"]),
        mu0_draws=np.array(cols["mu0"]),
        tau0_draws=np.array(cols["tau0"]),
        chain_ids=np.array(chains),
        config=config,
    )
