import numpy as np
import pytest

from tweedie_shrink.errors import DegenerateScale, InvalidConfig, NonFiniteValue, TooFewDraws
from tweedie_shrink.posterior import (
    ModelConfig,
    PosteriorDraws,
    posterior_exceedance,
    posterior_median,
    read_traces,
    run_mcmc,
    split_rhat,
    effective_sample_size,
    summarize,
    write_traces,
)
from oracles import single_obs_t_posterior_median

SHORT = dict(n_iter=3000, n_burn=500)


def t4_sample(n, loc=0.0, scale=1.0, seed=0):
    return loc + scale * np.random.default_rng(seed).standard_t(4, n)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(nu=0), dict(n_burn=11_000), dict(n_chains=0), dict(hyper_prec_shape=0),
         dict(hyper_prec_rate=-1), dict(seed=-1), dict(seed=2**64), dict(thin=0),
         dict(sigma_fixed=0.0), dict(log_sigma_lower=1, log_sigma_upper=0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            ModelConfig(**kw)

    def test_defaults(self):
        c = ModelConfig()
        assert (c.nu, c.n_iter, c.n_burn, c.hyper_loc_var) == (4.0, 11_000, 1_000, 1e6)
        # Gamma(0.01, 0.01): mean 1, variance 100
        assert c.hyper_prec_shape / c.hyper_prec_rate == 1
        assert c.hyper_prec_shape / c.hyper_prec_rate**2 == pytest.approx(100)
        assert c.n_kept == 10_000

    def test_dict_round_trip(self):
        c = ModelConfig(nu=float("inf"), seed=7, tau0_fixed=2.0)
        assert ModelConfig.from_dict(c.to_dict()) == c


class TestExceedanceAndMedian:
    def test_exceedance(self):
        assert posterior_exceedance([1, 2, 3, 4], 2.5) == 0.5
        assert posterior_exceedance([1, 2, 3, 4], 0) == 1.0
        assert posterior_exceedance([1, 2, 3, 4], 9) == 0.0

    def test_median(self):
        assert posterior_median([1, 2, 3]) == 2
        assert posterior_median([1, 2, 3, 4]) == 2.5

    def test_empty(self):
        with pytest.raises(TooFewDraws):
            posterior_median([])
        with pytest.raises(TooFewDraws):
            posterior_exceedance([], 0.0)


class TestSampler:
    def test_deterministic(self):
        y = t4_sample(60, seed=1)
        a = run_mcmc(y, ModelConfig(seed=11, n_iter=400, n_burn=100))
        b = run_mcmc(y, ModelConfig(seed=11, n_iter=400, n_burn=100))
        assert a.mu_draws.tobytes() == b.mu_draws.tobytes()
        assert a.sigma_draws.tobytes() == b.sigma_draws.tobytes()
        c = run_mcmc(y, ModelConfig(seed=12, n_iter=400, n_burn=100))
        assert a.sigma_draws.tobytes() != c.sigma_draws.tobytes()

    def test_exchangeable(self):
        y = t4_sample(80, seed=2)
        perm = np.random.default_rng(0).permutation(80)
        cfg = ModelConfig(seed=3, n_iter=400, n_burn=100)
        a = run_mcmc(y, cfg)
        b = run_mcmc(y[perm], cfg)
        np.testing.assert_array_equal(b.mu_draws, a.mu_draws[:, perm])
        np.testing.assert_array_equal(b.tau0_draws, a.tau0_draws)

    def test_threads_do_not_change_draws(self, monkeypatch):
        y = t4_sample(40, seed=3)
        cfg = ModelConfig(seed=5, n_iter=300, n_burn=50)
        a = run_mcmc(y, cfg)
        monkeypatch.setenv("TWEEDIE_SHRINK_THREADS", "2")
        b = run_mcmc(y, cfg)
        assert a.mu_draws.tobytes() == b.mu_draws.tobytes()

    def test_shapes(self):
        cfg = ModelConfig(seed=1, n_iter=500, n_burn=100, n_chains=3, thin=2)
        d = run_mcmc(t4_sample(25), cfg)
        assert d.mu_draws.shape == (3 * 200, 25)
        assert d.n_chains == 3
        assert np.all(d.sigma_draws > 0) and np.all(d.tau0_draws > 0)

    def test_constant_input_rejected(self):
        with pytest.raises(DegenerateScale):
            run_mcmc(np.full(50, 1.5))

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteValue):
            run_mcmc([0.0, 1.0, np.nan])

    def test_near_constant_concentrates(self):
        c = 1.5
        y = c + 1e-3 * np.random.default_rng(4).standard_normal(50)
        s = summarize(run_mcmc(y, ModelConfig(seed=2, **SHORT)))
        assert np.all(np.abs(s.medians - c) <= 0.05)

    def test_outlier_is_partially_rejected(self):
        y = np.append(t4_sample(199, seed=5), 6.0)
        s = summarize(run_mcmc(y, ModelConfig(seed=4, **SHORT)))
        # single-observation t4 posterior under N(0, 1): median ~0.85
        assert single_obs_t_posterior_median(6.0, 1.0, 4.0, 0.0, 1.0) <= 3
        assert s.medians[-1] <= 3

    def test_shrinkage_direction(self):
        y = t4_sample(100, loc=1.0, seed=6)
        d = run_mcmc(y, ModelConfig(seed=8, **SHORT))
        s = summarize(d)
        center = d.mu0_draws.mean()
        lo, hi = np.minimum(y, center), np.maximum(y, center)
        slack = 3 * s.sds / np.sqrt(s.ess)
        assert np.all(s.medians >= lo - slack) and np.all(s.medians <= hi + slack)

    def test_tight_prior_collapses(self):
        y = t4_sample(100, loc=2.0, seed=7)
        d = run_mcmc(y, ModelConfig(seed=9, tau0_fixed=1e6, **SHORT))
        s = summarize(d)
        assert np.all(np.abs(s.medians - d.mu0_draws.mean()) < 0.01)

    def test_gaussian_limit_matches_closed_form(self):
        y = np.random.default_rng(8).normal(size=30)
        cfg = ModelConfig(nu=float("inf"), sigma_fixed=0.8, mu0_fixed=0.3, tau0_fixed=2.0, seed=1, **SHORT)
        s = summarize(run_mcmc(y, cfg))
        prec = 1 / 0.8**2 + 2.0
        exact = (y / 0.8**2 + 2.0 * 0.3) / prec
        mcse = s.sds / np.sqrt(s.ess)
        assert np.max(np.abs(s.means - exact) / mcse) < 4.5
        np.testing.assert_allclose(s.sds, np.sqrt(1 / prec), rtol=0.05)


class TestSummaryAndDiagnostics:
    def _draws(self, mu, chains):
        k = mu.shape[0]
        return PosteriorDraws(mu, np.ones(k), np.zeros(k), np.ones(k), chains)

    def test_identical_chains(self):
        x = np.random.default_rng(0).normal(size=(500, 4)).astype(np.float32)
        d = self._draws(np.vstack([x, x]), np.repeat([0, 1], 500))
        assert summarize(d).rhat_worst == pytest.approx(1.0, abs=0.01)

    def test_constant_draws(self):
        d = self._draws(np.full((200, 3), 2.5, dtype=np.float32), np.repeat([0, 1], 100))
        s = summarize(d)
        np.testing.assert_array_equal(s.medians, 2.5)

    def test_median_exceedance_consistency(self):
        x = np.random.default_rng(1).normal(size=(301, 5)).astype(np.float32)
        pooled = np.vstack([x[:300], x[1:]])
        s = summarize(self._draws(pooled, np.repeat([0, 1], 300)))
        pooled = pooled.astype(float)
        for j in range(5):
            assert abs(posterior_exceedance(pooled[:, j], s.medians[j]) - 0.5) <= 1 / 600

    def test_too_few(self):
        with pytest.raises(TooFewDraws):
            summarize(self._draws(np.zeros((50, 2), np.float32), np.repeat([0, 1], 25)))

    def test_rhat_detects_disagreement(self):
        rng = np.random.default_rng(2)
        x = np.stack([rng.normal(0, 1, 1000), rng.normal(3, 1, 1000)])
        assert split_rhat(x) > 1.5

    def test_ess_of_iid(self):
        x = np.random.default_rng(3).normal(size=(2, 2000, 1))
        assert effective_sample_size(x)[0] == pytest.approx(4000, rel=0.15)

    def test_ess_of_ar1(self):
        rng = np.random.default_rng(4)
        rho, n = 0.9, 20_000
        e = rng.normal(size=(2, n))
        x = np.empty_like(e)
        x[:, 0] = e[:, 0]
        for t in range(1, n):
            x[:, t] = rho * x[:, t - 1] + e[:, t]
        expected = 2 * n * (1 - rho) / (1 + rho)
        assert effective_sample_size(x[..., None])[0] == pytest.approx(expected, rel=0.2)


def test_trace_round_trip(tmp_path):
    cfg = ModelConfig(seed=1, n_iter=300, n_burn=100)
    d = run_mcmc(t4_sample(20, seed=9), cfg)
    paths = write_traces(d, tmp_path)
    assert paths[0].read_text().splitlines()[0] == "parameter,chain,iteration,value"
    back = read_traces(tmp_path, cfg)
    for name in ("mu_draws", "sigma_draws", "mu0_draws", "tau0_draws", "chain_ids"):
        np.testing.assert_array_equal(getattr(back, name), getattr(d, name))
