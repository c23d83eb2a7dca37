import numpy as np
import pytest

from tweedie_shrink.errors import DegenerateScale, EmptyInput, InvalidConfig, NonConvergence, ScaleMismatch
from tweedie_shrink.ingest import BinScheme, Histogram, Sample, histogram, quantile
from tweedie_shrink.lindsey import LogDensityFit, fit_poisson_poly
from tweedie_shrink.transform import ScoreSet, standardize, to_z_scores
from tweedie_shrink.tweedie import (
    CorrectionResult,
    GaussianLogDensity,
    TweedieConfig,
    back_transform_linear,
    back_transform_quantile,
    correct_mean,
    correct_scores,
    correct_variance,
    decompose_variance,
)


def poly_fit(coeffs, converged=True, edges=(-3.0, 3.0), tag=None):
    h = Histogram(np.linspace(*edges, 7), np.ones(6, dtype=int))
    return LogDensityFit(np.array(coeffs, float), 0.0, 1.0, len(coeffs) - 1, 0.0, 0.0, 0.0, h,
                         converged, score_tag=tag)


class TestCorrectMean:
    def test_flat_score_leaves_z(self):
        assert correct_mean(1.7, poly_fit([0.3, 0.0, 0.0])) == 1.7

    def test_conjugate_half(self):
        assert correct_mean(2.0, GaussianLogDensity(), TweedieConfig(sigma2=0.5)) == 1.0

    def test_vector(self):
        z = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(correct_mean(z, GaussianLogDensity()), [0.0, 0.0, 0.0])

    def test_non_converged(self):
        with pytest.raises(NonConvergence):
            correct_mean(0.0, poly_fit([0.0, 0.0, -0.5], converged=False))

    def test_small_sigma2_linear(self):
        fit = GaussianLogDensity(mean=0.5, var=2.0)
        z = 1.3
        d = [correct_mean(z, fit, TweedieConfig(sigma2=s)) - z for s in (1e-3, 2e-3)]
        assert d[1] == pytest.approx(2 * d[0], rel=1e-12)


class TestCorrectVariance:
    def test_no_curvature(self):
        assert correct_variance(0.4, poly_fit([0.0, 1.0]), TweedieConfig(sigma2=0.7)) == (0.7, False)

    def test_conjugate_quarter(self):
        assert correct_variance(2.0, GaussianLogDensity(), TweedieConfig(sigma2=0.5)) == (0.25, False)

    def test_boundary_is_zero(self):
        # l2 = -1/sigma2 exactly
        var, clamped = correct_variance(0.0, GaussianLogDensity(var=0.5), TweedieConfig(sigma2=0.5))
        assert var == 0.0 and not clamped

    def test_negative_is_clamped(self):
        var, clamped = correct_variance(0.0, GaussianLogDensity(var=0.25), TweedieConfig(sigma2=0.5))
        assert var == 0.0 and clamped

    def test_clamping_off(self):
        cfg = TweedieConfig(sigma2=0.5, clamp_negative_variance=False)
        var, clamped = correct_variance(0.0, GaussianLogDensity(var=0.25), cfg)
        assert var == pytest.approx(-0.5) and not clamped

    def test_config_rejects_nonpositive(self):
        for bad in (0.0, -1.0, float("nan"), float("inf")):
            with pytest.raises(InvalidConfig):
                TweedieConfig(sigma2=bad)


class TestConjugateOracle:
    @pytest.mark.parametrize("m,tau2,sigma2", [(0.0, 1.0, 1.0), (0.7, 2.0, 0.3), (-1.2, 0.4, 1.5)])
    def test_exact_marginal(self, m, tau2, sigma2):
        y = np.linspace(-4, 4, 100)
        fit = GaussianLogDensity(mean=m, var=sigma2 + tau2)
        cfg = TweedieConfig(sigma2=sigma2)
        mean = correct_mean(y, fit, cfg)
        var, _ = correct_variance(y, fit, cfg)
        np.testing.assert_allclose(mean, (tau2 * y + sigma2 * m) / (sigma2 + tau2), atol=1e-12)
        np.testing.assert_allclose(var, sigma2 * tau2 / (sigma2 + tau2), atol=1e-12)

    def test_quadratic_fit_gives_increasing_map(self):
        x = np.random.default_rng(0).normal(size=20_000) * np.sqrt(2)
        fit = fit_poisson_poly(histogram(x, 50), 2)
        z = np.linspace(-4, 4, 200)
        assert np.all(np.diff(correct_mean(z, fit)) > 0)


class TestDecompose:
    def test_reported_share(self):
        share, _ = decompose_variance(0.067, 1.0, 0.117)
        assert share == pytest.approx(0.067)

    def test_reduction(self):
        _, reduction = decompose_variance(0.067, 1.0, 0.117)
        assert round(reduction, 4) == 0.4274

    def test_identity(self):
        assert decompose_variance(0.3, 0.3, 0.3) == (1.0, 0.0)

    def test_bad_denominators(self):
        with pytest.raises(DegenerateScale):
            decompose_variance(0.1, 0.0, 1.0)
        with pytest.raises(DegenerateScale):
            decompose_variance(0.1, 1.0, -1.0)


class TestBackTransforms:
    def test_linear_center(self):
        assert back_transform_linear(0.0, 414.9, 822.0) == 414.9

    def test_linear_round_trip(self):
        v = np.random.default_rng(1).normal(3.0, 5.0, size=200)
        s = standardize(v, 2.5, 4.0)
        np.testing.assert_allclose(back_transform_linear(s.scores, 2.5, 4.0), v, atol=1e-12)

    def test_linear_bad_scale(self):
        with pytest.raises(DegenerateScale):
            back_transform_linear(1.0, 0.0, 0.0)

    def test_quantile_median(self):
        sample = Sample(np.array([5.0, 1.0, 3.0, 9.0]))
        assert back_transform_quantile(0.0, sample) == 4.0

    def test_quantile_inverts_rank_transform(self):
        v = np.random.default_rng(2).exponential(size=101)
        z = to_z_scores(Sample(v)).scores
        back = back_transform_quantile(z, v)
        gaps = np.diff(np.sort(v)).max()
        assert np.max(np.abs(back - v)) <= gaps

    def test_quantile_monotone(self):
        v = np.random.default_rng(3).normal(size=50)
        out = back_transform_quantile(np.linspace(-5, 5, 101), v)
        assert np.all(np.diff(out) >= 0)

    def test_quantile_rule_matches_summary(self):
        v = np.arange(10.0)
        from scipy.special import ndtr

        assert back_transform_quantile(0.3, v) == quantile(v, ndtr(0.3))

    def test_quantile_empty(self):
        with pytest.raises(EmptyInput):
            back_transform_quantile(0.0, np.array([]))


class TestCorrectScores:
    def _scores(self, n=500, seed=4):
        x = np.random.default_rng(seed).normal(1.0, 2.0, size=n)
        return standardize(x, float(np.mean(x)), 2.0)

    def test_flat_fit_is_identity(self):
        s = self._scores()
        res = correct_scores(s, poly_fit([0.0], edges=(-10, 10)))
        np.testing.assert_array_equal(res.corrected_means, s.scores)
        np.testing.assert_array_equal(res.corrected_means_unstandardized, s.invert())
        assert res.permanent_share == pytest.approx(1.0)
        assert res.sd_reduction_vs_input == pytest.approx(0.0, abs=1e-15)

    def test_conjugate_share(self):
        s = self._scores(20_000)
        res = correct_scores(s, GaussianLogDensity(var=2.0))
        assert res.permanent_share == pytest.approx(0.5, rel=1e-12)
        assert len(res.corrected_means) == len(s)

    def test_reference_sd(self):
        s = self._scores()
        res = correct_scores(s, GaussianLogDensity(var=2.0), reference_sd=4.0)
        assert res.reference_sd == 4.0
        assert res.permanent_share == pytest.approx(np.std(res.corrected_means_unstandardized, ddof=1) / 4.0)

    def test_extrapolated_flags(self):
        s = ScoreSet(np.array([-5.0, 0.0, 1.0, 5.0]), provenance="standardization")
        res = correct_scores(s, poly_fit([0.0, 0.0, -0.5]))
        assert res.extrapolated.tolist() == [True, False, False, True]

    def test_extrapolated_excluded_from_summary(self):
        s = ScoreSet(np.array([-5.0, 0.0, 1.0, 2.0, 5.0]), provenance="standardization")
        res = correct_scores(s, poly_fit([0.0, 0.0, -0.5]), TweedieConfig(sigma2=0.5, include_extrapolated=False))
        assert (res.summary.min, res.summary.max) == (0.0, 1.0)

    def test_scale_mismatch(self):
        s = self._scores()
        fit = poly_fit([0.0, 0.0, -0.5], tag=("standardization", 0.0, 1.0))
        with pytest.raises(ScaleMismatch):
            correct_scores(s, fit)
        ok = poly_fit([0.0, 0.0, -0.5], tag=s.tag)
        assert isinstance(correct_scores(s, ok), CorrectionResult)

    def test_csv_and_summary(self, tmp_path):
        s = ScoreSet(np.array([-1.0, 0.0, 3.5]), provenance="standardization")
        res = correct_scores(s, poly_fit([0.0, 0.0, -0.5]), TweedieConfig(sigma2=1.5))
        res.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "index,input_score,corrected_mean,corrected_var,clamped,extrapolated"
        assert lines[3].endswith("true,true")
        d = res.summary_dict()
        assert d["n_clamped"] == 3 and d["sigma2"] == 1.5


def test_histogram_scheme_unchanged_by_correction():
    # correction never rebins; shared edges come from the caller
    scheme = BinScheme.fixed_width(0.25, -2.0, 4.5)
    assert histogram(np.zeros(3), scheme).n_bins == 26
