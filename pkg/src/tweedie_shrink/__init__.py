"""Two-step robust local empirical Bayes correction.

Step one fits a hierarchical Student-t model to normal scores by Gibbs
sampling and keeps each unit's posterior median. Step two standardizes
those medians, estimates their log-density by Lindsey's method and
applies Tweedie's formula.
"""

__version__ = "0.1.0"

from .errors import TweedieShrinkError  # noqa: E402
from .ingest import BinScheme, Histogram, Sample, SummaryStats, histogram, load_samples, summary_stats  # noqa: E402
from .lindsey import LindseyConfig, LogDensityFit, fit_poisson_poly, log_density_derivs, select_order  # noqa: E402
from .posterior import (  # noqa: E402
    ModelConfig,
    PosteriorDraws,
    PosteriorSummary,
    posterior_exceedance,
    posterior_median,
    run_mcmc,
    summarize,
)
from .transform import (  # noqa: E402
    RobustScale,
    ScoreSet,
    ecdf_probabilities,
    inverse_normal,
    robust_scale,
    standardize,
    to_z_scores,
)
from .tweedie import (  # noqa: E402
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
