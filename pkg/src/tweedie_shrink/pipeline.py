"""Two-step pipeline: posterior-median scores, then Tweedie correction.

Every stage writes its artifacts as soon as it finishes, so a failure
later on leaves the earlier outputs in place. ``report.json`` holds no
timestamps or paths of the output directory; those go to ``run_log.json``.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import InvalidConfig, StageError, TweedieShrinkError
from .ingest import BinScheme, Sample, histogram, load_samples, summary_stats, tally
from .lindsey import LindseyConfig, LogDensityFit, select_order, write_aic_table
from .posterior import ModelConfig, run_mcmc, summarize, write_traces
from .transform import ScoreSet, read_scoreset, robust_scale, standardize, to_z_scores
from .tweedie import (
    TweedieConfig,
    back_transform_linear,
    back_transform_quantile,
    correct_scores,
    decompose_variance,
)

__all__ = [
    "PipelineConfig",
    "PipelineReport",
    "run_pipeline",
    "run_step1",
    "run_step2",
    "emit_figures",
    "load_config",
    "load_run",
]

DISPLAY_HIST = BinScheme.fixed_width(0.25, -2.0, 4.5)
FIGURE_FILES = (
    "fig1_raw_histogram_kde.csv",
    "fig2_poisson_fit.csv",
    "fig3_original_vs_corrected.csv",
)


@dataclass(frozen=True)
class PipelineConfig:
    input: str | None = None
    column: str | int = 0
    delimiter: str | None = None
    plotting_position: str = "hazen"
    model: ModelConfig = field(default_factory=ModelConfig)
    lindsey: LindseyConfig = field(default_factory=LindseyConfig)
    tweedie: TweedieConfig = field(default_factory=TweedieConfig)
    display_hist: BinScheme = DISPLAY_HIST
    output_dir: str = "tweedie_out"
    emit_traces: bool = True

    def to_dict(self, include_output: bool = True) -> dict:
        d = {
            "input": self.input,
            "column": self.column,
            "delimiter": self.delimiter,
            "plotting_position": self.plotting_position,
            "model": self.model.to_dict(),
            "lindsey": self.lindsey.to_dict(),
            "tweedie": {
                "sigma2": self.tweedie.sigma2,
                "clamp_negative_variance": self.tweedie.clamp_negative_variance,
                "include_extrapolated": self.tweedie.include_extrapolated,
            },
            "display_hist": self.display_hist.as_dict(),
            "emit_traces": self.emit_traces,
        }
        if include_output:
            d["output_dir"] = self.output_dir
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            if "model" in d:
                d["model"] = ModelConfig.from_dict(d["model"])
            if "lindsey" in d:
                d["lindsey"] = LindseyConfig.from_dict(d["lindsey"])
            if "tweedie" in d:
                d["tweedie"] = TweedieConfig(**d["tweedie"])
            if "display_hist" in d:
                d["display_hist"] = BinScheme(**d["display_hist"])
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
        return cls(**d)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    return PipelineConfig.from_dict(data)


@dataclass
class PipelineReport:
    """Tables 1-5, the variance split, headline means and diagnostics.

    ``artifacts`` keeps the in-memory objects for figure output and is not
    serialized.
    """

    config: dict
    tables: dict = field(default_factory=dict)
    permanent_share: float | None = None
    sd_reduction: float | None = None
    headline_means: dict | None = None
    diagnostics: dict | None = None
    display_histogram: dict | None = None
    stages_completed: list = field(default_factory=list)
    error: dict | None = None
    artifacts: dict = field(default_factory=dict, repr=False)

    def skip(self, name: str, reason: str) -> None:
        self.tables.setdefault(name, {"skipped": reason})

    def to_dict(self) -> dict:
        tables = {k: self.tables.get(k, {"skipped": "stage not reached"}) for k in
                  ("table1", "table2", "table3", "table4", "table5")}
        return {
            "version": __version__,
            "tables": tables,
            "permanent_share": self.permanent_share,
            "sd_reduction": self.sd_reduction,
            "headline_means": self.headline_means,
            "diagnostics": self.diagnostics,
            "display_histogram": self.display_histogram,
            "stages_completed": self.stages_completed,
            "error": self.error,
            "config": self.config,
        }

    def write(self, directory: Path) -> Path:
        path = directory / "report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, directory: str | Path) -> "PipelineReport":
        d = json.loads((Path(directory) / "report.json").read_text(encoding="utf-8"))
        return cls(
            config=d["config"],
            tables=d["tables"],
            permanent_share=d["permanent_share"],
            sd_reduction=d["sd_reduction"],
            headline_means=d["headline_means"],
            diagnostics=d["diagnostics"],
            display_histogram=d.get("display_histogram"),
            stages_completed=d["stages_completed"],
            error=d["error"],
        )


class _Stage:
    """Context manager that tags errors with the stage name."""

    def __init__(self, report: PipelineReport, name: str, out: Path):
        self.report, self.name, self.out = report, name, out

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            if self.name not in self.report.stages_completed:
                self.report.stages_completed.append(self.name)
            return False
        if isinstance(exc, StageError):
            return False
        if isinstance(exc, (TweedieShrinkError, OSError, ValueError)):
            self.report.error = {"stage": self.name, "type": type(exc).__name__, "message": str(exc)}
            try:
                self.report.write(self.out)
            except OSError:
                pass
            raise StageError(self.name, exc) from exc
        return False


def _prepare_output(config: PipelineConfig) -> Path:
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("output", exc) from exc
    return out


def _write_run_log(out: Path, config: PipelineConfig, started: float, command: str) -> None:
    log = {
        "command": command,
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
        "output_dir": str(out.resolve()),
        "seed": config.model.seed,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "tweedie_shrink": __version__,
    }
    (out / "run_log.json").write_text(json.dumps(log, indent=2) + "\n", encoding="utf-8")


def _stats(values) -> dict:
    return summary_stats(values).as_dict()


def _load(config: PipelineConfig) -> Sample:
    if config.input is None:
        raise InvalidConfig("no input file given")
    return load_samples(config.input, config.column, config.delimiter)


def run_step1(config: PipelineConfig, report: PipelineReport | None = None) -> PipelineReport:
    """Load, z-transform, sample the hierarchical model, extract medians."""
    started = time.time()
    out = _prepare_output(config)
    if report is None:
        report = PipelineReport(config=config.to_dict(include_output=False))
    art = report.artifacts

    with _Stage(report, "ingest", out):
        sample = _load(config)
        art["sample"] = sample
        report.tables["table1"] = _stats(sample)
        report.tables["table1"]["n"] = sample.n
        report.tables["table1"]["skipped_rows"] = sample.skipped

    with _Stage(report, "transform", out):
        z = to_z_scores(sample, config.plotting_position)
        raw_scale = robust_scale(sample.values)
        art["z"] = z
        z.to_csv(out / "z_scores.csv")

    with _Stage(report, "posterior", out):
        draws = run_mcmc(z, config.model)
        post = summarize(draws)
        post.to_csv(out / "posterior_summary.csv")
        if config.emit_traces:
            write_traces(draws, out)
        del draws
        medians = ScoreSet(post.medians, provenance="posterior-median")
        art["medians"] = medians
        report.tables["table3"] = _stats(post.medians)
        report.diagnostics = {
            "rhat_worst": post.rhat_worst,
            "ess_min": post.ess_min,
            "posterior_means": post.hyper_means,
            "seed": config.model.seed,
        }
        report.headline_means = {
            "observed_mean": float(np.mean(sample.values)),
            "original_scale": raw_scale.s_r,
        }

    report.write(out)
    _write_run_log(out, config, started, "step1")
    return report


def run_step2(
    config: PipelineConfig,
    report: PipelineReport | None = None,
    medians_path: str | Path | None = None,
) -> PipelineReport:
    """Standardize medians, fit Lindsey's density, apply the correction.

    Without an in-memory report, the step-1 artifacts are read back from
    the directory holding ``medians_path`` (default: ``output_dir``).
    """
    started = time.time()
    out = _prepare_output(config)
    if report is None:
        src = Path(medians_path).parent if medians_path is not None else out
        report = _resume(config, src, medians_path)
    art = report.artifacts
    z: ScoreSet = art["z"]
    medians: ScoreSet = art["medians"]

    with _Stage(report, "transform", out):
        rs = robust_scale(medians.scores)
        std = standardize(medians.scores, float(np.mean(medians.scores)), rs.s_r)
        art["standardized"] = std
        std.to_csv(out / "medians_standardized.csv")
        report.tables["table2"] = _stats(std.scores)
        disp = histogram(std.scores, config.display_hist)
        disp.to_csv(out / "display_histogram.csv")
        report.display_histogram = {
            "scheme": config.display_hist.as_dict(),
            "n_below": disp.n_below,
            "n_above": disp.n_above,
        }

    with _Stage(report, "lindsey", out):
        best, table, fits = select_order(std.scores, config.lindsey, score_tag=std.tag)
        art["fit"] = best
        write_aic_table(fits, out / "aic_table.csv")
        best.to_json(out / "lindsey_fit.json")
        report.tables["table4"] = {
            "aic": {str(j): a for j, a in table.items()},
            "converged": {str(j): f.converged for j, f in fits.items()},
            "selected_order": best.order,
        }

    with _Stage(report, "tweedie", out):
        z_sd = float(np.std(z.scores, ddof=1))
        corr = correct_scores(std, best, config.tweedie, reference_sd=z_sd)
        art["correction"] = corr
        report.tables["table5"] = corr.summary.as_dict()
        corrected_sd = corr.summary.sd
        share, reduction = decompose_variance(corrected_sd, z_sd, float(np.std(medians.scores, ddof=1)))
        report.permanent_share = share
        report.sd_reduction = reduction
        headline = dict(report.headline_means or {})
        if "observed_mean" in headline:
            headline["linear"] = float(back_transform_linear(
                corr.summary.mean, headline["observed_mean"], headline["original_scale"]))
        if "sample" in art:
            headline["quantile"] = float(np.mean(
                back_transform_quantile(corr.corrected_means_unstandardized, art["sample"])))
        report.headline_means = headline
        corr.to_csv(out / "correction.csv")
        corr.write_summary_json(out / "correction_summary.json", {"headline_means": headline})

    report.write(out)
    _write_run_log(out, config, started, "step2")
    return report


def _resume(config: PipelineConfig, src: Path, medians_path: str | Path | None) -> PipelineReport:
    """Rebuild the step-1 state from files written by :func:`run_step1`."""
    out = Path(config.output_dir)
    with _Stage(PipelineReport(config={}), "ingest", out):
        previous = PipelineReport.read(src) if (src / "report.json").exists() else None
        echo = config.to_dict(include_output=False)
        if previous:
            # step-1 settings come from the run that made the medians, step-2 settings from now
            echo = {**previous.config, **{k: echo[k] for k in ("lindsey", "tweedie", "display_hist")}}
        report = PipelineReport(config=echo)
        if previous:
            report.tables = {k: v for k, v in previous.tables.items() if k in ("table1", "table3")}
            report.diagnostics = previous.diagnostics
            report.headline_means = previous.headline_means
            report.stages_completed = [s for s in previous.stages_completed
                                       if s in ("ingest", "transform", "posterior")]
        path = Path(medians_path) if medians_path is not None else src / "posterior_summary.csv"
        with path.open(newline="", encoding="utf-8") as fh:
            med = np.array([float(r["median"]) for r in csv.DictReader(fh)])
        report.artifacts["medians"] = ScoreSet(med, provenance="posterior-median")
        report.artifacts["z"] = read_scoreset(src / "z_scores.csv")
        input_path = report.config.get("input")
        if input_path and Path(input_path).is_file():
            report.artifacts["sample"] = load_samples(
                input_path, report.config.get("column", 0), report.config.get("delimiter"))
        report.tables.setdefault("table3", _stats(med))
    return report


def run_pipeline(config: PipelineConfig) -> PipelineReport:
    """Full two-step run; writes every artifact plus the figure data."""
    report = run_step1(config)
    report = run_step2(config, report)
    out = Path(config.output_dir)
    with _Stage(report, "output", out):
        emit_figures(report, out)
    report.write(out)
    return report


def load_run(directory: str | Path) -> PipelineReport:
    """Read a finished run back, including what :func:`emit_figures` needs."""
    directory = Path(directory)
    report = PipelineReport.read(directory)
    art = report.artifacts
    input_path = report.config.get("input")
    if input_path and Path(input_path).is_file():
        art["sample"] = load_samples(input_path, report.config.get("column", 0), report.config.get("delimiter"))
    art["standardized"] = read_scoreset(directory / "medians_standardized.csv")
    art["fit"] = LogDensityFit.from_json(directory / "lindsey_fit.json")
    with (directory / "correction.csv").open(newline="", encoding="utf-8") as fh:
        art["corrected_means"] = np.array([float(r["corrected_mean"]) for r in csv.DictReader(fh)])
    return report


def _silverman(x: np.ndarray) -> float:
    sd = float(np.std(x, ddof=1))
    iqr = float(np.subtract(*np.quantile(x, [0.75, 0.25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def _gaussian_kde(x: np.ndarray, grid: np.ndarray, bw: float) -> np.ndarray:
    dens = np.zeros_like(grid)
    for start in range(0, x.size, 2048):
        u = (grid[:, None] - x[None, start : start + 2048]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return dens / (x.size * bw * np.sqrt(2 * np.pi))


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def emit_figures(report: PipelineReport, output_dir: str | Path) -> list[Path]:
    """Write the three figure-data CSVs.

    * ``fig1_raw_histogram_kde.csv`` (``series,x,y``): raw-data histogram
      counts at bin midpoints and a Gaussian KDE (Silverman bandwidth) on
      a 512-point grid.
    * ``fig2_poisson_fit.csv`` (``series,x,y``): observed counts, fitted
      Poisson intensities at the midpoints, and a 256-point fitted curve.
    * ``fig3_original_vs_corrected.csv``
      (``left_edge,right_edge,original_count,corrected_count``):
      standardized medians and corrected means on shared bins.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = report.artifacts
    fit: LogDensityFit = art["fit"]
    std: ScoreSet = art["standardized"]
    corrected = art["correction"].corrected_means if "correction" in art else art["corrected_means"]
    n_bins = fit.histogram.n_bins
    paths = []

    p = out / FIGURE_FILES[0]
    rows = []
    if "sample" in art:
        x = art["sample"].values
        h = histogram(x, n_bins)
        rows += [("histogram", m, int(c)) for m, c in zip(h.midpoints, h.counts)]
        bw = _silverman(x)
        grid = np.linspace(x.min() - 3 * bw, x.max() + 3 * bw, 512)
        rows += [("kde", g, d) for g, d in zip(grid, _gaussian_kde(x, grid, bw))]
    _write_rows(p, ["series", "x", "y"], rows)
    paths.append(p)

    p = out / FIGURE_FILES[1]
    h = fit.histogram
    dense = np.linspace(h.edges[0], h.edges[-1], 256)
    rows = [("observed", m, int(c)) for m, c in zip(h.midpoints, h.counts)]
    rows += [("fitted", m, v) for m, v in zip(h.midpoints, fit.fitted_counts())]
    rows += [("dense", g, v) for g, v in zip(dense, fit.intensity(dense))]
    _write_rows(p, ["series", "x", "y"], rows)
    paths.append(p)

    p = out / FIGURE_FILES[2]
    lo = float(min(std.scores.min(), corrected.min()))
    hi = float(max(std.scores.max(), corrected.max()))
    edges = BinScheme.count(n_bins, lo, hi).edges()
    a, b = tally(std.scores, edges), tally(corrected, edges)
    rows = [(edges[k], edges[k + 1], int(a.counts[k]), int(b.counts[k])) for k in range(n_bins)]
    _write_rows(p, ["left_edge", "right_edge", "original_count", "corrected_count"], rows)
    paths.append(p)
    return paths


def with_overrides(config: PipelineConfig, **kw: Any) -> PipelineConfig:
    """Apply CLI-style overrides (``None`` values are ignored)."""
    kw = {k: v for k, v in kw.items() if v is not None}
    model = config.model
    lindsey = config.lindsey
    tweedie = config.tweedie
    try:
        if "seed" in kw:
            model = replace(model, seed=int(kw.pop("seed")))
        if "sigma2" in kw:
            tweedie = replace(tweedie, sigma2=float(kw.pop("sigma2")))
        if "bins" in kw:
            lindsey = replace(lindsey, n_bins=int(kw.pop("bins")))
        if "orders" in kw:
            lindsey = replace(lindsey, orders=tuple(kw.pop("orders")))
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    rename = {"out": "output_dir"}
    kw = {rename.get(k, k): v for k, v in kw.items()}
    return replace(config, model=model, lindsey=lindsey, tweedie=tweedie, **kw)
