"""Command-line interface.

Subcommands: ``run`` (full pipeline), ``step1`` (through posterior
medians), ``step2`` (from a saved median file), ``figures`` (from a saved
run) and ``simulate`` (write a synthetic dataset).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import EXIT_CODES, StageError, TweedieShrinkError
from .pipeline import (
    PipelineConfig,
    emit_figures,
    load_config,
    load_run,
    run_pipeline,
    run_step1,
    run_step2,
    with_overrides,
)
from .simulate import bimodal_dataset, conjugate_dataset, write_dataset


def _orders(text: str) -> tuple[int, ...]:
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-"))
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad order list {text!r}; use e.g. 2,3,5 or 2-7") from None


def _column(text: str) -> str | int:
    return int(text) if text.isdigit() else text


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--input", help="delimited input file")
    p.add_argument("--column", type=_column, help="column name or 0-based index")
    p.add_argument("--seed", type=int, help="sampler seed (unsigned 64-bit)")
    p.add_argument("--sigma2", type=float, help="sampling variance used in the correction")
    p.add_argument("--bins", type=int, help="histogram bins for Lindsey's method")
    p.add_argument("--orders", type=_orders, help="candidate polynomial orders, e.g. 2-7")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tweedie-shrink", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("run", "full two-step pipeline"),
        ("step1", "load, z-transform, sample, write posterior medians"),
        ("step2", "correct a saved posterior_summary.csv (use --input for its path)"),
    ):
        _add_common(sub.add_parser(name, help=help_))

    fig = sub.add_parser("figures", help="write figure-data CSVs for a finished run")
    fig.add_argument("run_dir", type=Path)
    fig.add_argument("--out", type=Path, help="where to write (default: run_dir)")

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("kind", choices=("conjugate", "bimodal"))
    sim.add_argument("path", type=Path)
    sim.add_argument("-n", type=int, default=None)
    sim.add_argument("--seed", type=int, default=42)
    return parser


def _config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = dict(seed=args.seed, sigma2=args.sigma2, bins=args.bins, orders=args.orders,
                     out=args.out, column=args.column)
    if args.command != "step2":
        overrides["input"] = args.input
    return with_overrides(config, **overrides)


def _print_report(report) -> None:
    t = report.tables
    for name in ("table1", "table2", "table3", "table5"):
        stats = t.get(name, {})
        if "skipped" in stats or not stats:
            continue
        print(f"{name}: " + "  ".join(f"{k}={stats[k]:.4g}" for k in ("min", "q1", "mean", "q3", "max", "sd")))
    if "table4" in t and "aic" in t["table4"]:
        aic = t["table4"]["aic"]
        print("table4: " + "  ".join(f"{j}:{a:.2f}" for j, a in aic.items())
              + f"  -> order {t['table4']['selected_order']}")
    if report.permanent_share is not None:
        print(f"permanent_share={report.permanent_share:.4f}  sd_reduction={report.sd_reduction:.4f}")
    if report.headline_means:
        print("headline_means: " + "  ".join(f"{k}={v:.4g}" for k, v in report.headline_means.items()))
    if report.diagnostics:
        print(f"rhat_worst={report.diagnostics['rhat_worst']:.4f}  ess_min={report.diagnostics['ess_min']:.1f}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            if args.kind == "conjugate":
                _, y = conjugate_dataset(args.n or 10_000, args.seed)
            else:
                _, y = bimodal_dataset(args.n or 5_000, args.seed)
            write_dataset(args.path, y)
            return 0
        if args.command == "figures":
            report = load_run(args.run_dir)
            for p in emit_figures(report, args.out or args.run_dir):
                print(p)
            return 0

        try:
            config = _config(args)
        except TweedieShrinkError as exc:
            raise StageError("config", exc) from exc
        if args.command == "run":
            report = run_pipeline(config)
        elif args.command == "step1":
            report = run_step1(config)
        else:
            report = run_step2(config, medians_path=args.input)
        _print_report(report)
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    except (TweedieShrinkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
