"""Loading univariate data, descriptive summaries and histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    InputError,
    InvalidScheme,
    NonFiniteValue,
    NoUsableRows,
)

__all__ = [
    "Sample",
    "SummaryStats",
    "BinScheme",
    "Histogram",
    "load_samples",
    "summary_stats",
    "histogram",
    "quantile",
]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    """Raw univariate observations."""

    values: np.ndarray
    source_label: str = ""
    skipped: int = 0

    def __post_init__(self):
        arr = _frozen(np.ravel(self.values))
        if arr.size < 2:
            raise EmptyInput(f"a sample needs at least 2 values, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("sample contains NaN or infinite values")
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class SummaryStats:
    min: float
    q1: float
    mean: float
    q3: float
    max: float
    sd: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("min", "q1", "mean", "q3", "max", "sd")}


def quantile(values, probs):
    """Type-7 quantile (linear interpolation between order statistics)."""
    return np.quantile(np.asarray(values, dtype=float), probs, method="linear")


def summary_stats(sample: Sample | Sequence[float]) -> SummaryStats:
    """Table-style summary: min, quartiles, mean, max and sd (ddof=1).

    Quartiles use the type-7 rule. A single value has ``sd = 0``.
    """
    x = sample.values if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    x = np.ravel(x)
    if x.size == 0:
        raise EmptyInput("summary of an empty sample")
    q1, q3 = quantile(x, [0.25, 0.75])
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return SummaryStats(
        min=float(x.min()),
        q1=float(q1),
        mean=float(np.mean(x)),
        q3=float(q3),
        max=float(x.max()),
        sd=sd,
    )


def _parse_cell(text: str, lineno: int) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"line {lineno}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"line {lineno}: non-finite value {text!r}")
    return value


def load_samples(
    path: str | Path,
    column: str | int = 0,
    delimiter: str | None = None,
) -> Sample:
    """Read one numeric column from a delimited text file with a header row.

    ``column`` is a header name or a 0-based index. Blank lines and empty
    cells are skipped and counted in ``Sample.skipped``; anything else that
    does not parse as a finite real is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise NoUsableRows(f"{path} is empty") from None
        header = [h.strip() for h in header]
        idx = _resolve_column(header, column)

        values: list[float] = []
        skipped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                skipped += 1
                continue
            if idx >= len(row):
                skipped += 1
                continue
            value = _parse_cell(row[idx], lineno)
            if value is None:
                skipped += 1
                continue
            values.append(value)

    if not values:
        raise NoUsableRows(f"{path}: no usable rows in column {header[idx]!r}")
    if len(values) < 2:
        raise NoUsableRows(f"{path}: need at least 2 values, found {len(values)}")
    return Sample(np.array(values), source_label=f"{path.name}:{header[idx]}", skipped=skipped)


def _resolve_column(header: list[str], column: str | int) -> int:
    if isinstance(column, str) and column in header:
        return header.index(column)
    if isinstance(column, str) and column.strip().lstrip("-").isdigit():
        column = int(column)
    if isinstance(column, int):
        if not 0 <= column < len(header):
            raise InputError(f"column index {column} out of range (0..{len(header) - 1})")
        return column
    raise InputError(f"column {column!r} not found in header {header}")


@dataclass(frozen=True)
class BinScheme:
    """Equal-width binning: either ``n_bins`` or ``width``, over [lo, hi].

    ``lo``/``hi`` left as None are taken from the data range.
    """

    n_bins: int | None = None
    width: float | None = None
    lo: float | None = None
    hi: float | None = None

    @classmethod
    def count(cls, n_bins: int, lo: float | None = None, hi: float | None = None) -> "BinScheme":
        return cls(n_bins=n_bins, lo=lo, hi=hi)

    @classmethod
    def fixed_width(cls, width: float, lo: float, hi: float) -> "BinScheme":
        return cls(width=width, lo=lo, hi=hi)

    def edges(self, values: np.ndarray | None = None) -> np.ndarray:
        if (self.n_bins is None) == (self.width is None):
            raise InvalidScheme("give exactly one of n_bins or width")
        lo, hi = self.lo, self.hi
        if lo is None or hi is None:
            if values is None or np.size(values) == 0:
                raise InvalidScheme("data range needed but no values given")
            lo = float(np.min(values)) if lo is None else lo
            hi = float(np.max(values)) if hi is None else hi
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise InvalidScheme(f"need lo < hi, got [{lo}, {hi}]")
        if self.n_bins is not None:
            if int(self.n_bins) != self.n_bins or self.n_bins < 2:
                raise InvalidScheme(f"n_bins must be an integer >= 2, got {self.n_bins}")
            k = int(self.n_bins)
        else:
            if not self.width > 0:
                raise InvalidScheme(f"width must be positive, got {self.width}")
            ratio = (hi - lo) / self.width
            k = int(round(ratio))
            if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
                raise InvalidScheme(f"[{lo}, {hi}] is not a whole number of bins of width {self.width}")
        return np.linspace(lo, hi, k + 1)

    def as_dict(self) -> dict:
        return {"n_bins": self.n_bins, "width": self.width, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    n_below: int = 0
    n_above: int = 0
    midpoints: np.ndarray = field(init=False)

    def __post_init__(self):
        edges = _frozen(self.edges)
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        if edges.ndim != 1 or edges.size != counts.size + 1:
            raise InvalidScheme("need len(edges) == len(counts) + 1")
        if not np.all(np.diff(edges) > 0):
            raise InvalidScheme("edges must be strictly increasing")
        mids = (edges[:-1] + edges[1:]) / 2
        mids.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "midpoints", mids)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def width(self) -> float:
        return float((self.edges[-1] - self.edges[0]) / self.n_bins)

    @property
    def out_of_range(self) -> int:
        return self.n_below + self.n_above

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["midpoint", "count"])
            for m, c in zip(self.midpoints, self.counts):
                w.writerow([repr(float(m)), int(c)])


def tally(values: Iterable[float], edges: np.ndarray) -> Histogram:
    """Count values into half-open bins ``[e_k, e_k+1)``; the last bin is closed."""
    x = np.asarray(values, dtype=float).ravel()
    edges = np.asarray(edges, dtype=float)
    k = edges.size - 1
    below = x < edges[0]
    above = x > edges[-1]
    inside = x[~(below | above)]
    idx = np.searchsorted(edges, inside, side="right") - 1
    idx[idx == k] = k - 1
    counts = np.bincount(idx, minlength=k)
    return Histogram(edges, counts, n_below=int(below.sum()), n_above=int(above.sum()))


def histogram(values: Sequence[float], scheme: BinScheme | int) -> Histogram:
    """Equal-width histogram of ``values``.

    ``scheme`` may be a bare integer, meaning that many bins over the data
    range. Values outside a fixed range are excluded from the counts and
    reported in ``n_below``/``n_above``.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("histogram of an empty sequence")
    if not isinstance(scheme, BinScheme):
        scheme = BinScheme.count(scheme)
    return tally(x, scheme.edges(x))
