"""Panels of time series, lag designs, preprocessing and CSV I/O.

Lag-design layout
-----------------
For lag order ``p`` the regression inputs are arranged in series blocks: input
column ``b * p + (l - 1)`` holds lag ``l`` (``l = 1..p``) of series ``b``.  Row
``t`` of the design therefore reads ``(y[t-1, 0], ..., y[t-p, 0], y[t-1, 1], ...,
y[t-p, K-1])``.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (DegenerateSeriesError, InsufficientDataError,
                     InvalidInputError, NumericalFailure, ParseError)

TRANSFORM_SHRINK = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2}


@dataclass(frozen=True)
class TimeSeriesPanel:
    """``T x K`` observations, one column per series, oldest row first."""

    values: np.ndarray
    series_names: tuple
    frequency_tag: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError(f"panel values must be a non-empty T x K matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("panel values must be finite")
        names = tuple(str(s) for s in self.series_names)
        if len(names) != v.shape[1]:
            raise InvalidInputError(
                f"{len(names)} series names for {v.shape[1]} columns")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "series_names", names)

    @classmethod
    def from_array(cls, values, series_names=None, frequency_tag=""):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if series_names is None:
            series_names = [f"y{k + 1}" for k in range(values.shape[1])]
        return cls(values, tuple(series_names), frequency_tag)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def rows(self, rows) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.values[_as_slice(rows, self.T)], self.series_names,
                               self.frequency_tag)


@dataclass(frozen=True)
class LagDesign:
    """Regression pair ``(inputs, outputs)`` built from a panel.

    ``target_rows`` records which panel rows the outputs come from; all index
    bookkeeping (e.g. hold-out leakage checks) goes through it.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    lag_order: int
    target_rows: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return self.outputs.shape[1]

    @property
    def n_rows(self) -> int:
        return self.outputs.shape[0]

    def input_rows(self) -> np.ndarray:
        """Every panel row touched by the inputs."""
        p = self.lag_order
        r = self.target_rows[:, None] - np.arange(1, p + 1)[None, :]
        return np.unique(r)

    def block(self, b) -> np.ndarray:
        p = self.lag_order
        return self.inputs[:, b * p:(b + 1) * p]


@dataclass(frozen=True)
class StandardizationStats:
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))
        if np.any(~(self.scales > 0)):
            raise InvalidInputError("standardization scales must be positive")

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.means) / self.scales

    def invert(self, values):
        return np.asarray(values, dtype=float) * self.scales + self.means


def _as_slice(rows, n):
    if isinstance(rows, slice):
        return rows
    if isinstance(rows, range):
        if rows.step != 1:
            raise InvalidInputError("row ranges must be contiguous")
        return slice(rows.start, rows.stop)
    rows = tuple(rows)
    if len(rows) != 2:
        raise InvalidInputError(f"unrecognised row range {rows!r}")
    return slice(int(rows[0]), int(rows[1]))


def _row_indices(rows, n):
    """Row indices from a slice, range, ``(start, stop)`` pair or an integer ndarray."""
    if isinstance(rows, np.ndarray):
        idx = rows.astype(int, copy=False)
        if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= n)):
            raise InvalidInputError(f"row indices must lie in [0, {n})")
        return idx
    return np.arange(n)[_as_slice(rows, n)]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path, frequency_tag="") -> TimeSeriesPanel:
    """Read a panel from a header-plus-numeric-rows CSV file (oldest row first)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=1)
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise ParseError("header has empty series names", row=1)
        K = len(header)
        rows = []
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != K:
                raise ParseError(f"expected {K} cells, found {len(rec)}", row=i)
            vals = []
            for j, cell in enumerate(rec, start=1):
                cell = cell.strip()
                if cell == "":
                    raise ParseError("missing value", row=i, column=j)
                try:
                    x = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=i, column=j)
                if not math.isfinite(x):
                    raise ParseError(f"non-finite cell {cell!r}", row=i, column=j)
                vals.append(x)
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", row=2)
    return TimeSeriesPanel(np.array(rows), tuple(header), frequency_tag)


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_csv(panel: TimeSeriesPanel, path):
    lines = [",".join(panel.series_names)]
    for row in panel.values:
        lines.append(",".join(repr(float(x)) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# standardisation
# ---------------------------------------------------------------------------

def standardize(panel: TimeSeriesPanel, training_rows):
    """Centre and scale every series with statistics from ``training_rows`` only.

    Returns the transformed panel (all rows) and the statistics used.  Scales
    are sample standard deviations (``ddof=1``).
    """
    idx = _row_indices(training_rows, panel.T)
    if idx.size == 0:
        raise InvalidInputError("training_rows is empty or outside the panel")
    train = panel.values[idx]
    with np.errstate(over="ignore", invalid="ignore"):
        means = train.mean(axis=0)
    if idx.size < 2:
        raise DegenerateSeriesError("need at least two training rows to estimate scales",
                                    series=panel.series_names[0])
    with np.errstate(over="ignore", invalid="ignore"):
        scales = train.std(axis=0, ddof=1)
    for k, s in enumerate(scales):
        if not (np.isfinite(s) and np.isfinite(means[k])):
            raise NumericalFailure(
                f"series {panel.series_names[k]!r} overflows when estimating its scale")
        if not s > 0:
            raise DegenerateSeriesError(
                f"series {panel.series_names[k]!r} is constant on the training window",
                series=panel.series_names[k])
    stats = StandardizationStats(means, scales)
    return TimeSeriesPanel(stats.apply(panel.values), panel.series_names,
                           panel.frequency_tag), stats


# ---------------------------------------------------------------------------
# stationarising transforms
# ---------------------------------------------------------------------------

def _log_checked(z):
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        raise InvalidInputError(
            f"log transform needs positive values; index {int(bad[0])} is {z[bad[0]]!r}")
    return np.log(z)


def apply_transform(series, code: int) -> np.ndarray:
    """Stationarising transform by code.

    ====  ======================================
    code  output
    ====  ======================================
    1     ``z_t``
    2     ``z_t - z_{t-1}``
    3     ``(z_t - z_{t-1}) - (z_{t-1} - z_{t-2})``
    4     ``log z_t``
    5     ``log(z_t / z_{t-1})``
    6     ``log(z_t / z_{t-1}) - log(z_{t-1} / z_{t-2})``
    ====  ======================================
    """
    z = np.asarray(series, dtype=float)
    if code not in TRANSFORM_SHRINK:
        raise InvalidInputError(f"unknown transform code {code!r}")
    if code == 1:
        return z.copy()
    if code == 2:
        return np.diff(z)
    if code == 3:
        return np.diff(z, n=2)
    lz = _log_checked(z)
    if code == 4:
        return lz
    if code == 5:
        return np.diff(lz)
    return np.diff(lz, n=2)


def year_over_year_log_diff(series, period: int) -> np.ndarray:
    z = np.asarray(series, dtype=float)
    if period < 1:
        raise InvalidInputError("period must be a positive integer")
    if z.shape[0] <= period:
        raise InsufficientDataError(f"series of length {z.shape[0]} is too short for period {period}")
    lz = _log_checked(z)
    return lz[period:] - lz[:-period]


def quarterly_average(series) -> np.ndarray:
    z = np.asarray(series, dtype=float)
    n = (z.shape[0] // 3) * 3
    if n != z.shape[0]:
        warnings.warn(f"dropping {z.shape[0] - n} trailing month(s) of a partial quarter",
                      stacklevel=2)
    return z[:n].reshape(-1, 3).mean(axis=1)


def clean_outliers(series, multiple=6.0, window=5) -> np.ndarray:
    """Replace gross outliers by the median of the preceding cleaned values.

    An observation is an outlier when its absolute deviation from the series
    median exceeds ``multiple`` times the interquartile range (quartiles by
    linear interpolation).  The first ``window`` observations are kept as is.
    """
    z = np.array(series, dtype=float)
    if z.shape[0] < window + 1:
        raise InvalidInputError(f"need at least {window + 1} observations")
    med = np.median(z)
    q1, q3 = np.percentile(z, [25.0, 75.0])
    bound = multiple * (q3 - q1)
    out = z.copy()
    for t in range(window, z.shape[0]):
        if abs(z[t] - med) > bound:
            out[t] = np.median(out[t - window:t])
    return out


# ---------------------------------------------------------------------------
# lag designs
# ---------------------------------------------------------------------------

def lag_design_for_rows(values, p: int, target_rows) -> LagDesign:
    """Lag design with one output row per index in ``target_rows``.

    Every target needs ``p`` preceding rows in ``values``.
    """
    Y = np.asarray(values, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    rows = np.asarray(target_rows, dtype=int).reshape(-1)
    if p < 1:
        raise InvalidInputError("lag order must be at least 1")
    if rows.size and (rows.min() < p or rows.max() >= Y.shape[0]):
        raise InsufficientDataError(
            f"target rows need {p} preceding observations inside the panel")
    T, K = Y.shape
    lags = rows[:, None] - np.arange(1, p + 1)[None, :]      # (n, p)
    X = Y[lags]                                                # (n, p, K)
    X = np.transpose(X, (0, 2, 1)).reshape(rows.size, K * p)  # series blocks
    return LagDesign(X, Y[rows].copy(), p, rows)


def build_lag_design(panel, p: int) -> LagDesign:
    values = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, float)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    if T <= p:
        raise InsufficientDataError(f"need more than {p} observations, got {T}")
    return lag_design_for_rows(values, p, np.arange(p, T))


def lag_vector(recent_history) -> np.ndarray:
    """Input row for the next time point from the ``p`` latest observations (newest last)."""
    H = np.asarray(recent_history, dtype=float)
    return H[::-1].T.reshape(-1)


def apply_recipe(panel: TimeSeriesPanel, recipe: Optional[dict]) -> TimeSeriesPanel:
    """Apply a transform recipe to every series of a panel.

    ``recipe`` keys: ``quarterly`` (list of series names, or true for all),
    ``codes`` (series name -> transform code), ``yoy_period`` (int, applied to
    every series), ``clean_outliers`` (bool).  Series are aligned at the end
    after transforms shorten them.
    """
    if not recipe:
        return panel
    names = panel.series_names
    cols = [panel.values[:, k].copy() for k in range(panel.K)]
    q = recipe.get("quarterly")
    if q:
        qset = set(names) if q is True else set(q)
        cols = [quarterly_average(c) if n in qset else c for c, n in zip(cols, names)]
    codes = recipe.get("codes") or {}
    cols = [apply_transform(c, int(codes.get(n, 1))) for c, n in zip(cols, names)]
    period = recipe.get("yoy_period")
    if period:
        cols = [year_over_year_log_diff(c, int(period)) for c in cols]
    if recipe.get("clean_outliers"):
        cols = [clean_outliers(c) for c in cols]
    n = min(len(c) for c in cols)
    values = np.column_stack([c[len(c) - n:] for c in cols])
    return TimeSeriesPanel(values, names, panel.frequency_tag)
