"""Dataset ingestion, chronological splits, sliding windows and value statistics."""
from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.preprocessing import StandardScaler

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
ETT_RATIOS = (0.6, 0.2, 0.2)
DEFAULT_RATIOS = (0.7, 0.1, 0.2)
# Benchmark ETT borders: 12/4/4 months of the first 20 months.
_HOURS_PER_MONTH = 30 * 24


class DataError(ValueError):
    """Input data is missing, malformed or too short."""


@dataclass
class RawSeries:
    timestamps: list
    values: np.ndarray
    channel_names: list
    name: str = ""

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def _parse_time(text: str):
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


def load_csv(path: str | os.PathLike, date_column: str = "date") -> RawSeries:
    """Read a benchmark-style CSV: header row, timestamp column first, one column per channel."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column and at least one channel")
        if header[0] != date_column:
            raise DataError(f"{path}: first column must be {date_column!r}, found {header[0]!r}")
        names = header[1:]
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col, cell in zip(names, row[1:]):
                cell = cell.strip()
                try:
                    if not cell:
                        raise ValueError("blank cell")
                    v = float(cell)
                except ValueError as exc:
                    raise DataError(
                        f"{path}: line {lineno}, column {col!r}: cannot parse {cell!r} ({exc})"
                    ) from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: line {lineno}, column {col!r}: non-finite value")
                vals.append(v)
            stamps.append(row[0].strip())
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(rows)}")

    parsed = [_parse_time(s) for s in stamps]
    keys = parsed if all(p is not None for p in parsed) else stamps
    for i in range(1, len(keys)):
        if keys[i] == keys[i - 1]:
            raise DataError(f"{path}: duplicate timestamp {stamps[i]!r} at line {i + 2}")
        if keys[i] < keys[i - 1]:
            raise DataError(f"{path}: timestamps not increasing at line {i + 2}")

    name = os.path.splitext(os.path.basename(path))[0]
    return RawSeries(stamps, np.asarray(rows, dtype=np.float64), names, name)


def write_csv(series: RawSeries, path: str | os.PathLike):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *series.channel_names])
        for ts, row in zip(series.timestamps, series.values):
            w.writerow([ts, *(repr(float(v)) for v in row)])


# --- splits and windows ----------------------------------------------------

def is_ett(name: str) -> bool:
    return name.upper().startswith("ETT")


def split_borders(n_steps: int, lookback: int, scheme: str = "auto",
                  name: str = "") -> dict:
    """Row ranges ``(start, end)`` read by each split.

    Label windows never overlap between splits; val and test ranges start
    ``lookback`` rows early so their first inputs reach back into the
    previous split. Schemes:

    ``ratio``      6:2:2 for ETT names, 7:1:2 otherwise, over the whole series
    ``benchmark``  ETT month borders (12/4/4 months; hourly or 15-minute rows)
    ``auto``       ``benchmark`` for ETT series long enough, else ``ratio``
    """
    if scheme == "auto":
        scheme = "ratio"
        if is_ett(name):
            per_month = _HOURS_PER_MONTH * (4 if name.upper().startswith("ETTM") else 1)
            if n_steps >= 20 * per_month:
                scheme = "benchmark"
    if scheme == "benchmark":
        per_month = _HOURS_PER_MONTH * (4 if name.upper().startswith("ETTM") else 1)
        n_train, n_val, n_test = 12 * per_month, 4 * per_month, 4 * per_month
        if n_train + n_val + n_test > n_steps:
            raise DataError(f"series of {n_steps} rows is shorter than the benchmark ETT borders")
        ends = (n_train, n_train + n_val, n_train + n_val + n_test)
    elif scheme == "ratio":
        r_train, _, r_test = ETT_RATIOS if is_ett(name) else DEFAULT_RATIOS
        n_train = int(n_steps * r_train)
        n_test = int(n_steps * r_test)
        ends = (n_train, n_steps - n_test, n_steps)
    else:
        raise ValueError(f"unknown split scheme {scheme!r}")
    starts = (0, max(ends[0] - lookback, 0), max(ends[1] - lookback, 0))
    return {s: (a, b) for s, a, b in zip(SPLITS, starts, ends)}


def n_windows(range_len: int, lookback: int, horizon: int) -> int:
    return max(range_len - lookback - horizon + 1, 0)


def make_windows(values: np.ndarray, lookback: int, horizon: int, start: int = 0,
                 end: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield every stride-1 ``(X, Y)`` pair in ``values[start:end]`` as (N, L) and (N, tau)."""
    values = np.asarray(values)
    end = values.shape[0] if end is None else end
    count = n_windows(end - start, lookback, horizon)
    if count == 0:
        warnings.warn(f"range [{start}, {end}) is shorter than lookback + horizon; no windows",
                      stacklevel=2)
        return
    for t in range(start, start + count):
        yield values[t:t + lookback].T, values[t + lookback:t + lookback + horizon].T


def window_arrays(values: np.ndarray, lookback: int, horizon: int, start: int = 0,
                  end: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All windows of ``values[start:end]`` stacked as (n, N, L) and (n, N, tau) arrays."""
    values = np.asarray(values, dtype=np.float64)
    seg = values[start:end]
    count = n_windows(seg.shape[0], lookback, horizon)
    n_ch = values.shape[1]
    if count == 0:
        return np.zeros((0, n_ch, lookback)), np.zeros((0, n_ch, horizon))
    view = sliding_window_view(seg, lookback + horizon, axis=0)[:count]  # (n, N, L + tau)
    return view[..., :lookback].copy(), view[..., lookback:].copy()


@dataclass
class WindowedDataset:
    """Standardised series plus split borders; windows are materialised on demand."""

    values: np.ndarray
    borders: dict
    lookback: int
    horizon: int
    scaler: StandardScaler
    channel_names: list = field(default_factory=list)
    name: str = ""

    @classmethod
    def from_series(cls, series: RawSeries, lookback: int, horizon: int,
                    scheme: str = "auto") -> "WindowedDataset":
        borders = split_borders(series.n_steps, lookback, scheme, series.name)
        train_start, train_end = borders["train"]
        scaler = StandardScaler().fit(series.values[train_start:train_end])
        values = scaler.transform(series.values)
        ds = cls(values, borders, lookback, horizon, scaler, list(series.channel_names),
                 series.name)
        for split in SPLITS:
            if ds.n_windows(split) == 0:
                warnings.warn(f"{series.name or 'series'}: {split} split has no windows",
                              stacklevel=2)
        return ds

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def n_windows(self, split: str) -> int:
        a, b = self.borders[split]
        return n_windows(b - a, self.lookback, self.horizon)

    def windows(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.borders[split]
        return window_arrays(self.values, self.lookback, self.horizon, a, b)

    def iter_windows(self, split: str):
        a, b = self.borders[split]
        return make_windows(self.values, self.lookback, self.horizon, a, b)

    def inverse_transform(self, arr: np.ndarray) -> np.ndarray:
        """Map (..., N, t) standardised values back to raw units."""
        arr = np.asarray(arr, dtype=np.float64)
        mean = self.scaler.mean_[:, None]
        scale = self.scaler.scale_[:, None]
        return arr * scale + mean


# --- statistics ------------------------------------------------------------

def sigma_stats(values, name: str = "") -> dict:
    """Fraction of cells with ``|z| <= 1`` and with ``|z| >= 3``.

    ``z`` uses each channel's full-series mean and population std. Constant
    channels are excluded with a warning; if none remain, DataError.
    """
    if isinstance(values, RawSeries):
        name = name or values.name
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    std = values.std(axis=0)
    keep = std > 0
    excluded = [int(i) for i in np.flatnonzero(~keep)]
    if excluded:
        warnings.warn(f"{name or 'series'}: excluding constant channels {excluded}",
                      stacklevel=2)
    if not keep.any():
        raise DataError(f"{name or 'series'}: every channel is constant")
    z = np.abs((values[:, keep] - values[:, keep].mean(axis=0)) / std[keep])
    return {
        "name": name,
        "n_cells": int(z.size),
        "within_sigma": float(np.mean(z <= 1.0)),
        "beyond_3sigma": float(np.mean(z >= 3.0)),
        "excluded_channels": excluded,
    }


# --- synthetic data --------------------------------------------------------

def synthetic_mixing_series(n_steps: int = 2000, n_channels: int = 8, n_sources: int = 3,
                            noise: float = 0.1, outlier_frac: float = 0.0,
                            outlier_scale: float = 5.0, seed: int = 0,
                            name: str = "synthetic") -> tuple[RawSeries, np.ndarray]:
    """Channels that are fixed convex mixtures of periodic sources, plus Gaussian noise.

    Returns the series and the (n_channels, n_sources) mixing matrix whose rows
    lie on the simplex. With ``outlier_frac > 0`` that fraction of cells is
    shifted by ``outlier_scale`` channel standard deviations (random sign).
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps, dtype=np.float64)
    sources = np.empty((n_steps, n_sources))
    for k in range(n_sources):
        periods = rng.uniform(8.0, 48.0, size=2)
        phases = rng.uniform(0.0, 2 * np.pi, size=2)
        amps = rng.uniform(0.5, 1.5, size=2)
        sources[:, k] = sum(a * np.sin(2 * np.pi * t / p + ph)
                            for a, p, ph in zip(amps, periods, phases))
    mixing = rng.dirichlet(np.ones(n_sources), size=n_channels)
    values = sources @ mixing.T + noise * rng.standard_normal((n_steps, n_channels))
    if outlier_frac > 0:
        mask = rng.random(values.shape) < outlier_frac
        signs = rng.choice([-1.0, 1.0], size=values.shape)
        values = values + mask * signs * outlier_scale * values.std(axis=0)
    start = datetime(2020, 1, 1)
    stamps = [(start + timedelta(hours=i)).isoformat(sep=" ") for i in range(n_steps)]
    names = [f"ch{i}" for i in range(n_channels)]
    return RawSeries(stamps, values, names, name), mixing
