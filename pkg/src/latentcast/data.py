"""CSV ingestion, chronological splitting, and sliding-window sample construction.

The CSV format mirrors the public long-horizon benchmark distributions:
UTF-8, comma-separated, one header row, an optional leading "date" column,
and numeric channel columns. Rows whose cells parse to non-finite values are
dropped and counted; blank or unparsable cells are hard errors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

_DATE_NAMES = {"date", "timestamp", "time"}


@dataclass
class MultiSeries:
    """A V-channel, N-step real-valued series."""

    channels: list[str]
    values: np.ndarray                      # (V, N) float64
    timestamps: list[str] | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.channels):
            raise DataError(
                f"series values {self.values.shape} do not match {len(self.channels)} channels"
            )

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def section(self, start: int, stop: int) -> "MultiSeries":
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return MultiSeries(self.channels, self.values[:, start:stop].copy(), ts)


@dataclass
class WindowSample:
    """A lookback window and its contiguous forecast target."""

    input: np.ndarray    # (V, L)
    target: np.ndarray   # (V, H)
    origin: int          # target begins at origin + L


def load_csv(path) -> MultiSeries:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        has_date = bool(header) and header[0].strip().lower() in _DATE_NAMES
        names = [h.strip() for h in (header[1:] if has_date else header)]
        if not names:
            raise DataError(f"{path}: no channel columns in header")

        rows: list[list[float]] = []
        stamps: list[str] = []
        dropped = 0
        for i, raw in enumerate(reader, start=1):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}: row {i} has {len(raw)} cells, expected {len(header)}")
            cells = raw[1:] if has_date else raw
            parsed = []
            for name, cell in zip(names, cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i}, column '{name}': cannot parse {cell!r}"
                    ) from None
            if not all(math.isfinite(x) for x in parsed):
                dropped += 1
                continue
            rows.append(parsed)
            if has_date:
                stamps.append(raw[0])
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    values = np.asarray(rows, dtype=np.float64).T
    return MultiSeries(channels=names, values=values,
                       timestamps=stamps if has_date else None, dropped_rows=dropped)


def save_csv(series: MultiSeries, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if series.timestamps is not None:
            writer.writerow(["date"] + series.channels)
            for i in range(series.length):
                writer.writerow([series.timestamps[i]]
                                + [repr(float(v)) for v in series.values[:, i]])
        else:
            writer.writerow(series.channels)
            for i in range(series.length):
                writer.writerow([repr(float(v)) for v in series.values[:, i]])


def split(series: MultiSeries, train_frac: float = 0.7, val_frac: float = 0.1,
          min_len: int | None = None) -> tuple[MultiSeries, MultiSeries, MultiSeries]:
    """Chronological, contiguous, non-overlapping train/val/test split."""
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise ConfigError(
            f"split fractions must be positive and sum below 1, got {train_frac}, {val_frac}"
        )
    n = series.length
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    parts = (series.section(0, n_train),
             series.section(n_train, n_train + n_val),
             series.section(n_train + n_val, n))
    if min_len is not None:
        for name, part in zip(("train", "val", "test"), parts):
            if part.length < min_len:
                raise ConfigError(
                    f"{name} segment has {part.length} steps, needs at least {min_len}"
                )
    return parts


def make_windows(series: MultiSeries, lookback: int, horizon: int,
                 stride: int = 1) -> list[WindowSample]:
    """All windows at origins 0, stride, 2*stride, ... up to N-L-H; none dropped."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    n = series.length
    if n < lookback + horizon:
        raise ConfigError(
            f"series of {n} steps is too short for lookback {lookback} + horizon {horizon}"
        )
    samples = []
    for origin in range(0, n - lookback - horizon + 1, stride):
        samples.append(WindowSample(
            input=series.values[:, origin : origin + lookback].copy(),
            target=series.values[:, origin + lookback : origin + lookback + horizon].copy(),
            origin=origin,
        ))
    return samples
