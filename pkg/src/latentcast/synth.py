"""Synthetic regime-switching series with ground-truth switch times.

Mode 1 is a noisy linear trend; Mode 2 adds a fixed intercept offset on top of
the same trend. The process jumps instantaneously between the two modes at
random dwell intervals, so switches land in every sufficiently long split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MultiSeries, save_csv
from .errors import ConfigError


@dataclass
class RegimeConfig:
    slope: float = 0.01
    noise_std: float = 0.1
    offset: float = 3.0
    min_dwell: int = 100
    max_dwell: int = 300
    length: int = 8000
    seed: int = 0
    channels: int = 1


@dataclass
class LabeledSeries:
    series: MultiSeries
    regime: np.ndarray          # per-step label in {1, 2}
    switch_times: list[int]     # step indices where the label changes

    def labels_dict(self) -> dict:
        return {
            "switch_times": [int(t) for t in self.switch_times],
            "regime": [int(r) for r in self.regime],
        }


def gen_regime_switch(cfg: RegimeConfig) -> LabeledSeries:
    """Generate a labeled series, deterministic given the seed.

    Dwell times are drawn uniformly from [min_dwell, max_dwell]; the regime
    schedule is drawn before the noise so the draw order is reproducible.
    """
    if not (1 <= cfg.min_dwell <= cfg.max_dwell < cfg.length):
        raise ConfigError(
            f"dwell range [{cfg.min_dwell}, {cfg.max_dwell}] invalid for length {cfg.length}"
        )
    if cfg.noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {cfg.noise_std}")
    if cfg.channels < 1:
        raise ConfigError(f"channels must be >= 1, got {cfg.channels}")

    rng = np.random.default_rng(cfg.seed)
    regime = np.ones(cfg.length, dtype=int)
    switch_times: list[int] = []
    pos, mode = 0, 1
    while True:
        dwell = int(rng.integers(cfg.min_dwell, cfg.max_dwell + 1))
        pos += dwell
        if pos >= cfg.length:
            break
        mode = 2 if mode == 1 else 1
        switch_times.append(pos)
        regime[pos:] = mode

    trend = cfg.slope * np.arange(cfg.length, dtype=float)
    noise = rng.normal(0.0, cfg.noise_std, size=(cfg.channels, cfg.length))
    values = trend[None, :] + noise + cfg.offset * (regime == 2)[None, :]
    names = [f"ch{i + 1}" for i in range(cfg.channels)]
    return LabeledSeries(series=MultiSeries(channels=names, values=values),
                         regime=regime, switch_times=switch_times)


def save_labeled(labeled: LabeledSeries, csv_path, labels_path) -> None:
    """Write the series CSV plus the sidecar JSON with switch times and labels."""
    save_csv(labeled.series, csv_path)
    Path(labels_path).write_text(json.dumps(labeled.labels_dict()), encoding="utf-8")


def load_labels(labels_path) -> dict:
    return json.loads(Path(labels_path).read_text(encoding="utf-8"))
