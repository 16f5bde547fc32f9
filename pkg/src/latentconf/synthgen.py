"""Synthetic trap-site data with held-out regimes and heteroscedastic noise.

Training rows come from ``n_clusters`` feature-space clusters with low target
noise. A fraction of test rows comes from extra clusters never seen in
training, with high target noise, standing in for an unusual season. Trap
coordinates are drawn from a shared site grid independently of cluster and
noise regime, so geography carries no information about difficulty.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latentconf.dataset import Dataset

FEATURE_NAMES = (
    "lst_day", "lst_night", "ndvi", "ndwi", "ndmi", "ndbi",
    "precip", "elevation", "slope", "aspect", "dist_water", "wetland_frac",
)

CENTER_SCALE = 3.0
BASE_COUNT = 200.0
LINEAR_SCALE = 4.0
WAVE_AMPLITUDE = 30.0
WAVE_FREQUENCY = 0.3
GRID_SIDE = 6
LAT_RANGE = (45.0, 46.0)
LON_RANGE = (11.0, 12.5)
SITE_JITTER = 0.02
TRAIN_YEARS = (2010, 2020)
TEST_YEAR = 2021
DEFAULT_CUTOFF = dt.date(2020, 12, 31)


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 2000
    n_test: int = 500
    n_features: int = 12
    n_clusters: int = 4
    shifted_cluster_fraction: float = 0.3
    noise_low: float = 5.0
    noise_high: float = 80.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train", "n_test", "n_features", "n_clusters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.shifted_cluster_fraction <= 1.0:
            raise ValueError(
                f"shifted_cluster_fraction must be in [0, 1], got {self.shifted_cluster_fraction}"
            )
        if not (0.0 <= self.noise_low <= self.noise_high and math.isfinite(self.noise_high)):
            raise ValueError(
                f"need 0 <= noise_low <= noise_high, got {self.noise_low}, {self.noise_high}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def n_shifted_clusters(self) -> int:
        return max(1, self.n_clusters // 2)


@dataclass(frozen=True, eq=False)
class SynthMeta:
    """Per-row ground truth, aligned with train rows followed by test rows."""

    ids: tuple[str, ...]
    cluster: np.ndarray
    shifted: np.ndarray
    noise_std: np.ndarray
    signal: np.ndarray

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "cluster", "shifted", "noise_std"])
            for i, c, s, sd in zip(self.ids, self.cluster, self.shifted, self.noise_std):
                writer.writerow([i, int(c), int(s), repr(float(sd))])


@dataclass(frozen=True, eq=False)
class _Signal:
    linear: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        waves = np.sin(x @ self.freqs + self.phases).sum(axis=1)
        return BASE_COUNT + x @ self.linear + WAVE_AMPLITUDE * waves


def feature_names(n: int) -> tuple[str, ...]:
    return tuple(FEATURE_NAMES[j] if j < len(FEATURE_NAMES) else f"feat_{j}" for j in range(n))


def _dates(rng: np.random.Generator, n: int, years: tuple[int, int]) -> list[dt.date]:
    # collection season: May 1 + up to 183 days
    year = rng.integers(years[0], years[1] + 1, size=n)
    offset = rng.integers(0, 184, size=n)
    return [dt.date(int(y), 5, 1) + dt.timedelta(days=int(o)) for y, o in zip(year, offset)]


def generate(cfg: SynthConfig) -> tuple[Dataset, Dataset, SynthMeta]:
    """Draw a train/test pair whose split is reproduced by ``split_by_date`` at 2020-12-31."""
    rng = np.random.default_rng(cfg.seed)
    p = cfg.n_features
    n_in, n_out = cfg.n_clusters, cfg.n_shifted_clusters
    centers = rng.normal(0.0, CENTER_SCALE, size=(n_in + n_out, p))
    signal = _Signal(
        linear=rng.normal(0.0, LINEAR_SCALE / math.sqrt(p), size=p),
        freqs=rng.normal(0.0, WAVE_FREQUENCY, size=(p, cfg.n_clusters)),
        phases=rng.uniform(0.0, 2.0 * math.pi, size=cfg.n_clusters),
    )

    n_shift = int(round(cfg.shifted_cluster_fraction * cfg.n_test))
    cluster = np.concatenate([
        rng.integers(0, n_in, size=cfg.n_train),
        rng.integers(0, n_in, size=cfg.n_test - n_shift),
        rng.integers(n_in, n_in + n_out, size=n_shift),
    ])
    n = cfg.n_train + cfg.n_test
    test_order = rng.permutation(cfg.n_test)
    cluster[cfg.n_train:] = cluster[cfg.n_train:][test_order]
    shifted = cluster >= n_in

    x = centers[cluster] + rng.standard_normal((n, p))
    noise_std = np.where(shifted, cfg.noise_high, cfg.noise_low)
    clean = signal(x)
    y = np.maximum(0.0, clean + noise_std * rng.standard_normal(n))

    grid_lat = np.linspace(*LAT_RANGE, GRID_SIDE)
    grid_lon = np.linspace(*LON_RANGE, GRID_SIDE)
    site = rng.integers(0, GRID_SIDE * GRID_SIDE, size=n)
    lat = grid_lat[site // GRID_SIDE] + SITE_JITTER * rng.standard_normal(n)
    lon = grid_lon[site % GRID_SIDE] + SITE_JITTER * rng.standard_normal(n)

    dates = _dates(rng, cfg.n_train, TRAIN_YEARS) + _dates(rng, cfg.n_test, (TEST_YEAR, TEST_YEAR))
    ids = [f"obs{i:06d}" for i in range(n)]
    names = feature_names(p)

    def part(sl: slice) -> Dataset:
        return Dataset(ids[sl], lat[sl], lon[sl], dates[sl], x[sl], names, y[sl])

    meta = SynthMeta(tuple(ids), cluster, shifted, noise_std, clean)
    return part(slice(0, cfg.n_train)), part(slice(cfg.n_train, n)), meta


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Rows of ``a`` followed by rows of ``b``."""
    if a.feature_names != b.feature_names:
        raise ValueError("feature names differ")
    if a.labeled != b.labeled:
        raise ValueError("cannot concatenate labeled and unlabeled datasets")
    return Dataset(
        a.ids + b.ids,
        np.concatenate([a.lat, b.lat]),
        np.concatenate([a.lon, b.lon]),
        a.dates + b.dates,
        np.vstack([a.features, b.features]),
        a.feature_names,
        None if a.target is None else np.concatenate([a.target, b.target]),
    )
