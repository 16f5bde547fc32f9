"""Tabular observation data: CSV ingestion, validation, date split, standardization.

An observation is one trap-site record: an id, planar coordinates in degrees,
a collection date, a vector of environmental/topographic features and a
non-negative count target. Datasets are stored column-wise as read-only numpy
arrays.

CSV layout (UTF-8, comma separated, header mandatory)::

    id,lat,lon,date,<feature...>,target

Any column that is not one of the five reserved names is a feature, in header
order. ``date`` is ISO ``YYYY-MM-DD``.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

RESERVED_COLUMNS = ("id", "lat", "lon", "date", "target")
STD_FLOOR = 1e-8


class DatasetError(ValueError):
    """Raised for schema, validation and split failures."""


@dataclass(frozen=True)
class Observation:
    id: str
    lat: float
    lon: float
    date: dt.date
    features: np.ndarray
    target: float | None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned columns of a set of observations.

    ``target`` is ``None`` for unlabeled data (a CSV without a ``target``
    column loaded with ``require_target=False``).
    """

    ids: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    dates: tuple[dt.date, ...]
    features: np.ndarray
    feature_names: tuple[str, ...]
    target: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(n, -1)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "lat", _readonly(np.asarray(self.lat, dtype=np.float64)))
        object.__setattr__(self, "lon", _readonly(np.asarray(self.lon, dtype=np.float64)))
        object.__setattr__(self, "features", _readonly(features))
        if self.target is not None:
            object.__setattr__(
                self, "target", _readonly(np.asarray(self.target, dtype=np.float64))
            )
        self._validate()

    def _validate(self) -> None:
        n = len(self.ids)
        lengths = {len(self.lat), len(self.lon), len(self.dates), self.features.shape[0]}
        if self.target is not None:
            lengths.add(len(self.target))
        if lengths != {n}:
            raise DatasetError(f"column lengths disagree: {sorted(lengths)} vs {n} ids")
        if self.features.shape[1] != len(self.feature_names):
            raise DatasetError(
                f"feature arity {self.features.shape[1]} != "
                f"{len(self.feature_names)} feature names"
            )
        if len(set(self.ids)) != n:
            seen = set()
            for i in self.ids:
                if i in seen:
                    raise DatasetError(f"duplicate id {i!r}")
                seen.add(i)
        for row in range(n):
            _check_row(
                row + 1,
                self.lat[row],
                self.lon[row],
                self.features[row],
                None if self.target is None else self.target[row],
            )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def coordinates(self) -> np.ndarray:
        """(n, 2) array of (lat, lon)."""
        return np.column_stack([self.lat, self.lon])

    @property
    def labeled(self) -> bool:
        return self.target is not None

    @property
    def observations(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield Observation(
                id=self.ids[i],
                lat=float(self.lat[i]),
                lon=float(self.lon[i]),
                date=self.dates[i],
                features=self.features[i],
                target=None if self.target is None else float(self.target[i]),
            )

    def take(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        """Subset of rows, in the given order."""
        index = np.asarray(index, dtype=np.intp)
        return Dataset(
            ids=[self.ids[i] for i in index],
            lat=self.lat[index],
            lon=self.lon[index],
            dates=[self.dates[i] for i in index],
            features=self.features[index].reshape(len(index), self.n_features),
            feature_names=self.feature_names,
            target=None if self.target is None else self.target[index],
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(
            ids=self.ids,
            lat=self.lat,
            lon=self.lon,
            dates=self.dates,
            features=features,
            feature_names=self.feature_names,
            target=self.target,
        )

    def equals(self, other: "Dataset") -> bool:
        """Field-by-field exact equality."""
        same_target = (self.target is None and other.target is None) or (
            self.target is not None
            and other.target is not None
            and np.array_equal(self.target, other.target)
        )
        return (
            self.ids == other.ids
            and self.dates == other.dates
            and self.feature_names == other.feature_names
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
            and np.array_equal(self.features, other.features)
            and same_target
        )


def _check_row(row, lat, lon, features, target) -> None:
    if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
        raise DatasetError(f"row {row}: lat {lat} outside [-90, 90]")
    if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
        raise DatasetError(f"row {row}: lon {lon} outside [-180, 180]")
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"row {row}: non-finite feature value")
    if target is not None and not (math.isfinite(target) and target >= 0.0):
        raise DatasetError(f"row {row}: target {target} must be finite and >= 0")


def _parse_float(text: str, row: int, column: str) -> float:
    text = text.strip()
    if not text:
        raise DatasetError(f"row {row}: empty cell in column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"row {row}: cannot parse {text!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"row {row}: non-finite value {text!r} in column {column!r}")
    return value


def load_csv(path: str | Path, require_target: bool = True) -> Dataset:
    """Load and validate an observation CSV.

    Row numbers in error messages count data rows from 1 (the header is not
    counted).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: missing header row") from None
        required = RESERVED_COLUMNS if require_target else RESERVED_COLUMNS[:4]
        for column in required:
            if column not in header:
                raise DatasetError(f"{path}: missing required column {column!r}")
        if len(set(header)) != len(header):
            raise DatasetError(f"{path}: duplicate column names in header")
        feature_names = [h for h in header if h not in RESERVED_COLUMNS]
        if not feature_names:
            raise DatasetError(f"{path}: no feature columns")
        pos = {h: k for k, h in enumerate(header)}
        has_target = "target" in pos

        ids, lats, lons, dates, feats, targets = [], [], [], [], [], []
        seen: set[str] = set()
        for row, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != len(header):
                raise DatasetError(
                    f"row {row}: expected {len(header)} cells, found {len(cells)}"
                )
            id_ = cells[pos["id"]].strip()
            if not id_:
                raise DatasetError(f"row {row}: empty cell in column 'id'")
            if id_ in seen:
                raise DatasetError(f"row {row}: duplicate id {id_!r}")
            seen.add(id_)
            try:
                date = dt.date.fromisoformat(cells[pos["date"]].strip())
            except ValueError:
                raise DatasetError(
                    f"row {row}: bad date {cells[pos['date']]!r}, expected YYYY-MM-DD"
                ) from None
            lat = _parse_float(cells[pos["lat"]], row, "lat")
            lon = _parse_float(cells[pos["lon"]], row, "lon")
            x = [_parse_float(cells[pos[f]], row, f) for f in feature_names]
            y = _parse_float(cells[pos["target"]], row, "target") if has_target else None
            _check_row(row, lat, lon, np.asarray(x), y)
            ids.append(id_)
            lats.append(lat)
            lons.append(lon)
            dates.append(date)
            feats.append(x)
            targets.append(y)

    return Dataset(
        ids=ids,
        lat=lats,
        lon=lons,
        dates=dates,
        features=np.asarray(feats, dtype=np.float64).reshape(len(ids), len(feature_names)),
        feature_names=feature_names,
        target=targets if has_target else None,
    )


def write_csv(d: Dataset, path: str | Path) -> None:
    """Write a dataset in the layout read by :func:`load_csv`.

    Floats are written with ``repr`` so a reload is exact.
    """
    header = ["id", "lat", "lon", "date", *d.feature_names]
    if d.labeled:
        header.append("target")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(d)):
            row = [d.ids[i], repr(float(d.lat[i])), repr(float(d.lon[i])), d.dates[i].isoformat()]
            row.extend(repr(float(v)) for v in d.features[i])
            if d.labeled:
                row.append(repr(float(d.target[i])))
            writer.writerow(row)


def split_by_date(
    d: Dataset, cutoff: dt.date, require_test: bool = True
) -> tuple[Dataset, Dataset]:
    """Rows dated on or before ``cutoff`` train, later rows test."""
    if isinstance(cutoff, str):
        cutoff = dt.date.fromisoformat(cutoff)
    mask = np.array([date <= cutoff for date in d.dates], dtype=bool)
    train_idx = np.flatnonzero(mask)
    test_idx = np.flatnonzero(~mask)
    if len(train_idx) == 0:
        raise DatasetError(f"no rows dated on or before {cutoff}: train split is empty")
    if require_test and len(test_idx) == 0:
        raise DatasetError(f"no rows dated after {cutoff}: test split is empty")
    return d.take(train_idx), d.take(test_idx)


@dataclass(frozen=True, eq=False)
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = _readonly(np.asarray(self.means, dtype=np.float64).ravel())
        stds = _readonly(np.asarray(self.stds, dtype=np.float64).ravel())
        if means.shape != stds.shape:
            raise DatasetError("scaler means and stds differ in length")
        if not np.all(stds > 0):
            raise DatasetError("scaler stds must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def arity(self) -> int:
        return len(self.means)

    @classmethod
    def identity(cls, arity: int) -> "Scaler":
        return cls(np.zeros(arity), np.ones(arity))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.arity:
            raise DatasetError(f"feature arity {x.shape[-1]} != scaler arity {self.arity}")
        return (x - self.means) / self.stds

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.arity:
            raise DatasetError(f"feature arity {x.shape[-1]} != scaler arity {self.arity}")
        return x * self.stds + self.means


def fit_scaler(train: Dataset) -> Scaler:
    """Per-column mean and population std over ``train``; stds floored at 1e-8."""
    if len(train) == 0:
        raise DatasetError("cannot fit a scaler on an empty dataset")
    x = train.features
    return Scaler(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def apply_scaler(s: Scaler, d: Dataset) -> Dataset:
    if d.n_features != s.arity:
        raise DatasetError(f"dataset has {d.n_features} features, scaler expects {s.arity}")
    return d.with_features(s.transform(d.features))
