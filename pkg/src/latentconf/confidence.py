"""Distance-based confidence scores.

Training observations whose absolute error is at most the mean training error
form the reliable set. A new observation is scored by its mean Euclidean
distance to the ``M`` nearest reliable training points; small scores mean the
prediction is expected to be trustworthy. The same engine scores latent means,
standardized features, or raw (lat, lon) coordinates.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from latentconf.dataset import Dataset
from latentconf.vae import VaeModel, decode, encode

SPACES = ("latent", "feature", "geographic")
THRESHOLD_RULES = ("mean_error",)
REFERENCE_SETS = ("reliable", "all")

# caps the (queries, refs, dim) difference block at roughly 16 MB
_BLOCK_ELEMS = 2**21


@dataclass(frozen=True, eq=False)
class LatentSet:
    ids: tuple[str, ...]
    points: np.ndarray
    predictions: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(self.ids))
        points = np.asarray(self.points, dtype=np.float64).reshape(n, -1)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "predictions", np.asarray(self.predictions, dtype=np.float64))
        if self.errors is not None:
            object.__setattr__(self, "errors", np.asarray(self.errors, dtype=np.float64))
        lengths = {points.shape[0], len(self.predictions)}
        if self.errors is not None:
            lengths.add(len(self.errors))
        if lengths != {n}:
            raise ValueError(f"LatentSet rows disagree: {sorted(lengths)} vs {n} ids")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def latent_dim(self) -> int:
        return self.points.shape[1]

    def equals(self, other: "LatentSet") -> bool:
        same_err = (self.errors is None and other.errors is None) or (
            self.errors is not None
            and other.errors is not None
            and np.array_equal(self.errors, other.errors)
        )
        return (
            self.ids == other.ids
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.predictions, other.predictions)
            and same_err
        )


@dataclass(frozen=True)
class ReliablePartition:
    plus_indices: np.ndarray
    minus_indices: np.ndarray
    threshold: float

    @property
    def reliable_count(self) -> int:
        return len(self.plus_indices)


@dataclass(frozen=True, eq=False)
class ConfidenceReport:
    ids: tuple[str, ...]
    scores: np.ndarray
    space: str
    M: int
    T: float
    reliable_count: int
    k: int

    @property
    def degenerate(self) -> bool:
        """True when fewer than ``M`` reference points were available."""
        return self.k < self.M


def project(m: VaeModel, d: Dataset) -> LatentSet:
    """Latent means and predictions for every row of a scaled dataset."""
    if d.n_features != m.config.input_dim:
        raise ValueError(f"dataset has {d.n_features} features, model expects {m.config.input_dim}")
    x = d.features.reshape(len(d), d.n_features)
    if len(d) == 0:
        return LatentSet((), np.zeros((0, m.config.latent_dim)), np.zeros(0),
                         None if d.target is None else np.zeros(0))
    mu, _ = encode(m, x)
    yhat = decode(m, mu)
    errors = None if d.target is None else np.abs(yhat - d.target)
    return LatentSet(d.ids, mu, yhat, errors)


def partition_reliable(train: LatentSet, rule: str = "mean_error") -> ReliablePartition:
    """Split training rows by ``error <= T`` where ``T`` is the mean training error."""
    if rule not in THRESHOLD_RULES:
        raise ValueError(f"unknown threshold rule {rule!r}; expected one of {THRESHOLD_RULES}")
    if train.errors is None:
        raise ValueError("training LatentSet has no errors; targets are required")
    errors = train.errors
    if len(errors) == 0:
        raise ValueError("cannot partition an empty training set")
    # the clip only removes rounding drift; the exact mean always lies in [min, max]
    threshold = min(max(math.fsum(errors) / len(errors), float(errors.min())), float(errors.max()))
    mask = errors <= threshold
    plus = np.flatnonzero(mask)
    if len(plus) == 0:
        raise ValueError("reliable set is empty")
    return ReliablePartition(plus, np.flatnonzero(~mask), float(threshold))


def _knn_block(queries: np.ndarray, refs: np.ndarray, k: int) -> np.ndarray:
    diff = queries[:, None, :] - refs[None, :, :]
    dist = np.sqrt(np.einsum("qrd,qrd->qr", diff, diff))
    if k < dist.shape[1]:
        dist = np.partition(dist, k - 1, axis=1)[:, :k]
    return np.sort(dist, axis=1).sum(axis=1) / k


def _check_knn(queries: np.ndarray, refs: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray, int]:
    refs = np.asarray(refs, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] == 0:
        raise ValueError("reference point set is empty")
    if queries.shape[-1] != refs.shape[1]:
        raise ValueError(f"query width {queries.shape[-1]} != reference width {refs.shape[1]}")
    if int(M) < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    return queries, refs, min(int(M), refs.shape[0])


def knn_mean_distances(
    queries: np.ndarray, refs: np.ndarray, M: int, threads: int = 1
) -> tuple[np.ndarray, int]:
    """Mean distance from each query row to its ``min(M, len(refs))`` nearest refs.

    Returns the scores and the effective neighbor count. Exact brute force;
    each row's value does not depend on blocking or thread count.
    """
    queries, refs, k = _check_knn(queries, refs, M)
    queries = queries.reshape(-1, refs.shape[1])
    n = len(queries)
    if n == 0:
        return np.zeros(0), k
    block = max(1, _BLOCK_ELEMS // (refs.shape[0] * refs.shape[1]))
    starts = range(0, n, block)
    run = lambda s: _knn_block(queries[s:s + block], refs, k)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts), k


def mean_knn_distance(q: np.ndarray, reliable_points: np.ndarray, M: int) -> float:
    """Mean Euclidean distance from ``q`` to its ``M`` nearest reliable points.

    Falls back to all points (with a warning) when fewer than ``M`` exist.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("q must be a single vector")
    scores, k = knn_mean_distances(q[None, :], reliable_points, M)
    if k < M:
        warnings.warn(f"only {k} reference points for M={M}; averaging over {k}", stacklevel=2)
    return float(scores[0])


def knn_oracle(q: Sequence[float], points: Sequence[Sequence[float]], M: int) -> float:
    """Brute-force reference: every distance, full sort, mean of the first ``k``."""
    if len(points) == 0:
        raise ValueError("reference point set is empty")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    q = [float(v) for v in q]
    dists = []
    for p in points:
        if len(p) != len(q):
            raise ValueError(f"query width {len(q)} != reference width {len(p)}")
        dists.append(math.sqrt(sum((a - float(b)) ** 2 for a, b in zip(q, p))))
    dists.sort()
    k = min(M, len(dists))
    return sum(dists[:k]) / k


def representation(space: str, data: Dataset | None, latent: LatentSet | None) -> np.ndarray:
    """Coordinates used for distances in ``space``.

    ``feature`` expects ``data`` to be standardized already.
    """
    if space == "latent":
        if latent is None:
            raise ValueError("latent space needs a LatentSet")
        return latent.points
    if data is None:
        raise ValueError(f"{space} space needs a Dataset")
    if space == "feature":
        return data.features
    if space == "geographic":
        return data.coordinates
    raise ValueError(f"unknown space {space!r}; expected one of {SPACES}")


def score(
    space: str,
    train: Dataset | None,
    train_latent: LatentSet | None,
    test: Dataset | None,
    test_latent: LatentSet | None,
    part: ReliablePartition,
    M: int = 3,
    reference: str = "reliable",
    threads: int = 1,
) -> ConfidenceReport:
    """Score every test row in the chosen space.

    The reference set is the reliable training subset by default, so all three
    spaces share the same ``M`` and the same reference rows. ``reference="all"``
    uses every training row instead.
    """
    if reference not in REFERENCE_SETS:
        raise ValueError(f"unknown reference set {reference!r}; expected one of {REFERENCE_SETS}")
    train_rep = representation(space, train, train_latent)
    test_rep = representation(space, test, test_latent)
    refs = train_rep[part.plus_indices] if reference == "reliable" else train_rep
    ids = test_latent.ids if test_latent is not None else test.ids  # type: ignore[union-attr]
    scores, k = knn_mean_distances(test_rep, refs, M, threads=threads)
    if k < M:
        warnings.warn(f"only {k} reference points for M={M}; scores average over {k}", stacklevel=2)
    return ConfidenceReport(
        ids=tuple(ids),
        scores=scores,
        space=space,
        M=int(M),
        T=part.threshold,
        reliable_count=part.reliable_count,
        k=k,
    )
