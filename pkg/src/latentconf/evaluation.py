"""Does the confidence score track the error? Correlation and tail MAEs.

Sums go through ``math.fsum`` so every metric is exactly invariant to the
order of the rows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from latentconf.confidence import ConfidenceReport, LatentSet

TAILS = ("lowest", "highest")


def _pair(a, b, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} values, got {len(a)}")
    return a, b


def pearson(c, e) -> float | None:
    """Sample Pearson correlation, or ``None`` when either input is constant."""
    c, e = _pair(c, e, 2)
    if np.all(c == c[0]) or np.all(e == e[0]):
        return None
    n = len(c)
    dc = c - math.fsum(c) / n
    de = e - math.fsum(e) / n
    sxx = math.fsum(dc * dc)
    syy = math.fsum(de * de)
    denom = math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        return None
    r = math.fsum(dc * de) / denom
    return max(-1.0, min(1.0, r))


def mae(pred, y) -> float:
    pred, y = _pair(pred, y, 1)
    return math.fsum(np.abs(pred - y)) / len(pred)


def tail_size(n: int, fraction: float) -> int:
    if not 0.0 < fraction <= 0.5:
        raise ValueError(f"fraction must be in (0, 0.5], got {fraction}")
    # tolerance absorbs products like 0.29 * 100 = 28.999999999999996
    return int(math.floor(fraction * n + 1e-9))


def tail_indices(scores, fraction: float, tail: str) -> np.ndarray:
    """Indices of the lowest- or highest-scoring ``floor(fraction * n)`` rows.

    Ties keep original index order (stable ascending sort).
    """
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    k = tail_size(len(scores), fraction)
    if k < 1:
        raise ValueError(f"fraction {fraction} of {len(scores)} rows selects nothing")
    order = np.argsort(scores, kind="stable")
    return order[:k] if tail == "lowest" else order[len(order) - k:]


def tail_mae(scores, errors, fraction: float, tail: str) -> float:
    """Mean absolute error over one tail of the score ordering.

    ``lowest`` is the most reliable tail, since a small distance means high
    confidence; ``highest`` is the least reliable.
    """
    scores, errors = _pair(scores, errors, 1)
    idx = tail_indices(scores, fraction, tail)
    return math.fsum(np.abs(errors[idx])) / len(idx)


@dataclass(frozen=True)
class EvalReport:
    n: int
    overall_mae: float
    mae_most_reliable: float
    mae_most_unreliable: float
    fraction: float
    tail_size: int
    correlation: float | None
    space: str
    M: int
    T: float

    @property
    def correlation_defined(self) -> bool:
        return self.correlation is not None

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                value = "undefined"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def csv_row(self) -> dict[str, str]:
        return {k: v.split("=", 1)[1] for k, v in zip(CSV_FIELDS, self.to_text().splitlines())}


CSV_FIELDS = tuple(EvalReport.__dataclass_fields__)


def append_csv(report: EvalReport, path: str | Path) -> None:
    """Append one row per report; the header is written when the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow(report.csv_row())


def build_report(conf: ConfidenceReport, test: LatentSet, fraction: float = 0.2) -> EvalReport:
    if tuple(conf.ids) != tuple(test.ids):
        missing = next((i for i, j in zip(conf.ids, test.ids) if i != j), None)
        raise ValueError(
            f"confidence ids do not align with test ids (first mismatch: {missing!r}, "
            f"lengths {len(conf.ids)} vs {len(test.ids)})"
        )
    if test.errors is None:
        raise ValueError("test LatentSet has no errors; targets are required")
    errors = test.errors
    n = len(errors)
    return EvalReport(
        n=n,
        overall_mae=math.fsum(errors) / n,
        mae_most_reliable=tail_mae(conf.scores, errors, fraction, "lowest"),
        mae_most_unreliable=tail_mae(conf.scores, errors, fraction, "highest"),
        fraction=float(fraction),
        tail_size=tail_size(n, fraction),
        correlation=pearson(conf.scores, errors),
        space=conf.space,
        M=conf.M,
        T=conf.T,
    )
