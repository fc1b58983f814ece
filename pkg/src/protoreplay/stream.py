"""Stream primitives: samples, batches, online standardization and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, ParseError

STD_EPS = 1e-12


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: float


@dataclass
class LabeledBatch:
    """A batch of labeled rows stored column-wise.

    ``X`` has shape ``(n, d)`` and ``y`` shape ``(n,)``.  ``index`` is the
    running batch counter of the stream that produced it.
    """

    X: np.ndarray
    y: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.shape[0] == 0:
            raise ValueError("a batch must contain at least one sample")
        if self.X.shape[0] != self.y.shape[0]:
            raise DimensionError(
                f"batch has {self.X.shape[0]} feature rows but {self.y.shape[0]} targets"
            )
        if not np.all(np.isfinite(self.y)):
            raise ValueError("batch targets must be finite")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(x, float(t)) for x, t in zip(self.X, self.y)]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], index: int = 0) -> "LabeledBatch":
        X = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        y = np.array([s.target for s in samples], dtype=np.float64)
        return cls(X, y, index)


def iter_batches(X, y, batch_size: int, start_index: int = 0) -> Iterator[LabeledBatch]:
    """Split aligned arrays into consecutive batches, keeping row order."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    for k, lo in enumerate(range(0, len(y), batch_size)):
        yield LabeledBatch(X[lo:lo + batch_size], y[lo:lo + batch_size], start_index + k)


@dataclass
class RunningStats:
    count: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    @property
    def dim(self) -> int | None:
        return None if self.mean is None else self.mean.shape[0]

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / max(self.count - 1, 1)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def copy(self) -> "RunningStats":
        if self.mean is None:
            return RunningStats()
        return RunningStats(self.count, self.mean.copy(), self.m2.copy())

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": None if self.mean is None else self.mean.tolist(),
            "m2": None if self.m2 is None else self.m2.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunningStats":
        if data["mean"] is None:
            return cls()
        return cls(int(data["count"]), np.array(data["mean"], dtype=np.float64),
                   np.array(data["m2"], dtype=np.float64))


def welford_update(stats: RunningStats, x) -> RunningStats:
    """Fold one raw feature vector into ``stats`` (in place) and return it."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if stats.mean is None:
        stats.mean = np.zeros_like(x)
        stats.m2 = np.zeros_like(x)
        stats.count = 0
    elif x.shape[0] != stats.mean.shape[0]:
        raise DimensionError(f"expected {stats.mean.shape[0]} features, got {x.shape[0]}")
    stats.count += 1
    delta = x - stats.mean
    stats.mean += delta / stats.count
    stats.m2 += delta * (x - stats.mean)
    return stats


def welford_update_batch(stats: RunningStats, X) -> RunningStats:
    for x in np.atleast_2d(X):
        welford_update(stats, x)
    return stats


def standardize(stats: RunningStats, x) -> np.ndarray:
    """Z-score ``x`` (a vector or a row matrix) with the current statistics.

    Features whose standard deviation is below ``STD_EPS`` map to 0.
    """
    if stats.count < 1 or stats.mean is None:
        raise ValueError("cannot standardize with empty statistics")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(f"expected {stats.mean.shape[0]} features, got {x.shape[-1]}")
    std = stats.std
    degenerate = std < STD_EPS
    z = (x - stats.mean) / np.where(degenerate, 1.0, std)
    return np.where(degenerate, 0.0, z)


class Reservoir:
    """Uniform reservoir sample (Algorithm R) over a stream of rows."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self.X: list[np.ndarray] = []
        self.y: list[float] = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.y)

    def add(self, x, target: float) -> None:
        if len(self.y) < self.capacity:
            self.X.append(np.asarray(x, dtype=np.float64))
            self.y.append(float(target))
        else:
            j = int(self.rng.integers(0, self.seen + 1))
            if j < self.capacity:
                self.X[j] = np.asarray(x, dtype=np.float64)
                self.y[j] = float(target)
        self.seen += 1

    def extend(self, X, y) -> None:
        for x, t in zip(np.atleast_2d(X), y):
            self.add(x, t)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.stack(self.X), np.asarray(self.y, dtype=np.float64)

    def draw(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``min(k, len)`` stored rows without replacement."""
        k = min(k, len(self.y))
        idx = self.rng.choice(len(self.y), size=k, replace=False)
        X, y = self.arrays()
        return X[idx], y[idx]

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "seen": self.seen,
                "X": [x.tolist() for x in self.X], "y": list(self.y)}

    def load_dict(self, data: dict) -> None:
        self.capacity = int(data["capacity"])
        self.seen = int(data["seen"])
        self.X = [np.array(x, dtype=np.float64) for x in data["X"]]
        self.y = [float(t) for t in data["y"]]


def read_csv(path, target: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load a numeric CSV into ``(X, y, feature_names)``.

    Raises :class:`ParseError` on a missing target column, an empty file or a
    non-numeric cell, naming the offending row (1-based, header is row 1)
    and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        if target not in header:
            raise ParseError(f"{path}: target column {target!r} not found in header {header}")
        t_col = header.index(target)
        names = [h for i, h in enumerate(header) if i != t_col]
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_no}, column {col!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {row_no}, column {col!r}: non-finite value")
                values.append(v)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    y = data[:, t_col]
    X = np.delete(data, t_col, axis=1)
    if X.shape[1] == 0:
        raise ParseError(f"{path}: no feature columns besides the target")
    return X, y, names


def ingest_csv(path, target: str, batch_size: int = 16) -> Iterator[LabeledBatch]:
    """Yield file-ordered batches of at most ``batch_size`` rows."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    X, y, _ = read_csv(path, target)
    yield from iter_batches(X, y, batch_size)
