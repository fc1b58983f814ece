"""Mixing real batches with quartile-balanced synthetic replay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import PrototypeMemory, quartile_bins, sample_synthetic, target_quartiles

RHO_GRID = (0.0, 0.125, 0.25, 0.375, 0.5, 0.625)


@dataclass(frozen=True)
class RehearsalConfig:
    # fraction of the combined batch that is synthetic
    synthetic_ratio: float = 0.5
    jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.synthetic_ratio < 1.0:
            raise ValueError("synthetic_ratio must lie in [0, 1)")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass
class TrainingBatch:
    X: np.ndarray
    y: np.ndarray
    real_count: int
    synthetic_count: int
    fallback: bool = False  # synthetic rows were requested but memory was empty

    def __len__(self) -> int:
        return self.y.shape[0]


def synthetic_count(n_real: int, rho: float) -> int:
    """Number of synthetic rows so that ``s / (n_real + s)`` is close to ``rho``."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if n_real < 0:
        raise ValueError("n_real must be nonnegative")
    return int(round(n_real * rho / (1.0 - rho)))


def allocate_slots(real_counts, slots: int, available=None) -> np.ndarray:
    """Water-fill ``slots`` into the bins with the lowest combined count.

    Ties go to the lower bin index.  Bins flagged unavailable never receive
    slots.
    """
    counts = np.array(real_counts, dtype=np.int64)
    avail = np.ones(len(counts), dtype=bool) if available is None else np.asarray(available, dtype=bool)
    quota = np.zeros(len(counts), dtype=np.int64)
    if slots <= 0 or not avail.any():
        return quota
    masked = np.where(avail, counts, np.iinfo(np.int64).max)
    for _ in range(slots):
        b = int(np.argmin(masked))
        quota[b] += 1
        masked[b] += 1
    return quota


def build_batch(X_real, y_real, memory: PrototypeMemory, rho: float,
                rng: np.random.Generator | int | None = None, jitter: float = 0.0) -> TrainingBatch:
    """Real rows first, then synthetic rows that even out the quartile bins.

    Never mutates ``memory``.
    """
    X_real = np.atleast_2d(np.asarray(X_real, dtype=np.float64))
    y_real = np.asarray(y_real, dtype=np.float64)
    if y_real.shape[0] == 0:
        raise ValueError("the real batch must be nonempty")
    s = synthetic_count(y_real.shape[0], rho)
    if s == 0:
        return TrainingBatch(X_real.copy(), y_real.copy(), len(y_real), 0)
    if not memory.prototypes:
        return TrainingBatch(X_real.copy(), y_real.copy(), len(y_real), 0, fallback=True)

    q = target_quartiles(memory)
    real_counts = np.bincount(quartile_bins(q, y_real), minlength=4)
    _, _, proto_targets = memory.arrays()
    available = np.bincount(quartile_bins(q, proto_targets), minlength=4) > 0
    quotas = allocate_slots(real_counts, s, available)
    X_syn, y_syn = sample_synthetic(memory, quotas, rng, jitter=jitter)
    return TrainingBatch(np.vstack([X_real, X_syn]), np.concatenate([y_real, y_syn]),
                         len(y_real), len(y_syn))
