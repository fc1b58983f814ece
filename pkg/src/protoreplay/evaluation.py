"""Forgetting protocols and metrics.

Two protocols are supported:

* the censored-phase protocol: 0-40% of the stream sees everything, 40-70%
  drops every training row whose target exceeds the 70th percentile of the
  test targets, 70-100% restores the full distribution.  The full test set is
  scored after every batch.
* the warm-up / update / evaluation protocol, which reports the relative
  increase of warm-up error after one-pass updating (the forgetting ratio)
  and the error on a held-out tail.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engine import ContinualRegressor, EngineConfig
from .stream import LabeledBatch


@dataclass(frozen=True)
class ForgettingProtocol:
    learn_end: float = 0.40
    forget_end: float = 0.70
    censor_quantile: float = 0.70
    test_fraction: float = 0.20
    window: int = 20
    batch_size: int = 16

    def __post_init__(self):
        if not 0 < self.learn_end < self.forget_end < 1:
            raise ValueError("need 0 < learn_end < forget_end < 1")
        if not 0 < self.test_fraction < 1 or not 0 < self.censor_quantile < 1:
            raise ValueError("test_fraction and censor_quantile must lie in (0, 1)")
        if self.window <= 0 or self.batch_size <= 0:
            raise ValueError("window and batch_size must be positive")


def phase_bounds(n_batches: int, protocol: ForgettingProtocol = ForgettingProtocol()) -> tuple[int, int]:
    """First forgetting batch and first recovery batch."""
    return int(round(protocol.learn_end * n_batches)), int(round(protocol.forget_end * n_batches))


@dataclass
class ForgettingStream:
    batches: list[LabeledBatch]
    X_test: np.ndarray
    y_test: np.ndarray
    censor_threshold: float
    forget_start: int  # index into ``batches``
    forget_stop: int

    def phase(self, i: int) -> int:
        return 0 if i < self.forget_start else (1 if i < self.forget_stop else 2)


def make_forgetting_stream(X, y, protocol: ForgettingProtocol = ForgettingProtocol(),
                           seed: int = 0) -> ForgettingStream:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(protocol.test_fraction * n))
    test, train = perm[:n_test], perm[n_test:]
    bs = protocol.batch_size
    n_batches = math.ceil(len(train) / bs)
    lo, hi = phase_bounds(n_batches, protocol)
    if n_test == 0 or lo == 0 or hi <= lo or hi >= n_batches:
        raise ValueError(f"dataset of {n} rows is too small for the forgetting protocol")
    threshold = float(np.quantile(y[test], protocol.censor_quantile))

    batches: list[LabeledBatch] = []
    forget_start = forget_stop = None
    for b in range(n_batches):
        if b == lo:
            forget_start = len(batches)
        if b == hi:
            forget_stop = len(batches)
        rows = train[b * bs:(b + 1) * bs]
        if lo <= b < hi:
            rows = rows[y[rows] <= threshold]
            if rows.size == 0:
                continue
        batches.append(LabeledBatch(X[rows], y[rows], len(batches)))
    return ForgettingStream(batches, X[test], y[test], threshold, forget_start, forget_stop)


def mse(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must be nonempty and equally long")
    return float(np.mean((p - t) ** 2))


def r2(preds, targets) -> float:
    """Coefficient of determination.

    With constant targets the score is 0 for a perfect fit and ``-inf``
    otherwise; callers treat ``-inf`` as an error flag.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must be nonempty and equally long")
    sse = float(np.sum((t - p) ** 2))
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0.0:
        return 0.0 if sse == 0.0 else -math.inf
    return 1.0 - sse / sst


def degradation_index(mse_before: float, mse_during: float) -> float:
    if mse_before <= 0:
        raise ValueError("mse_before must be positive")
    return (mse_during - mse_before) / mse_before


@dataclass
class PhaseReport:
    mse_trace: list[float]
    mse_before: float
    mse_during: float
    degradation_index: float
    r2_final: float
    mse_final: float
    seed: int | None = None
    prototype_count: int = 0
    samples_processed: int = 0
    retrain_count: int = 0

    def to_dict(self, with_trace: bool = False) -> dict:
        out = asdict(self)
        if not with_trace:
            out.pop("mse_trace")
        return out


@dataclass
class ForgettingResult:
    runs: list[PhaseReport]
    mean: dict = field(default_factory=dict)


def _summarise(runs: list[PhaseReport]) -> dict:
    keys = ("mse_before", "mse_during", "degradation_index", "r2_final", "mse_final",
            "prototype_count")
    summary = {}
    for k in keys:
        vals = np.array([getattr(r, k) for r in runs], dtype=np.float64)
        summary[k] = float(vals.mean())
        summary[k + "_std"] = float(vals.std())
    return summary


def run_forgetting_seed(config: EngineConfig, X, y, protocol: ForgettingProtocol, seed: int,
                        on_step=None) -> PhaseReport:
    stream = make_forgetting_stream(X, y, protocol, seed)
    engine = ContinualRegressor(replace(config, seed=seed), stream.X_test.shape[1])
    trace, retrains = [], 0
    for batch in stream.batches:
        rep = engine.process_labeled_batch(batch)
        retrains += rep.retrained
        if on_step is not None:
            on_step(rep)
        trace.append(mse(engine.predict(stream.X_test), stream.y_test))
    fs, fe = stream.forget_start, stream.forget_stop
    before = float(np.mean(trace[max(0, fs - protocol.window):fs]))
    during = float(np.mean(trace[fs:fe]))
    final_pred = engine.predict(stream.X_test)
    return PhaseReport(
        mse_trace=trace, mse_before=before, mse_during=during,
        degradation_index=degradation_index(before, during),
        r2_final=r2(final_pred, stream.y_test), mse_final=trace[-1], seed=seed,
        prototype_count=engine.prototype_count, samples_processed=engine.samples_seen,
        retrain_count=retrains,
    )


def run_forgetting_experiment(config: EngineConfig, X, y,
                              protocol: ForgettingProtocol = ForgettingProtocol(),
                              seeds=(0,)) -> ForgettingResult:
    """One :class:`PhaseReport` per seed plus their mean.

    The seed drives both the train/test shuffle and the engine.
    """
    runs = [run_forgetting_seed(config, X, y, protocol, s) for s in seeds]
    return ForgettingResult(runs, _summarise(runs))


@dataclass
class CLeaRReport:
    prediction_error: float
    forgetting_ratio_raw: float
    forgetting_ratio: float
    warm_error_before: float
    warm_error_after: float
    warmup_epochs: int = 0
    seed: int | None = None


def forgetting_ratio(err_before: float, err_after: float) -> tuple[float, float]:
    """``(raw, clamped)`` relative increase of the warm-up error."""
    if err_before <= 0:
        raise ValueError("warm-up error before updating must be positive")
    raw = (err_after - err_before) / err_before
    return raw, max(0.0, raw)


def split_segments(n: int, fractions=(0.4, 0.4, 0.2)) -> tuple[slice, slice, slice]:
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("need three positive segment fractions")
    total = sum(fractions)
    a = int(round(n * fractions[0] / total))
    b = a + int(round(n * fractions[1] / total))
    if not 0 < a < b < n:
        raise ValueError("every segment must be nonempty")
    return slice(0, a), slice(a, b), slice(b, n)


def run_clear_protocol(config: EngineConfig, X, y, fractions=(0.4, 0.4, 0.2),
                       max_epochs: int = 50, rel_tol: float = 1e-4,
                       batch_size: int | None = None, on_step=None) -> CLeaRReport:
    """Warm up, stream the update segment once, score warm-up and held-out errors.

    The stream is consumed in its given order.  Warm-up convergence is a
    fixed budget: the first pass goes through the full engine, further passes
    are real-only gradient epochs until ``max_epochs`` or until the epoch
    loss improves by less than ``rel_tol``.  Errors are mean squared errors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    warm, update, held = split_segments(len(y), fractions)
    bs = batch_size or config.mdn.batch_size
    engine = ContinualRegressor(config, X.shape[1])

    def stream(seg: slice, start: int) -> int:
        idx = np.arange(len(y))[seg]
        k = start
        for lo in range(0, len(idx), bs):
            rows = idx[lo:lo + bs]
            rep = engine.process_labeled_batch(LabeledBatch(X[rows], y[rows], k))
            if on_step is not None:
                on_step(rep)
            k += 1
        return k

    k = stream(warm, 0)
    epochs = 1
    if max_epochs > 1:
        epochs += engine.fit_offline(X[warm], y[warm], max_epochs - 1, rel_tol)
    before = mse(engine.predict(X[warm]), y[warm])
    stream(update, k)
    after = mse(engine.predict(X[warm]), y[warm])
    raw, clamped = forgetting_ratio(before, after)
    return CLeaRReport(
        prediction_error=mse(engine.predict(X[held]), y[held]),
        forgetting_ratio_raw=raw, forgetting_ratio=clamped,
        warm_error_before=before, warm_error_after=after, warmup_epochs=epochs,
        seed=config.seed,
    )


@dataclass
class StreamReport:
    mse: float
    r2: float
    prototype_count: int
    samples_processed: int
    pd_ratio_percent: float
    seed: int | None = None


def run_plain_stream(config: EngineConfig, X, y, seed: int = 0, test_fraction: float = 0.2,
                     batch_size: int | None = None, on_step=None) -> StreamReport:
    """Shuffle, hold out ``test_fraction``, stream the rest once, score the held-out rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    perm = np.random.default_rng(seed).permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    if not 0 < n_test < len(y):
        raise ValueError("test split must leave both parts nonempty")
    test, train = perm[:n_test], perm[n_test:]
    bs = batch_size or config.mdn.batch_size
    engine = ContinualRegressor(replace(config, seed=seed), X.shape[1])
    for k, lo in enumerate(range(0, len(train), bs)):
        rows = train[lo:lo + bs]
        rep = engine.process_labeled_batch(LabeledBatch(X[rows], y[rows], k))
        if on_step is not None:
            on_step(rep)
    pred = engine.predict(X[test])
    mem = memory_report(engine)
    return StreamReport(mse(pred, y[test]), r2(pred, y[test]), mem.prototype_count,
                        mem.samples_processed, mem.pd_ratio_percent, seed)


@dataclass
class MemoryReport:
    samples_processed: int
    prototype_count: int
    pd_ratio_percent: float

    @property
    def pd_ratio_display(self) -> str:
        return f"{self.pd_ratio_percent:.2f}"


def memory_report(prototype_count, samples_processed: int | None = None) -> MemoryReport:
    """Prototype-to-data ratio in percent.

    ``prototype_count`` may be an engine, in which case its own counters are
    used unless ``samples_processed`` is given.
    """
    if isinstance(prototype_count, ContinualRegressor):
        engine = prototype_count
        prototype_count = engine.prototype_count
        if samples_processed is None:
            samples_processed = engine.samples_seen
    if not samples_processed:
        raise ValueError("samples_processed must be positive")
    return MemoryReport(int(samples_processed), int(prototype_count),
                        100.0 * prototype_count / samples_processed)
