"""The continual regressor: standardize, partition, summarise, rehearse, predict."""
from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mdn as mdn_ops
from .errors import DimensionError, NumericalError
from .memory import IlvqParams, Outcome, PrototypeMemory, learn_one
from .mdn import MdnConfig, MdnParams, OptimizerState
from .rehearsal import RehearsalConfig, build_batch
from .stream import LabeledBatch, Reservoir, RunningStats, standardize, welford_update_batch
from .tree import DecisionTree, TreeParams, TreeReservoir, fit_tree

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    PROTOTYPE_REPLAY = "prototype"
    NAIVE = "naive"
    EXPERIENCE_REPLAY = "replay"


@dataclass(frozen=True)
class EngineConfig:
    tree: TreeParams = field(default_factory=TreeParams)
    ilvq: IlvqParams = field(default_factory=IlvqParams)
    mdn: MdnConfig = field(default_factory=MdnConfig)
    rehearsal: RehearsalConfig = field(default_factory=RehearsalConfig)
    seed: int = 0
    strategy: Strategy = Strategy.PROTOTYPE_REPLAY
    tree_reservoir: int = 2000
    replay_capacity: int = 1000
    replay_learning_rate: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.tree_reservoir <= 0 or self.replay_capacity <= 0:
            raise ValueError("reservoir capacities must be positive")
        if self.replay_learning_rate <= 0:
            raise ValueError("replay_learning_rate must be positive")

    @property
    def learning_rate(self) -> float:
        if self.strategy is Strategy.EXPERIENCE_REPLAY:
            return self.replay_learning_rate
        return self.mdn.learning_rate

    def with_rho(self, rho: float) -> "EngineConfig":
        return replace(self, rehearsal=replace(self.rehearsal, synthetic_ratio=rho))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        data = dict(data)
        sections = {"tree": TreeParams, "ilvq": IlvqParams, "mdn": MdnConfig,
                    "rehearsal": RehearsalConfig}
        for key, kind in sections.items():
            if key in data and isinstance(data[key], dict):
                data[key] = kind(**data[key])
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class StepReport:
    batch_index: int
    inserted_prototypes: int
    retrained: bool
    train_loss: float | None
    prototype_count: int
    real_count: int = 0
    synthetic_count: int = 0
    fallback: bool = False
    failed: bool = False

    CSV_FIELDS = ("batch", "insertions", "retrained", "loss", "prototype_count")

    def csv_row(self) -> list:
        loss = "" if self.train_loss is None else repr(self.train_loss)
        return [self.batch_index, self.inserted_prototypes, int(self.retrained), loss,
                self.prototype_count]


def append_step_reports(path, reports) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(StepReport.CSV_FIELDS)
        for r in reports:
            w.writerow(r.csv_row())


class ContinualRegressor:
    """Full continual learner for one stream.

    Holds feature statistics, the virtual-label tree and its reservoir, the
    prototype memory, the mixture network with its optimizer, and (for the
    experience-replay baseline) a raw-sample buffer.
    """

    def __init__(self, config: EngineConfig, n_features: int):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        self.config = config
        self.n_features = n_features
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        init_rng, tree_rng, syn_rng, replay_rng = (np.random.default_rng(s) for s in seeds)
        self.stats = RunningStats()
        self.reservoir = TreeReservoir(config.tree_reservoir, tree_rng)
        self.tree: DecisionTree | None = None
        self.memory = PrototypeMemory(params=config.ilvq)
        self.params: MdnParams = mdn_ops.init_params(config.mdn, n_features, init_rng)
        self.opt = OptimizerState.for_params(self.params)
        self.syn_rng = syn_rng
        self.replay_buffer = (Reservoir(config.replay_capacity, replay_rng)
                              if config.strategy is Strategy.EXPERIENCE_REPLAY else None)
        self.batches_seen = 0
        self.samples_seen = 0

    @property
    def prototype_count(self) -> int:
        return len(self.memory)

    # -- learning ------------------------------------------------------
    def process_labeled_batch(self, batch: LabeledBatch) -> StepReport:
        if batch.dim != self.n_features:
            raise DimensionError(f"engine expects {self.n_features} features, batch has {batch.dim}")
        welford_update_batch(self.stats, batch.X)
        Z = standardize(self.stats, batch.X)
        self.batches_seen += 1
        self.samples_seen += len(batch)

        strategy = self.config.strategy
        if strategy is Strategy.PROTOTYPE_REPLAY:
            report = self._prototype_step(batch, Z)
        elif strategy is Strategy.EXPERIENCE_REPLAY:
            report = self._replay_step(batch, Z)
        else:
            report = self._train(batch.index, Z, batch.y, 0, len(batch))
        return report

    def _prototype_step(self, batch: LabeledBatch, Z: np.ndarray) -> StepReport:
        self.reservoir.extend(Z, batch.y)
        RX, Ry = self.reservoir.arrays()
        self.tree = fit_tree(RX, Ry, self.config.tree)
        # leaf ids are not stable across refits, so stored labels follow the new tree
        self.memory.relabel(self.tree)
        vlabels = self.tree.apply(Z)
        inserted = sum(learn_one(self.memory, z, v, t) is Outcome.INSERTED
                       for z, v, t in zip(Z, vlabels, batch.y))
        if inserted == 0:
            return StepReport(batch.index, 0, False, None, self.prototype_count)
        tb = build_batch(Z, batch.y, self.memory, self.config.rehearsal.synthetic_ratio,
                         self.syn_rng, jitter=self.config.rehearsal.jitter)
        report = self._train(batch.index, tb.X, tb.y, inserted, tb.real_count, tb.synthetic_count)
        report.fallback = tb.fallback
        return report

    def _replay_step(self, batch: LabeledBatch, Z: np.ndarray) -> StepReport:
        buf = self.replay_buffer
        buf.extend(batch.X, batch.y)
        RX, Ry = buf.draw(self.config.mdn.batch_size)
        X = np.vstack([Z, standardize(self.stats, RX)])
        y = np.concatenate([batch.y, Ry])
        return self._train(batch.index, X, y, 0, len(batch), len(Ry))

    def _train(self, index: int, X, y, inserted: int, n_real: int, n_syn: int = 0) -> StepReport:
        try:
            loss = mdn_ops.grad_step(self.params, self.opt, X, y, self.config.learning_rate)
            failed = False
        except NumericalError as exc:
            log.warning("batch %d: %s", index, exc)
            loss, failed = None, True
        return StepReport(index, inserted, True, loss, self.prototype_count, n_real, n_syn,
                          failed=failed)

    def fit_offline(self, X, y, max_epochs: int = 50, rel_tol: float = 1e-4) -> int:
        """Extra passes of real-only gradient steps with frozen statistics.

        Stops after ``max_epochs`` passes or when the mean epoch loss improves
        by less than ``rel_tol`` relative.  Returns the number of passes run.
        """
        Z = standardize(self.stats, X)
        y = np.asarray(y, dtype=np.float64)
        bs = self.config.mdn.batch_size
        prev = None
        for epoch in range(1, max_epochs + 1):
            losses = []
            for lo in range(0, len(y), bs):
                try:
                    losses.append(mdn_ops.grad_step(self.params, self.opt, Z[lo:lo + bs],
                                                    y[lo:lo + bs], self.config.learning_rate))
                except NumericalError as exc:
                    log.warning("offline epoch %d: %s", epoch, exc)
            cur = float(np.mean(losses)) if losses else float("nan")
            if prev is not None and abs(prev - cur) <= rel_tol * max(abs(prev), 1e-12):
                return epoch
            prev = cur
        return max_epochs

    # -- inference -----------------------------------------------------
    def predict(self, X) -> np.ndarray:
        """Expected-value predictions for raw feature rows; never mutates state."""
        if self.stats.count < 1:
            raise ValueError("engine has not seen any labeled data yet")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"engine expects {self.n_features} features, got {X.shape[1]}")
        return mdn_ops.predict_mean(self.params, standardize(self.stats, X))

    # -- checkpointing -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "stats": self.stats.to_dict(),
            "reservoir": self.reservoir.to_dict(),
            "memory": self.memory.to_dict(),
            "mdn": self.params.to_dict(),
            "optimizer": self.opt.to_dict(),
            "replay_buffer": None if self.replay_buffer is None else self.replay_buffer.to_dict(),
            "batches_seen": self.batches_seen,
            "samples_seen": self.samples_seen,
            "rng": {"tree": self.reservoir.rng.bit_generator.state,
                    "synthetic": self.syn_rng.bit_generator.state,
                    "replay": None if self.replay_buffer is None
                    else self.replay_buffer.rng.bit_generator.state},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContinualRegressor":
        eng = cls(EngineConfig.from_dict(data["config"]), int(data["n_features"]))
        eng.stats = RunningStats.from_dict(data["stats"])
        eng.reservoir.load_dict(data["reservoir"])
        eng.memory = PrototypeMemory.from_dict(data["memory"])
        eng.params = MdnParams.from_dict(data["mdn"])
        eng.opt = OptimizerState.from_dict(data["optimizer"], eng.params)
        if data["replay_buffer"] is not None:
            eng.replay_buffer.load_dict(data["replay_buffer"])
            eng.replay_buffer.rng.bit_generator.state = data["rng"]["replay"]
        eng.reservoir.rng.bit_generator.state = data["rng"]["tree"]
        eng.syn_rng.bit_generator.state = data["rng"]["synthetic"]
        eng.batches_seen = int(data["batches_seen"])
        eng.samples_seen = int(data["samples_seen"])
        if len(eng.reservoir):
            RX, Ry = eng.reservoir.arrays()
            eng.tree = fit_tree(RX, Ry, eng.config.tree)
        return eng

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ContinualRegressor":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init(config: EngineConfig, n_features: int) -> ContinualRegressor:
    return ContinualRegressor(config, n_features)
