"""Incremental prototype memory in the ILVQ family.

Prototypes summarise the standardized input space together with a stored
continuous target.  A sample either adapts its nearest prototype (and that
prototype's graph neighbours) or, when it falls outside the adaptive
similarity radius or carries a different virtual label, becomes a new
prototype.  Edges age as their endpoints win; isolated low-use prototypes are
pruned periodically.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


class Outcome(enum.Enum):
    INSERTED = "inserted"
    UPDATED = "updated"


@dataclass(frozen=True)
class IlvqParams:
    alpha_winner: float = 0.9
    alpha_runner: float = 0.1
    age_old: int = 400
    cleanup_interval: int = 150
    initial_prototypes: int = 5

    def __post_init__(self):
        if not 0 < self.alpha_runner <= self.alpha_winner <= 1:
            raise ValueError("need 0 < alpha_runner <= alpha_winner <= 1")
        if min(self.age_old, self.cleanup_interval, self.initial_prototypes) <= 0:
            raise ValueError("age_old, cleanup_interval and initial_prototypes must be positive")


@dataclass
class Prototype:
    id: int
    centroid: np.ndarray
    target: float
    vlabel: int
    wins: int = 1


@dataclass
class PrototypeMemory:
    params: IlvqParams = field(default_factory=IlvqParams)
    prototypes: dict[int, Prototype] = field(default_factory=dict)
    # symmetric adjacency: edges[a][b] == edges[b][a] == age
    edges: dict[int, dict[int, int]] = field(default_factory=dict)
    samples_seen: int = 0
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.prototypes)

    @property
    def dim(self) -> int | None:
        for p in self.prototypes.values():
            return p.centroid.shape[0]
        return None

    # -- graph helpers -------------------------------------------------
    def neighbors(self, pid: int) -> dict[int, int]:
        return self.edges.get(pid, {})

    def connect(self, a: int, b: int, age: int = 0) -> None:
        self.edges.setdefault(a, {})[b] = age
        self.edges.setdefault(b, {})[a] = age

    def disconnect(self, a: int, b: int) -> None:
        self.edges.get(a, {}).pop(b, None)
        self.edges.get(b, {}).pop(a, None)
        for k in (a, b):
            if k in self.edges and not self.edges[k]:
                del self.edges[k]

    def edge_list(self) -> list[tuple[int, int, int]]:
        return sorted((a, b, age) for a, nb in self.edges.items() for b, age in nb.items() if a < b)

    def max_edge_age(self) -> int:
        return max((age for _, _, age in self.edge_list()), default=0)

    def add(self, x, target: float, vlabel: int, wins: int = 1) -> Prototype:
        p = Prototype(self.next_id, np.array(x, dtype=np.float64), float(target), int(vlabel), wins)
        self.prototypes[p.id] = p
        self.next_id += 1
        return p

    def remove(self, pid: int) -> None:
        for other in list(self.neighbors(pid)):
            self.disconnect(pid, other)
        del self.prototypes[pid]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ids, centroids, targets) ordered by id."""
        ids = np.array(sorted(self.prototypes), dtype=np.int64)
        C = np.stack([self.prototypes[i].centroid for i in ids])
        t = np.array([self.prototypes[i].target for i in ids], dtype=np.float64)
        return ids, C, t

    def relabel(self, tree) -> None:
        """Refresh every prototype's virtual label from its centroid."""
        if not self.prototypes:
            return
        ids, C, _ = self.arrays()
        for pid, v in zip(ids, tree.apply(C)):
            self.prototypes[int(pid)].vlabel = int(v)

    def copy(self) -> "PrototypeMemory":
        return PrototypeMemory.from_dict(self.to_dict())

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "params": vars(self.params).copy(),
            "samples_seen": self.samples_seen,
            "next_id": self.next_id,
            "prototypes": [
                {"id": p.id, "centroid": p.centroid.tolist(), "target": p.target,
                 "vlabel": p.vlabel, "wins": p.wins}
                for p in (self.prototypes[i] for i in sorted(self.prototypes))
            ],
            "edges": [[a, b, age] for a, b, age in self.edge_list()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PrototypeMemory":
        mem = cls(params=IlvqParams(**data["params"]), samples_seen=int(data["samples_seen"]),
                  next_id=int(data["next_id"]))
        for p in data["prototypes"]:
            mem.prototypes[int(p["id"])] = Prototype(
                int(p["id"]), np.array(p["centroid"], dtype=np.float64), float(p["target"]),
                int(p["vlabel"]), int(p["wins"]))
        for a, b, age in data["edges"]:
            if a not in mem.prototypes or b not in mem.prototypes:
                raise ValueError(f"edge ({a}, {b}) references an unknown prototype")
            mem.connect(int(a), int(b), int(age))
        return mem

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PrototypeMemory":
        return cls.from_dict(json.loads(text))


def nearest_two(memory: PrototypeMemory, x) -> tuple[Prototype, Prototype | None]:
    """Winner and runner-up by Euclidean distance; ties go to the lower id."""
    if not memory.prototypes:
        raise ValueError("prototype memory is empty")
    ids, C, _ = memory.arrays()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != C.shape[1]:
        raise DimensionError(f"expected {C.shape[1]} features, got {x.shape[-1]}")
    d2 = np.sum((C - x) ** 2, axis=1)
    # stable sort keeps id order among equal distances
    order = np.argsort(d2, kind="stable")
    winner = memory.prototypes[int(ids[order[0]])]
    runner = memory.prototypes[int(ids[order[1]])] if len(order) > 1 else None
    return winner, runner


def similarity_threshold(memory: PrototypeMemory, p: Prototype) -> float:
    """Adaptive radius of ``p``.

    The largest distance to a graph neighbour, or the distance to the
    nearest other prototype when ``p`` is isolated; +inf with fewer than two
    prototypes.
    """
    if len(memory.prototypes) < 2:
        return math.inf
    nbrs = memory.neighbors(p.id)
    if nbrs:
        return max(float(np.linalg.norm(memory.prototypes[n].centroid - p.centroid)) for n in nbrs)
    return min(float(np.linalg.norm(q.centroid - p.centroid))
               for q in memory.prototypes.values() if q.id != p.id)


def learn_one(memory: PrototypeMemory, x, vlabel: int, y: float) -> Outcome:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    dim = memory.dim
    if dim is not None and x.shape[0] != dim:
        raise DimensionError(f"expected {dim} features, got {x.shape[0]}")
    params = memory.params
    memory.samples_seen += 1
    outcome = _learn(memory, x, int(vlabel), float(y), params)
    if memory.samples_seen % params.cleanup_interval == 0:
        cleanup(memory)
    return outcome


def _learn(memory: PrototypeMemory, x, vlabel: int, y: float, params: IlvqParams) -> Outcome:
    if len(memory.prototypes) < params.initial_prototypes:
        memory.add(x, y, vlabel)
        return Outcome.INSERTED

    w, r = nearest_two(memory, x)
    novel = vlabel != w.vlabel
    if not novel:
        novel = float(np.linalg.norm(x - w.centroid)) > similarity_threshold(memory, w)
    if not novel and r is not None:
        novel = float(np.linalg.norm(x - r.centroid)) > similarity_threshold(memory, r)
    if novel:
        memory.add(x, y, vlabel)
        return Outcome.INSERTED

    for n in list(memory.neighbors(w.id)):
        if r is None or n != r.id:
            memory.connect(w.id, n, memory.edges[w.id][n] + 1)
    if r is not None:
        memory.connect(w.id, r.id, 0)

    w.centroid += params.alpha_winner * (x - w.centroid)
    w.target += params.alpha_winner * (y - w.target)
    w.vlabel = vlabel
    for n in memory.neighbors(w.id):
        q = memory.prototypes[n]
        q.centroid += params.alpha_runner * (x - q.centroid)
    w.wins += 1

    for n, age in list(memory.neighbors(w.id).items()):
        if age > params.age_old:
            memory.disconnect(w.id, n)
    return Outcome.UPDATED


def cleanup(memory: PrototypeMemory) -> int:
    """Drop isolated prototypes whose win count is below the mean.

    Never shrinks the memory below ``initial_prototypes``; when the floor
    binds, the least-used (then oldest) candidates go first.
    """
    protos = memory.prototypes
    budget = len(protos) - memory.params.initial_prototypes
    if budget <= 0:
        return 0
    mean_wins = sum(p.wins for p in protos.values()) / len(protos)
    doomed = sorted(
        (p for p in protos.values() if not memory.neighbors(p.id) and p.wins < mean_wins),
        key=lambda p: (p.wins, p.id),
    )[:budget]
    for p in doomed:
        memory.remove(p.id)
    return len(doomed)


def target_quartiles(memory: PrototypeMemory) -> tuple[float, float, float]:
    if not memory.prototypes:
        raise ValueError("prototype memory is empty")
    targets = np.array([p.target for p in memory.prototypes.values()], dtype=np.float64)
    q = np.quantile(targets, [0.25, 0.5, 0.75])
    return float(q[0]), float(q[1]), float(q[2])


def quartile_bins(quartiles, targets) -> np.ndarray:
    """Bin index in 0..3: ``t <= q25`` is bin 0, ``t > q75`` is bin 3."""
    return np.searchsorted(np.asarray(quartiles, dtype=np.float64),
                           np.asarray(targets, dtype=np.float64), side="left")


def _redistribute(quotas: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    quotas = quotas.copy()
    empty = sizes == 0
    spill = int(quotas[empty].sum())
    quotas[empty] = 0
    if spill == 0:
        return quotas
    weights = np.where(empty, 0, quotas).astype(np.float64)
    if weights.sum() == 0:
        weights = sizes.astype(np.float64)
    share = spill * weights / weights.sum()
    extra = np.floor(share).astype(np.int64)
    # largest remainder, ties to the lower bin
    for k in np.argsort(-(share - extra), kind="stable")[: spill - int(extra.sum())]:
        extra[k] += 1
    return quotas + extra


def sample_synthetic(memory: PrototypeMemory, quotas, rng: np.random.Generator | int | None = None,
                     jitter: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Draw replay rows from the prototype memory.

    ``quotas`` gives the number of rows per target-quartile bin.  Rows are
    prototype ``(centroid, target)`` pairs drawn uniformly with replacement
    inside each bin; quotas of empty bins move to the non-empty ones.
    ``jitter`` adds Gaussian noise (standardized units) to the centroids.
    Returns ``(X, y)``, ordered by bin.
    """
    if not memory.prototypes:
        raise ValueError("prototype memory is empty")
    rng = np.random.default_rng(rng)
    quotas = np.asarray(quotas, dtype=np.int64)
    if quotas.shape != (4,) or (quotas < 0).any():
        raise ValueError("quotas must be four nonnegative integers")
    _, C, t = memory.arrays()
    bins = quartile_bins(target_quartiles(memory), t)
    sizes = np.bincount(bins, minlength=4)
    quotas = _redistribute(quotas, sizes)
    picks = [rng.choice(np.flatnonzero(bins == b), size=int(quotas[b]), replace=True)
             for b in range(4) if quotas[b] > 0]
    idx = np.concatenate(picks) if picks else np.empty(0, dtype=np.int64)
    X = C[idx].copy()
    if jitter > 0 and len(idx):
        X += rng.normal(0.0, jitter, size=X.shape)
    return X, t[idx].copy()
