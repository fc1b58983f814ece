"""Variance-reduction regression tree used to mint virtual labels.

The tree partitions the standardized input space according to target
behaviour; each leaf id is a virtual label.  Trees are refit from a bounded
uniform reservoir after every labeled batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stream import Reservoir

# Candidates within this margin of the best normalized decrease count as ties.
TIE_TOL = 1e-9


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 4
    min_samples_split: int = 30
    min_samples_leaf: int = 10
    min_impurity_decrease: float = 0.005

    def __post_init__(self):
        if min(self.max_depth, self.min_samples_split, self.min_samples_leaf) <= 0:
            raise ValueError("tree parameters must be positive")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be nonnegative")
        if self.min_samples_leaf > self.min_samples_split:
            raise ValueError("min_samples_leaf cannot exceed min_samples_split")


@dataclass(frozen=True)
class Node:
    value: float
    n_samples: int
    depth: int
    feature: int = -1
    threshold: float = float("nan")
    left: int = -1
    right: int = -1
    leaf_id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class DecisionTree:
    nodes: list[Node] = field(default_factory=list)
    leaf_count: int = 0
    n_features: int = 0

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def apply(self, X) -> np.ndarray:
        """Leaf id for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            i, idx = stack.pop()
            node = self.nodes[i]
            if node.is_leaf:
                out[idx] = node.leaf_id
                continue
            go_left = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def dump(self) -> str:
        lines = []

        def walk(i: int, indent: int) -> None:
            node = self.nodes[i]
            pad = "  " * indent
            if node.is_leaf:
                lines.append(f"{pad}leaf {node.leaf_id}: mean={node.value:.6g} n={node.n_samples}")
            else:
                lines.append(f"{pad}x[{node.feature}] <= {node.threshold:.6g}")
                walk(node.left, indent + 1)
                walk(node.right, indent + 1)

        walk(0, 0)
        return "\n".join(lines)


def _split_scores(x: np.ndarray, y: np.ndarray, params: TreeParams):
    """Normalized variance reduction for every admissible threshold on one feature.

    Returns ``(thresholds, scores)`` with thresholds ascending; both empty when
    no threshold leaves ``min_samples_leaf`` rows on each side.
    """
    n = y.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    yc = y[order] - y.mean()
    sse_parent = float(np.dot(yc, yc))
    cs = np.cumsum(yc)[:-1]
    cs2 = np.cumsum(yc * yc)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    ok = (xs[:-1] < xs[1:]) & (n_left >= params.min_samples_leaf) & (n_right >= params.min_samples_leaf)
    if not ok.any():
        return np.empty(0), np.empty(0)
    tot, tot2 = cs[-1] + yc[-1], cs2[-1] + yc[-1] ** 2
    sse_left = cs2 - cs * cs / n_left
    sse_right = (tot2 - cs2) - (tot - cs) ** 2 / n_right
    scores = 1.0 - (sse_left + sse_right) / sse_parent
    pos = np.flatnonzero(ok)
    thresholds = 0.5 * (xs[pos] + xs[pos + 1])
    return thresholds, scores[pos]


def _has_variance(y: np.ndarray) -> bool:
    spread = float(np.ptp(y))
    return spread > 1e-12 * max(1.0, float(np.max(np.abs(y))))


def best_split(X, y, feature: int, params: TreeParams = TreeParams()):
    """Best threshold on ``feature`` as ``(threshold, normalized_decrease)`` or None.

    The decrease is ``1 - (SSE_left + SSE_right) / SSE_parent``, i.e. the
    weighted variance reduction divided by the parent variance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] < max(2, params.min_samples_split) or not _has_variance(y):
        return None
    thresholds, scores = _split_scores(X[:, feature], y, params)
    if scores.size == 0:
        return None
    best = scores.max()
    k = int(np.flatnonzero(scores >= best - TIE_TOL)[0])
    if scores[k] < params.min_impurity_decrease:
        return None
    return float(thresholds[k]), float(scores[k])


def _choose_split(X: np.ndarray, y: np.ndarray, params: TreeParams):
    if y.shape[0] < params.min_samples_split or not _has_variance(y):
        return None
    per_feature = [_split_scores(X[:, j], y, params) for j in range(X.shape[1])]
    top = max((s.max() for _, s in per_feature if s.size), default=None)
    if top is None or top < params.min_impurity_decrease:
        return None
    for j, (thr, s) in enumerate(per_feature):
        hits = np.flatnonzero(s >= top - TIE_TOL)
        if hits.size:
            k = int(hits[0])
            if s[k] < params.min_impurity_decrease:
                return None
            return j, float(thr[k])
    return None


def fit_tree(X, y, params: TreeParams = TreeParams()) -> DecisionTree:
    """Greedy top-down CART on squared error.

    Ties on the decrease go to the lowest feature index, then the lowest
    threshold.  Leaf ids follow left-to-right depth-first order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise ValueError("cannot fit a tree on zero samples")
    tree = DecisionTree(n_features=X.shape[1])

    def grow(idx: np.ndarray, depth: int) -> int:
        me = len(tree.nodes)
        tree.nodes.append(None)  # placeholder, filled once children exist
        ys = y[idx]
        split = _choose_split(X[idx], ys, params) if depth < params.max_depth else None
        if split is None:
            tree.nodes[me] = Node(float(ys.mean()), len(idx), depth, leaf_id=tree.leaf_count)
            tree.leaf_count += 1
            return me
        feature, threshold = split
        mask = X[idx, feature] <= threshold
        left = grow(idx[mask], depth + 1)
        right = grow(idx[~mask], depth + 1)
        tree.nodes[me] = Node(float(ys.mean()), len(idx), depth, feature, threshold, left, right)
        return me

    grow(np.arange(y.shape[0]), 0)
    return tree


def assign_vlabel(tree: DecisionTree, x) -> int:
    """Virtual label (0-based leaf id) of a single standardized vector."""
    return int(tree.apply(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


class TreeReservoir(Reservoir):
    def __init__(self, capacity: int = 2000, rng: np.random.Generator | None = None):
        super().__init__(capacity, rng if rng is not None else np.random.default_rng())


def update_tree(reservoir: TreeReservoir, tree: DecisionTree | None, X, y,
                params: TreeParams = TreeParams()):
    """Add a labeled batch to the reservoir and refit the tree from it.

    ``tree`` is accepted for interface symmetry; the new tree never depends
    on the old one.
    """
    reservoir.extend(X, y)
    RX, Ry = reservoir.arrays()
    return reservoir, fit_tree(RX, Ry, params)
