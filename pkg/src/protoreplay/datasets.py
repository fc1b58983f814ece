"""Seeded synthetic regression streams for desk-scale experiments.

``piecewise-drift``
    ``x ~ U[-1, 1]^d``; ``y = g(x0) + 0.5 * mean(x1..x_{d-1})`` where ``g`` is
    continuous piecewise linear with slopes 0.5 on ``[-1, 0)``, 2 on
    ``[0, 0.5)`` and 5 on ``[0.5, 1]`` (``g(0) = 0``).  High targets live in a
    narrow input region, which makes them easy to forget.
``friedman-like``
    ``x ~ U[0, 1]^d`` with ``d >= 5``;
    ``y = 10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4``.
``clusters``
    ``centers`` Gaussian blobs (std 0.5) around centres drawn from
    ``U[-5, 5]^d`` with a minimum separation of 3; the target is a per-cluster
    level ``2 * c`` plus ``0.25 * x0``.

Every kind adds ``noise * N(0, 1)`` to the target.
"""
from __future__ import annotations

import numpy as np

CLUSTER_SLOPE = 0.25  # within-cluster target trend along x0
KINDS = ("piecewise-drift", "friedman-like", "clusters")


def piecewise_target(X: np.ndarray) -> np.ndarray:
    x0 = X[:, 0]
    g = np.where(x0 < 0, 0.5 * x0,
                 np.where(x0 < 0.5, 2.0 * x0, 1.0 + 5.0 * (x0 - 0.5)))
    rest = X[:, 1:].mean(axis=1) if X.shape[1] > 1 else 0.0
    return g + 0.5 * rest


def friedman_target(X: np.ndarray) -> np.ndarray:
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def _cluster_centers(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    centers: list[np.ndarray] = []
    while len(centers) < k:
        c = rng.uniform(-5.0, 5.0, size=d)
        if all(np.linalg.norm(c - o) >= 3.0 for o in centers):
            centers.append(c)
    return np.array(centers)


def generate_synthetic_dataset(kind: str, n: int, d: int, noise: float = 0.0, seed: int = 0,
                               centers: int = 4, return_labels: bool = False):
    """Return ``(X, y)`` (plus cluster labels for ``clusters`` when asked)."""
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    labels = None
    if kind == "piecewise-drift":
        X = rng.uniform(-1.0, 1.0, size=(n, d))
        y = piecewise_target(X)
    elif kind == "friedman-like":
        if d < 5:
            raise ValueError("friedman-like needs d >= 5")
        X = rng.uniform(0.0, 1.0, size=(n, d))
        y = friedman_target(X)
    elif kind == "clusters":
        C = _cluster_centers(centers, d, rng)
        labels = rng.integers(0, centers, size=n)
        X = C[labels] + rng.normal(0.0, 0.5, size=(n, d))
        y = 2.0 * labels + CLUSTER_SLOPE * X[:, 0]
    else:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {KINDS}")
    if noise > 0:
        y = y + noise * rng.normal(size=n)
    if return_labels:
        return X, y, labels
    return X, y
