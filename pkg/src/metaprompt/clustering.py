"""K-means (k-means++ seeding, Lloyd iterations) over sentence embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)


def _sq_dists(X, C):
    # explicit differences rather than the expanded quadratic form: exact zeros
    # for coincident points, which the tie rule and the K = n case rely on
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _assign(X, C):
    d = _sq_dists(X, C)
    a = d.argmin(axis=1)  # first minimum -> lowest cluster id on ties
    return a, float(d[np.arange(len(X)), a].sum())


def _kmeans_pp(X, K, rng):
    n = len(X)
    C = np.empty((K, X.shape[1]))
    C[0] = X[rng.integers(n)]
    closest = ((X - C[0]) ** 2).sum(axis=1)
    for j in range(1, K):
        total = closest.sum()
        if total <= 0:
            # all remaining mass sits on chosen centres; take any unchosen distinct point
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        C[j] = X[idx]
        closest = np.minimum(closest, ((X - C[j]) ** 2).sum(axis=1))
    return C


def kmeans(X, K: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-10) -> ClusterModel:
    X = np.asarray(X, dtype=float)
    n = len(X)
    if K < 1:
        raise ValueError("K must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if K > n:
        raise ValueError(f"K={K} exceeds number of points {n}")
    if K > len(np.unique(X, axis=0)):
        raise ValueError(f"K={K} exceeds number of distinct points")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4B]))
    C = _kmeans_pp(X, K, rng)
    a, obj = _assign(X, C)
    history = [obj]
    for _ in range(max_iters):
        C = C.copy()
        for c in range(K):
            m = a == c
            if m.any():
                # fixed point order for the reduction
                C[c] = X[m].sum(axis=0) / m.sum()
        # repair empty clusters from the point farthest from its centroid
        for c in range(K):
            if not (a == c).any():
                far = int(((X - C[a]) ** 2).sum(axis=1).argmax())
                C[c] = X[far]
                a[far] = c
        a, new_obj = _assign(X, C)
        if new_obj > obj * (1 + 1e-12) + 1e-300:
            raise AssertionError(f"k-means objective increased: {obj} -> {new_obj}")
        history.append(new_obj)
        improved = obj - new_obj
        obj = new_obj
        if improved < tol:
            break
    return ClusterModel(C, a, obj, history)


def nearest_cluster(model: ClusterModel, e) -> int:
    d = ((model.centroids - np.asarray(e, dtype=float)) ** 2).sum(axis=1)
    return int(d.argmin())


def inertia(X, model: ClusterModel) -> float:
    X = np.asarray(X, dtype=float)
    return float(((X - model.centroids[model.assignment]) ** 2).sum())
