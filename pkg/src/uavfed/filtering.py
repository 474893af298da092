"""Dynamic Threshold Byzantine Filtering of local gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform


@dataclass(frozen=True)
class FilterConfig:
    delta: float = 0.5
    omega_eps: float = 0.0
    byz_fraction_bound: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 <= self.byz_fraction_bound < 0.5:
            raise ValueError("byz_fraction_bound must lie in [0, 0.5)")


@dataclass(frozen=True)
class FilterReport:
    good_set: tuple[int, ...]
    threshold_used: float
    epsilon: float
    median_index: int | None
    stage: int
    candidate_set: tuple[int, ...] = field(default=())


def _as_matrix(grads: Sequence[np.ndarray]) -> np.ndarray:
    dims = {np.shape(g) for g in grads}
    if len(dims) != 1:
        raise ValueError(f"gradient dimensions differ: {sorted(dims)}")
    m = np.asarray(grads, dtype=float)
    return m.reshape(len(grads), -1)


def pairwise_distances(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Euclidean distances over unordered distinct pairs, in ``pdist`` order."""
    if len(grads) < 2:
        raise ValueError("need at least two gradients")
    return pdist(_as_matrix(grads))


def dynamic_bound(grads: Sequence[np.ndarray], omega: float) -> float:
    d = pairwise_distances(grads)
    return float(d.mean() + omega * d.std())


def threshold(eps: float, batch_size: int, n_nodes: int, delta: float) -> float:
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    v = 2.0 * math.log(2.0 * n_nodes / delta)
    return 2.0 * eps * math.sqrt(v / batch_size)


def _stage(mat: np.ndarray, dist: np.ndarray, thr: float):
    n = len(mat)
    close = dist <= thr
    candidates = np.flatnonzero(close.sum(axis=1) > n / 2)
    if candidates.size == 0:
        return (), None, ()
    centre = mat[candidates].mean(axis=0)
    gap = np.linalg.norm(mat[candidates] - centre, axis=1)
    med = int(candidates[np.argmin(gap)])  # argmin keeps the lowest index on ties
    good = tuple(int(i) for i in np.flatnonzero(close[med]))
    return good, med, tuple(int(i) for i in candidates)


def dtbf(grads: Sequence[np.ndarray], batch_size: int, cfg: FilterConfig,
         epsilon: float | None = None) -> FilterReport:
    """Two-stage filter: strict batch-scaled threshold, then the lenient ``2*eps``.

    Each stage keeps the gradients with a strict majority of neighbours (self
    included) within the threshold, takes the one nearest their mean as the
    median, and admits every node within the threshold of it. The lenient
    stage runs only if the strict one admitted fewer than ``(1-alpha_B) N``.

    ``epsilon`` overrides the dynamic variance bound (static-bound baseline).
    """
    mat = _as_matrix(grads)
    n = len(mat)
    if n < 2:
        raise ValueError("need at least two gradients")
    eps = dynamic_bound(grads, cfg.omega_eps) if epsilon is None else float(epsilon)
    dist = squareform(pdist(mat))
    need = (1.0 - cfg.byz_fraction_bound) * n
    report = None
    for stage, thr in enumerate((threshold(eps, batch_size, n, cfg.delta), 2.0 * eps), 1):
        if report is not None and len(report.good_set) >= need:
            break
        good, med, cand = _stage(mat, dist, thr)
        report = FilterReport(good, thr, eps, med, stage, cand)
    return report
