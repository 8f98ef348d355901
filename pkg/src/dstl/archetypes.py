"""Greedy simplex volume maximization (SiVM) for archetype selection.

Atoms are always actual pool columns. The first two are found by a two-pass
farthest-point search (farthest from the pool centroid, then farthest from
that), which makes the selection independent of column order.
Each further atom maximizes the Cayley-Menger volume of the simplex formed
with the already selected atoms, under the SiVM simplification that all
pairwise squared distances among the selected atoms equal a constant ``a``
(the squared length of the initial pair). For ``k`` selected atoms and squared
candidate distances ``e_1..e_k`` the squared volume is, up to a positive
factor and a candidate-independent offset,

    a * sum(e) + sum_{i<j} e_i e_j - (k - 1)/2 * sum(e^2)

which needs only the running sums of ``e`` and ``e^2``: O(K * Q) distance
evaluations in total.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coding import Dictionary
from .errors import DimensionError, InfeasibleError, InvalidInputError


@dataclass(frozen=True)
class ArchetypeSelection:
    indices: tuple
    pool_size: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise InvalidInputError("archetype indices must be distinct")
        if any(i < 0 or i >= self.pool_size for i in idx):
            raise InvalidInputError(f"archetype index out of range [0, {self.pool_size})")
        object.__setattr__(self, "indices", idx)

    @property
    def K(self) -> int:
        return len(self.indices)


def first_occurrences(pool: np.ndarray) -> np.ndarray:
    """Sorted indices of the first occurrence of every distinct pool column."""
    _, first = np.unique(np.asarray(pool), axis=1, return_index=True)
    return np.sort(first)


def _sq_dist_to(pool: np.ndarray, col: np.ndarray) -> np.ndarray:
    diff = pool - col[:, None]
    return np.einsum("ij,ij->j", diff, diff)


def select_archetypes(pool: np.ndarray, K: int) -> ArchetypeSelection:
    """Pick ``K`` pool columns approximately spanning the largest simplex."""
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2:
        raise DimensionError(f"pool must be 2-D, got shape {pool.shape}")
    if not np.all(np.isfinite(pool)):
        raise InvalidInputError("pool must be finite")
    K = int(K)
    if K < 2:
        raise InvalidInputError(f"K must be >= 2, got {K}")
    Q = pool.shape[1]
    eligible = np.zeros(Q, dtype=bool)
    eligible[first_occurrences(pool)] = True
    if K > eligible.sum():
        raise InfeasibleError(f"K={K} exceeds the {int(eligible.sum())} distinct pool columns")

    # starting from the centroid keeps the selection independent of column order
    centroid = pool[:, eligible].mean(axis=1)
    d = np.where(eligible, _sq_dist_to(pool, centroid), -np.inf)
    first = int(np.argmax(d))
    e = _sq_dist_to(pool, pool[:, first])
    d = np.where(eligible, e, -np.inf)
    second = int(np.argmax(d))
    a = float(d[second])

    selected = [first, second]
    eligible[first] = eligible[second] = False
    e2 = _sq_dist_to(pool, pool[:, second])
    s1 = e + e2
    s2 = e * e + e2 * e2
    while len(selected) < K:
        k = len(selected)
        score = a * s1 + 0.5 * (s1 * s1 - s2) - 0.5 * (k - 1) * s2
        score = np.where(eligible, score, -np.inf)
        nxt = int(np.argmax(score))
        selected.append(nxt)
        eligible[nxt] = False
        e = _sq_dist_to(pool, pool[:, nxt])
        s1 += e
        s2 += e * e
    return ArchetypeSelection(tuple(selected), Q)


def build_dictionary(pool: np.ndarray, selection: ArchetypeSelection) -> Dictionary:
    pool = np.asarray(pool, dtype=np.float64)
    if selection.pool_size != pool.shape[1]:
        raise DimensionError(
            f"selection made on a pool of {selection.pool_size}, got {pool.shape[1]} columns")
    idx = list(selection.indices)
    return Dictionary(pool[:, idx], source_indices=tuple(idx))


def volume_proxy(pool: np.ndarray, indices: Sequence[int]) -> float:
    """Sum of pairwise squared distances among the selected columns.

    Grows with every added atom, so it tracks how much the greedy selection
    spreads out as ``K`` increases.
    """
    P = np.asarray(pool, dtype=np.float64)[:, list(indices)]
    sq = np.sum(P * P, axis=0)
    G = sq[:, None] + sq[None, :] - 2.0 * (P.T @ P)
    return float(np.sum(np.triu(np.maximum(G, 0.0), 1)))
