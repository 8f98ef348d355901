"""Simplex-constrained least-squares coding.

Every representation in the network is a column ``alpha`` minimizing
``||D alpha - x||^2`` subject to ``alpha >= 0`` and ``sum(alpha) = 1``.
The solver is projected gradient descent with an exact sort-based Euclidean
projection onto the probability simplex and step ``1/L``, where ``L`` is the
largest eigenvalue of ``D^T D``.

Columns are solved independently by a compiled per-column kernel, so a column
coded inside a batch is bitwise identical to the same column coded alone,
whatever the batch size or thread count.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import CodingError, DimensionError, InvalidInputError

# the bundled TBB is too old for numba; workqueue is always available
numba.config.THREADING_LAYER = "workqueue"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
POWER_ITERATIONS = 50
POWER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Dictionary:
    """``M x K`` matrix of atoms, optionally remembering which pool columns they came from."""

    atoms: np.ndarray
    source_indices: Optional[tuple] = None

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, order="C")
        if atoms.ndim != 2:
            raise DimensionError(f"atoms must be a 2-D matrix, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise InvalidInputError("dictionary atoms must be finite")
        M, K = atoms.shape
        if M < 1 or K < 2:
            raise InvalidInputError(f"dictionary needs M >= 1 and K >= 2, got {atoms.shape}")
        if _has_duplicate_columns(atoms):
            raise InvalidInputError("dictionary atoms must be pairwise distinct")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        if self.source_indices is not None:
            src = tuple(int(i) for i in self.source_indices)
            if len(src) != K:
                raise DimensionError(f"{len(src)} source indices for {K} atoms")
            if len(set(src)) != K or min(src) < 0:
                raise InvalidInputError("source indices must be distinct and non-negative")
            object.__setattr__(self, "source_indices", src)

    @property
    def M(self) -> int:
        return self.atoms.shape[0]

    @property
    def K(self) -> int:
        return self.atoms.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.atoms.T @ self.atoms

    @cached_property
    def lipschitz(self) -> float:
        return lipschitz_constant(self.gram)


def _has_duplicate_columns(atoms: np.ndarray) -> bool:
    return np.unique(atoms, axis=1).shape[1] < atoms.shape[1]


def lipschitz_constant(gram: np.ndarray, n_iter: int = POWER_ITERATIONS,
                       tol: float = POWER_TOL) -> float:
    """Largest eigenvalue of the PSD matrix ``gram`` by power iteration.

    The start vector is a fixed pseudo-random draw so that no structured
    dictionary can make it orthogonal to the leading eigenvector.
    """
    K = gram.shape[0]
    v = np.random.default_rng(0).standard_normal(K)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        new_lam = float(v @ w)
        v = w / norm
        if abs(new_lam - lam) <= tol * max(abs(new_lam), 1.0):
            lam = new_lam
            break
        lam = new_lam
    # mean eigenvalue is a guaranteed lower bound on the largest one
    return max(lam, float(np.trace(gram)) / K)


@numba.njit(cache=True)
def _project_inplace(y, out, buf):
    K = y.shape[0]
    order = np.argsort(-y, kind="mergesort")
    css = 0.0
    theta = 0.0
    for j in range(K):
        buf[j] = y[order[j]]
    for j in range(K):
        css += buf[j]
        t = (css - 1.0) / (j + 1)
        if buf[j] - t > 0.0:
            theta = t
    for k in range(K):
        v = y[k] - theta
        out[k] = v if v > 0.0 else 0.0


@numba.njit(cache=True)
def _code_column(atoms, gram, x, step, tol, max_iter, alpha):
    M, K = atoms.shape
    b = np.zeros(K)
    for k in range(K):
        s = 0.0
        for m in range(M):
            s += atoms[m, k] * x[m]
        b[k] = s
    y = np.empty(K)
    new = np.empty(K)
    buf = np.empty(K)
    for k in range(K):
        alpha[k] = 1.0 / K
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        for i in range(K):
            g = -b[i]
            for j in range(K):
                g += gram[i, j] * alpha[j]
            y[i] = alpha[i] - step * g
        _project_inplace(y, new, buf)
        change = 0.0
        for k in range(K):
            d = abs(new[k] - alpha[k])
            if d > change:
                change = d
            alpha[k] = new[k]
        if change < tol:
            break
    _polish(atoms, gram, b, x, alpha)
    return n_iter


@numba.njit(cache=True)
def _sq_residual(atoms, x, alpha):
    M, K = atoms.shape
    r = 0.0
    for m in range(M):
        s = -x[m]
        for k in range(K):
            s += atoms[m, k] * alpha[k]
        r += s * s
    return r


@numba.njit(cache=True)
def _polish(atoms, gram, b, x, alpha):
    """Exact finish on the support found by the gradient iterations.

    Solves the equality-constrained least-squares problem on the current
    support through its KKT system, dropping the most negative coefficient
    until the solution is non-negative. The result replaces ``alpha`` only if
    it does not increase the residual, so the finish can never hurt.
    """
    K = alpha.shape[0]
    support = np.empty(K, dtype=np.int64)
    s = 0
    for k in range(K):
        if alpha[k] > 0.0:
            support[s] = k
            s += 1
    cand = np.zeros(K)
    while s >= 1:
        kkt = np.zeros((s + 1, s + 1))
        rhs = np.zeros(s + 1)
        for i in range(s):
            for j in range(s):
                kkt[i, j] = gram[support[i], support[j]]
            kkt[i, s] = 1.0
            kkt[s, i] = 1.0
            rhs[i] = b[support[i]]
        rhs[s] = 1.0
        sol = np.linalg.lstsq(kkt, rhs)[0]
        worst = 0
        for i in range(1, s):
            if sol[i] < sol[worst]:
                worst = i
        if sol[worst] >= 0.0:
            total = 0.0
            for i in range(s):
                total += sol[i]
            if not total > 0.0:
                return
            cand[:] = 0.0
            for i in range(s):
                cand[support[i]] = sol[i] / total
            if _sq_residual(atoms, x, cand) <= _sq_residual(atoms, x, alpha):
                alpha[:] = cand
            return
        for i in range(worst, s - 1):
            support[i] = support[i + 1]
        s -= 1


@numba.njit(cache=True, parallel=True)
def _code_columns(atoms, gram, X, step, tol, max_iter, out, iters):
    N = X.shape[1]
    for n in numba.prange(N):
        x = np.ascontiguousarray(X[:, n])
        alpha = np.empty(atoms.shape[1])
        iters[n] = _code_column(atoms, gram, x, step, tol, max_iter, alpha)
        for k in range(alpha.shape[0]):
            out[k, n] = alpha[k]


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of ``y`` onto the probability simplex."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    Y = y[:, None] if single else y
    out = np.empty_like(Y)
    buf = np.empty(Y.shape[0])
    col = np.empty(Y.shape[0])
    for n in range(Y.shape[1]):
        _project_inplace(np.ascontiguousarray(Y[:, n]), col, buf)
        out[:, n] = col
    return out[:, 0] if single else out


def _check_settings(tol, max_iter):
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    if int(max_iter) < 1:
        raise InvalidInputError(f"max_iter must be >= 1, got {max_iter}")


def code_batch(dictionary: Dictionary, X: np.ndarray, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, return_iterations: bool = False):
    """Code every column of ``X`` (``M x N``) on the simplex spanned by the atoms.

    Returns the ``K x N`` coefficient matrix (and the per-column iteration
    counts when ``return_iterations`` is set).
    """
    _check_settings(tol, max_iter)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != dictionary.M:
        raise DimensionError(f"X has {X.shape[0]} rows, dictionary has M={dictionary.M}")
    finite = np.isfinite(X).all(axis=0)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise CodingError(bad, "non-finite input")
    N = X.shape[1]
    out = np.empty((dictionary.K, N))
    iters = np.zeros(N, dtype=np.int64)
    if N:
        _code_columns(dictionary.atoms, np.ascontiguousarray(dictionary.gram), X,
                      1.0 / dictionary.lipschitz, float(tol), int(max_iter), out, iters)
    if return_iterations:
        return out, iters
    return out


def code_sample(dictionary: Dictionary, x: np.ndarray, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"x must be a vector, got shape {x.shape}")
    if x.shape[0] != dictionary.M:
        raise DimensionError(f"x has length {x.shape[0]}, dictionary has M={dictionary.M}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x must be finite")
    return code_batch(dictionary, x[:, None], tol, max_iter)[:, 0]


def _atoms_of(dictionary) -> np.ndarray:
    return dictionary.atoms if isinstance(dictionary, Dictionary) else np.asarray(dictionary, float)


def reconstruct(dictionary: Dictionary, A: np.ndarray) -> np.ndarray:
    """Matrix product ``D A``."""
    D = _atoms_of(dictionary)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] != D.shape[1]:
        raise DimensionError(f"codes have {A.shape[0]} rows, dictionary has K={D.shape[1]}")
    return D @ A


def residual_norm(dictionary: Dictionary, X: np.ndarray, A: np.ndarray) -> float:
    """Frobenius norm of ``D A - X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    R = reconstruct(dictionary, A)
    if R.shape != X.shape:
        raise DimensionError(f"reconstruction shape {R.shape} != data shape {X.shape}")
    return float(np.linalg.norm(R - X))


def set_threads(n: Optional[int]) -> int:
    """Set the worker count for batch coding; ``None`` means all available cores."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n is None else max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n


def check_codes(A: np.ndarray, feas_tol: float = 1e-10, sum_tol: float = 1e-8) -> bool:
    """True when every column of ``A`` lies on the probability simplex."""
    A = np.asarray(A, dtype=np.float64)
    return bool(np.all(A >= -feas_tol) and np.all(np.abs(A.sum(axis=0) - 1.0) <= sum_tol))


__all__: Sequence[str] = [
    "Dictionary", "code_sample", "code_batch", "reconstruct", "residual_norm",
    "project_simplex", "lipschitz_constant", "check_codes", "set_threads",
]
