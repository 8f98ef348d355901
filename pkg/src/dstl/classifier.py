"""Multinomial logistic (softmax) regression.

Features are columns (``K_in x N``), targets are 1-of-C columns (``C x N``).
Training minimizes the mean cross-entropy plus ``reg/2 * ||W||^2`` (bias not
penalized) by full-batch gradient descent with Armijo backtracking from a
zero start. ``input_gradient`` differentiates the squared probability error
``1/2 ||t - softmax(W a + b)||^2`` with respect to the features, which is the
signal that drives the representation update.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError

log = logging.getLogger(__name__)

DEFAULT_REG = 1e-4
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class SoftmaxParams:
    weights: np.ndarray  # C x K_in
    bias: np.ndarray  # C

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or W.shape[0] != b.shape[0]:
            raise DimensionError(f"weights {W.shape} and bias {b.shape} do not conform")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInputError("classifier parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def n_parameters(self) -> int:
        return (self.n_features + 1) * self.n_classes


def _as_features(F, n_features=None):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise DimensionError(f"features must be 2-D, got shape {F.shape}")
    if n_features is not None and F.shape[0] != n_features:
        raise DimensionError(f"features have {F.shape[0]} rows, classifier expects {n_features}")
    return F


def _softmax(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def predict_proba(params: SoftmaxParams, features) -> np.ndarray:
    """``C x N`` class probabilities."""
    F = _as_features(features, params.n_features)
    return _softmax(params.weights @ F + params.bias[:, None])


def predict_label(params: SoftmaxParams, features) -> np.ndarray:
    """1-based labels; ties go to the smallest class index."""
    return np.argmax(predict_proba(params, features), axis=0) + 1


def _objective(W, b, F, T, reg):
    Z = W @ F + b[:, None]
    Z = Z - Z.max(axis=0, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))
    N = F.shape[1]
    loss = -np.sum(T * logp) / N + 0.5 * reg * np.sum(W * W)
    G = (np.exp(logp) - T) / N
    return loss, G @ F.T + reg * W, G.sum(axis=1)


def validate_targets(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2:
        raise DimensionError(f"targets must be C x N, got shape {T.shape}")
    onehot = np.all((T == 0) | (T == 1)) and np.all(T.sum(axis=0) == 1)
    if not onehot:
        raise InvalidInputError("every target column must be a 1-of-C vector")
    return T


def fit(features, targets, reg: float = DEFAULT_REG, max_iter: int = DEFAULT_MAX_ITER,
        tol: float = DEFAULT_TOL, return_history: bool = False):
    """Fit softmax regression from zero weights.

    Stops when the gradient infinity-norm drops to ``tol`` or after
    ``max_iter`` accepted steps. With ``return_history`` the per-iteration
    objective values are returned as well.
    """
    F = _as_features(features)
    T = validate_targets(targets)
    if F.shape[1] != T.shape[1]:
        raise DimensionError(f"{F.shape[1]} feature columns but {T.shape[1]} target columns")
    if reg < 0:
        raise InvalidInputError(f"reg must be >= 0, got {reg}")
    C = T.shape[0]
    missing = np.flatnonzero(T.sum(axis=1) == 0)
    if missing.size:
        log.warning("classes %s absent from the targets; fitting anyway",
                    ", ".join(str(c + 1) for c in missing))

    W = np.zeros((C, F.shape[0]))
    b = np.zeros(C)
    loss, gW, gb = _objective(W, b, F, T, reg)
    history = [loss]
    step = 1.0
    for _ in range(int(max_iter)):
        gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
        if gnorm <= tol:
            break
        sq = np.sum(gW * gW) + np.sum(gb * gb)
        while True:
            W_new = W - step * gW
            b_new = b - step * gb
            new_loss, new_gW, new_gb = _objective(W_new, b_new, F, T, reg)
            if new_loss <= loss - 1e-4 * step * sq:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
        history.append(loss)
        step *= 2.0
    params = SoftmaxParams(W, b)
    if return_history:
        return params, np.array(history)
    return params


def input_gradient(params: SoftmaxParams, a, t) -> np.ndarray:
    """Gradient of ``1/2 ||t - softmax(W a + b)||^2`` with respect to ``a``.

    ``a`` and ``t`` may be single vectors or matrices of columns; the result
    has the shape of ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    single = a.ndim == 1
    A = _as_features(a, params.n_features)
    T = t[:, None] if t.ndim == 1 else t
    if T.shape != (params.n_classes, A.shape[1]):
        raise DimensionError(f"targets shape {t.shape} does not match classifier/features")
    P = _softmax(params.weights @ A + params.bias[:, None])
    E = P - T
    # softmax Jacobian diag(p) - p p^T applied to the probability error
    dZ = P * E - P * np.sum(P * E, axis=0, keepdims=True)
    G = params.weights.T @ dZ
    return G[:, 0] if single else G
