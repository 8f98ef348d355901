"""Planted-archetype synthetic task standing in for the satellite data.

Generators are well-separated points in the unit cube. Samples are
Dirichlet convex combinations of the generators plus isotropic Gaussian
noise, and carry the class of their highest-weight generator; generators are
split into contiguous blocks, one block per class. The unlabeled pool comes
from the same process with every generator planted in it, so a perfect
archetype selector can recover them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .coding import Dictionary
from .data import LabeledDataset
from .errors import InfeasibleError, InvalidInputError

MAX_TRIES = 50


@dataclass(frozen=True, eq=False)
class SynthTask:
    labeled: LabeledDataset
    unlabeled: np.ndarray
    generators: Dictionary  # source_indices locate the generators in the unlabeled pool
    generator_class: np.ndarray  # 1-based class of each generator


def generator_classes(n_archetypes: int, n_classes: int) -> np.ndarray:
    return np.arange(n_archetypes) * n_classes // n_archetypes + 1


def in_convex_hull(P: np.ndarray, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean per column of ``X``: is it a convex combination of the columns of ``P``?"""
    P = np.asarray(P, float)
    X = np.asarray(X, float)
    M, K = P.shape
    aug = np.vstack([P, np.ones((1, K))])
    if np.linalg.matrix_rank(aug) == K:
        # affinely independent: barycentric coordinates are unique
        rhs = np.vstack([X, np.ones((1, X.shape[1]))])
        lam, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
        resid = np.abs(aug @ lam - rhs).max(axis=0, initial=0.0)
        return (lam.min(axis=0, initial=0.0) >= -tol) & (resid <= tol * (1 + np.abs(rhs).max()))
    return np.array([_lp_member(aug, np.append(x, 1.0)) for x in X.T], dtype=bool)


def _lp_member(aug: np.ndarray, rhs: np.ndarray) -> bool:
    res = linprog(np.zeros(aug.shape[1]), A_eq=aug, b_eq=rhs, bounds=(0, None), method="highs")
    return res.status == 0


def is_hull_vertex(points: np.ndarray, j: int) -> bool:
    """True when column ``j`` is not a convex combination of the other columns."""
    others = np.delete(points, j, axis=1)
    aug = np.vstack([others, np.ones((1, others.shape[1]))])
    return not _lp_member(aug, np.append(points[:, j], 1.0))


def synth_generate(M: int, n_archetypes: int, n_classes: int, n_samples: int,
                   noise_sigma: float, seed: int, n_unlabeled: int | None = None,
                   concentration: float = 1.0, one_hot: bool = False,
                   verify: bool = True) -> SynthTask:
    """Draw a labeled set of ``n_samples`` and an unlabeled pool of ``n_unlabeled``.

    With ``one_hot`` every sample is a single generator (sample ``i`` uses
    generator ``i mod n_archetypes``) instead of a Dirichlet mixture.
    With ``verify`` each generator is checked by linear programming to be a
    vertex of the convex hull of everything emitted; a failing draw is
    retried with fresh noise.
    """
    M, n_archetypes, n_classes, n_samples = int(M), int(n_archetypes), int(n_classes), int(n_samples)
    n_unlabeled = n_samples if n_unlabeled is None else int(n_unlabeled)
    if not n_archetypes >= n_classes >= 2:
        raise InfeasibleError("need n_archetypes >= n_classes >= 2")
    if M < 1 or n_samples < 1 or n_unlabeled < n_archetypes:
        raise InfeasibleError("need M >= 1, n_samples >= 1 and n_unlabeled >= n_archetypes")
    if noise_sigma < 0 or concentration <= 0:
        raise InvalidInputError("noise_sigma must be >= 0 and concentration > 0")

    rng = np.random.default_rng(seed)
    G = _separated_generators(rng, M, n_archetypes)
    cls = generator_classes(n_archetypes, n_classes)
    for _ in range(MAX_TRIES):
        X, W = _mixtures(rng, G, n_samples, noise_sigma, concentration, one_hot)
        U, _ = _mixtures(rng, G, n_unlabeled, noise_sigma, concentration, one_hot)
        slots = np.sort(rng.choice(n_unlabeled, n_archetypes, replace=False))
        U[:, slots] = G
        if not verify or _generators_are_vertices(G, np.hstack([U, X])):
            labels = cls[np.argmax(W, axis=0)]
            return SynthTask(LabeledDataset(X, labels, n_classes), U,
                             Dictionary(G, source_indices=tuple(slots.tolist())), cls)
    raise InfeasibleError("could not draw a pool in which every generator is a hull vertex")


def _separated_generators(rng, M, K) -> np.ndarray:
    min_dist = 0.5 * np.sqrt(M / 6.0)  # half the mean distance of uniform points in the cube
    for _ in range(MAX_TRIES):
        G = rng.random((M, K))
        d = np.linalg.norm(G[:, :, None] - G[:, None, :], axis=0)
        if K < 2 or d[np.triu_indices(K, 1)].min() >= min_dist:
            return G
    raise InfeasibleError(f"could not place {K} separated generators in {M} dimensions")


def _mixtures(rng, G, n, sigma, concentration, one_hot):
    K = G.shape[1]
    if one_hot:
        W = np.zeros((K, n))
        W[np.arange(n) % K, np.arange(n)] = 1.0
    else:
        W = rng.dirichlet(np.full(K, concentration), size=n).T
    X = G @ W
    if sigma > 0:
        X = X + sigma * rng.standard_normal(X.shape)
    return X, W


def _generators_are_vertices(G, emitted) -> bool:
    for k in range(G.shape[1]):
        g = G[:, k]
        # exact copies of the generator (planted or one-hot samples) do not hide it
        others = emitted[:, ~np.all(emitted == g[:, None], axis=0)]
        aug = np.vstack([others, np.ones((1, others.shape[1]))])
        if _lp_member(aug, np.append(g, 1.0)):
            return False
    return True
