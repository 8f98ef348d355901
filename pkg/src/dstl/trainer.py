"""Supervised refinement of a pre-trained network.

One outer iteration:

1. move the last layer's training codes against the clipped gradient of
   ``1/2 ||t - t_hat||^2`` (only the last-layer block of the classifier input);
2. decode the moved codes downwards, ``A*(l) = D(l+1) A*(l+1)``, without
   re-projecting onto the simplex;
3. take a clipped gradient step on ``1/2 ||D(l) A(l) - A*(l-1)||^2`` for every
   layer, with ``A*(0)`` the raw training data;
4. snap atoms that drifted far enough onto their nearest unlabeled pool
   column, then re-encode the training data and refit the classifier.

The gradient steps of (3) accumulate in a continuous "drift" copy of each
dictionary. The model itself only ever holds pool columns: an atom changes
when its drift copy has moved more than ``snap_threshold`` (relative L2) away
from it, and is then replaced by the pool column nearest to the drift copy.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import classifier
from .coding import Dictionary, code_batch
from .data import LabeledDataset, evaluate
from .errors import DimensionError, InvalidInputError, NotFittedError
from .network import (DstlModel, classifier_features, encode, fit_classifier,
                      unlabeled_pools)

log = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-12


def clip_elementwise(g, t: float):
    if not t > 0:
        raise InvalidInputError(f"clip threshold must be positive, got {t}")
    return np.clip(g, -t, t)


def update_last_layer_reps(model: DstlModel, codes: Sequence[np.ndarray], targets,
                           X=None) -> np.ndarray:
    """Step 1: ``A_L - a * clip(dJ/dA_L, t1)`` for the training codes ``codes = [A1..AL]``."""
    if model.classifier is None:
        raise NotFittedError("classifier unset")
    hp = model.hyperparams
    F = classifier_features(model, codes, X)
    grad = classifier.input_gradient(model.classifier, F, targets)[model.last_block()]
    return codes[-1] - hp.lr_a * clip_elementwise(grad, hp.clip_t1)


def backprop_reps(model: DstlModel, A_star_L: np.ndarray) -> List[np.ndarray]:
    """Step 2: decoded targets ``[A*(1), ..., A*(L)]`` (the last entry is ``A_star_L``)."""
    A_star_L = np.asarray(A_star_L, dtype=np.float64)
    dicts = model.dictionaries
    if A_star_L.shape[0] != dicts[-1].K:
        raise DimensionError(f"last-layer codes have {A_star_L.shape[0]} rows, K={dicts[-1].K}")
    out = [A_star_L]
    for l in range(len(dicts) - 1, 0, -1):
        out.insert(0, dicts[l].atoms @ out[0])
    return out


def dictionary_gradient(atoms, codes, target) -> np.ndarray:
    """Gradient of ``1/2 ||D A - target||_F^2`` with respect to ``D``.

    Column ``k`` is ``(D A - target) alpha_k^T`` with ``alpha_k`` the k-th
    row of ``A``.
    """
    D = np.asarray(atoms, dtype=np.float64)
    A = np.asarray(codes, dtype=np.float64)
    T = np.asarray(target, dtype=np.float64)
    if D.shape[1] != A.shape[0] or T.shape != (D.shape[0], A.shape[1]):
        raise DimensionError(f"shapes D{D.shape} A{A.shape} target{T.shape} do not conform")
    return (D @ A - T) @ A.T


def update_dictionaries(atoms: Sequence[np.ndarray], updated_reps: Sequence[np.ndarray],
                        forward_reps: Sequence[np.ndarray], t2: float, gamma: float
                        ) -> List[np.ndarray]:
    """Step 3: ``D(l) - gamma * clip((D(l) A(l) - A*(l-1)) A(l)^T, t2)`` for every layer.

    ``updated_reps`` is ``[A*(0) = X, A*(1), ..., A*(L-1)]`` (extra trailing
    entries are ignored); ``forward_reps`` is ``[A(1), ..., A(L)]``. Atoms are
    returned as plain matrices, before any snapping.
    """
    L = len(atoms)
    if len(forward_reps) != L or len(updated_reps) < L:
        raise DimensionError("need one forward code matrix and one target per layer")
    new = []
    for l in range(L):
        g = dictionary_gradient(atoms[l], forward_reps[l], updated_reps[l])
        new.append(np.asarray(atoms[l], dtype=np.float64) - gamma * clip_elementwise(g, t2))
    return new


def _sq_dists(pool: np.ndarray, v: np.ndarray) -> np.ndarray:
    diff = pool - v[:, None]
    return np.einsum("ij,ij->j", diff, diff)


def _pool_groups(pool: np.ndarray):
    """Group id of every pool column (equal columns share an id) and the first column per id."""
    _, first, inverse = np.unique(pool, axis=1, return_index=True, return_inverse=True)
    return np.asarray(inverse).reshape(-1), first


def snap_to_pool(moved, prev: Dictionary, pool: np.ndarray, snap_threshold: float,
                 force: Sequence[int] = ()) -> Dictionary:
    """Return a dictionary of pool columns following the moved atoms.

    Atom ``k`` is replaced by the nearest pool column to ``moved[:, k]`` when
    its relative change ``||moved_k - prev_k|| / ||prev_k||`` exceeds
    ``snap_threshold`` (or ``k`` is listed in ``force``); otherwise it keeps
    its previous value. Columns equal to an atom already in use are skipped,
    so atoms stay distinct. Distance ties go to the smallest pool index.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[1] == 0:
        raise InvalidInputError("snapping pool is empty")
    moved = np.asarray(moved, dtype=np.float64)
    if moved.shape != prev.atoms.shape or pool.shape[0] != prev.M:
        raise DimensionError(f"moved atoms {moved.shape}, previous {prev.atoms.shape}, "
                             f"pool {pool.shape} do not conform")
    if prev.source_indices is None:
        raise InvalidInputError("previous dictionary has no pool indices")
    src = list(prev.source_indices)
    if max(src) >= pool.shape[1]:
        raise InvalidInputError("source index outside the pool")
    force = set(int(k) for k in force)
    change = np.linalg.norm(moved - prev.atoms, axis=0)
    scale = np.linalg.norm(prev.atoms, axis=0)
    rel = np.where(scale > 0, change / np.where(scale > 0, scale, 1.0), change)
    to_snap = [k for k in range(prev.K) if rel[k] > snap_threshold or k in force]
    if not to_snap:
        return prev

    groups, first = _pool_groups(pool)
    candidates = np.zeros(pool.shape[1], dtype=bool)
    candidates[first] = True
    for k in to_snap:
        used = {groups[src[j]] for j in range(prev.K) if j != k}
        d = _sq_dists(pool, moved[:, k])
        ok = candidates & ~np.isin(groups, list(used))
        if groups[src[k]] not in used:
            ok[src[k]] = True  # keeping its own column is always allowed
        d = np.where(ok, d, np.inf)
        src[k] = int(np.argmin(d))
    return Dictionary(pool[:, src], source_indices=tuple(src))


def refit(model: DstlModel, labeled: LabeledDataset):
    """Step 4: re-encode the labeled data and refit the classifier.

    Returns ``(model, codes)``.
    """
    codes = encode(model, labeled.X)
    return fit_classifier(model, codes, labeled.targets, labeled.X), codes


@dataclass
class TrainTrace:
    n_layers: int
    records: list = field(default_factory=list)
    best_iteration: int = 0

    def record(self, iteration, residuals, val_accuracy, snaps):
        self.records.append({
            "iteration": int(iteration),
            "residuals": [float(r) for r in residuals],
            "val_overall_accuracy": float(val_accuracy),
            "snaps": [int(s) for s in snaps],
        })

    @property
    def val_accuracy(self) -> np.ndarray:
        return np.array([r["val_overall_accuracy"] for r in self.records])

    @property
    def best_accuracy(self) -> float:
        return self.records[self.best_iteration]["val_overall_accuracy"]

    def header(self) -> list:
        L = self.n_layers
        return (["iteration"] + [f"residual_layer{l}" for l in range(1, L + 1)]
                + ["val_overall_accuracy"] + [f"snaps_layer{l}" for l in range(1, L + 1)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for r in self.records:
            w.writerow([r["iteration"]] + [repr(x) for x in r["residuals"]]
                       + [repr(r["val_overall_accuracy"])] + r["snaps"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"n_layers": self.n_layers, "best_iteration": self.best_iteration,
                "records": self.records}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainTrace":
        return cls(int(d["n_layers"]), list(d["records"]), int(d["best_iteration"]))


def layer_residuals(model: DstlModel, X, codes) -> List[float]:
    inputs = [np.asarray(X, dtype=np.float64)] + list(codes[:-1])
    return [float(np.linalg.norm(D.atoms @ A - Y))
            for D, A, Y in zip(model.dictionaries, codes, inputs)]


def validation_accuracy(model: DstlModel, validation: LabeledDataset) -> float:
    codes = encode(model, validation.X)
    F = classifier_features(model, codes, validation.X)
    pred = classifier.predict_label(model.classifier, F)
    return evaluate(validation.labels, pred, validation.C).overall_accuracy


class _PoolState:
    """Unlabeled pools per layer, refreshed when a lower dictionary changes."""

    def __init__(self, model: DstlModel, unlabeled):
        self.pools = unlabeled_pools(model, unlabeled)

    def refresh(self, below: Dictionary, layer: int, hp) -> None:
        """Re-code pool ``layer`` from the pool under it with that layer's new dictionary."""
        self.pools[layer] = code_batch(below, self.pools[layer - 1], hp.coding_tol,
                                       hp.coding_max_iter)


def _rebase_on_pool(D: Dictionary, pool: np.ndarray, snap_threshold: float) -> Dictionary:
    """Re-read atoms from their pool indices after the pool itself changed."""
    src = list(D.source_indices)
    atoms = pool[:, src]
    groups, first = _pool_groups(pool)
    seen, clash = set(), []
    for k, j in enumerate(src):
        if groups[j] in seen:
            clash.append(k)
        seen.add(groups[j])
    if not clash:
        return Dictionary(atoms, source_indices=tuple(src))
    # two atoms now code identically; keep the first and move the others
    keep_src = list(src)
    spare = [int(i) for i in first if groups[i] not in seen]
    if len(spare) < len(clash):
        raise InvalidInputError("pool has too few distinct columns after refresh")
    for k in clash:
        keep_src[k] = spare.pop(0)
    placeholder = Dictionary(pool[:, keep_src], source_indices=tuple(keep_src))
    return snap_to_pool(atoms, placeholder, pool, snap_threshold, force=clash)


def train(model: DstlModel, labeled: LabeledDataset, validation: LabeledDataset, unlabeled,
          callback: Optional[Callable[[int, dict], None]] = None):
    """Run up to ``max_outer_iter`` refinement iterations.

    Returns ``(best_model, trace)``; the best model is the snapshot with the
    highest validation overall accuracy, the earliest one on ties, with
    iteration 0 (the pre-trained model) among the candidates.
    """
    hp = model.hyperparams
    X, T = labeled.X, labeled.targets
    L = hp.n_layers
    model, codes = refit(model, labeled)
    pools = _PoolState(model, unlabeled)
    drift = [D.atoms.copy() for D in model.dictionaries]

    trace = TrainTrace(L)
    acc = validation_accuracy(model, validation)
    trace.record(0, layer_residuals(model, X, codes), acc, [0] * L)
    best, best_acc = model, acc
    if callback:
        callback(0, trace.records[-1])

    for it in range(1, hp.max_outer_iter + 1):
        A_star_L = update_last_layer_reps(model, codes, T, X)
        targets = [X] + backprop_reps(model, A_star_L)
        new_drift = update_dictionaries(drift, targets, codes, hp.clip_t2, hp.lr_gamma)
        motion = max(float(np.abs(n - o).max()) for n, o in zip(new_drift, drift))
        drift = new_drift

        dicts = list(model.dictionaries)
        snaps = [0] * L
        lower_changed = False
        for l in range(L):
            pool = pools.pools[l]
            base = dicts[l]
            if lower_changed:
                # the pool was re-coded under the new lower dictionary
                base = _rebase_on_pool(dicts[l], pool, hp.snap_threshold)
                drift[l] = drift[l] + (base.atoms - dicts[l].atoms)
            snapped = snap_to_pool(drift[l], base, pool, hp.snap_threshold)
            changed = [k for k in range(base.K)
                       if snapped.source_indices[k] != base.source_indices[k]]
            for k in changed:
                drift[l][:, k] = snapped.atoms[:, k]
            snaps[l] = len(changed)
            if changed or lower_changed:
                dicts[l] = snapped
                lower_changed = True
                if l + 1 < L:
                    pools.refresh(dicts[l], l + 1, hp)
        dict_changed = lower_changed
        if dict_changed:
            model = model.with_(dictionaries=tuple(dicts), classifier=None)
            model, codes = refit(model, labeled)
            acc = validation_accuracy(model, validation)
        trace.record(it, layer_residuals(model, X, codes), acc, snaps)
        if acc > best_acc:
            best, best_acc = model, acc
            trace.best_iteration = it
        if callback:
            callback(it, trace.records[-1])
        log.debug("iteration %d: val OA %.4f, snaps %s", it, acc, snaps)
        if not dict_changed and motion <= CONVERGENCE_TOL:
            log.info("dictionaries converged at iteration %d", it)
            break
    return best, trace
