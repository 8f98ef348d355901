"""Layered archetypal network: hyperparameters, model container, pre-training and encoding."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import classifier
from .archetypes import build_dictionary, select_archetypes
from .coding import Dictionary, code_batch
from .errors import ConfigError, DimensionError, InfeasibleError, NotFittedError

log = logging.getLogger(__name__)

STACK_MODES = ("all", "last")


@dataclass(frozen=True)
class Hyperparams:
    layer_sizes: tuple = (20, 30)
    clip_t1: float = 1e-3
    clip_t2: float = 1e-3
    lr_a: float = 1.0
    lr_gamma: float = 1.0
    max_outer_iter: int = 1000
    snap_threshold: float = 0.05
    coding_tol: float = 1e-8
    coding_max_iter: int = 2000
    clf_reg: float = 1e-4
    clf_max_iter: int = 500
    clf_tol: float = 1e-6
    # "all": classifier sees every layer's codes stacked; "last": only layer L
    stack: str = "all"
    include_input: bool = False

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 1:
            raise ConfigError("need at least one layer")
        if min(sizes) < 2:
            raise ConfigError(f"every layer needs K >= 2, got {sizes}")
        for name in ("clip_t1", "clip_t2", "lr_a", "lr_gamma", "coding_tol", "clf_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.snap_threshold < 0:
            raise ConfigError("snap_threshold must be >= 0")
        if self.max_outer_iter < 0 or self.coding_max_iter < 1 or self.clf_max_iter < 0:
            raise ConfigError("iteration counts out of range")
        if self.clf_reg < 0:
            raise ConfigError("clf_reg must be >= 0")
        if self.stack not in STACK_MODES:
            raise ConfigError(f"stack must be one of {STACK_MODES}, got {self.stack!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        d = dict(d)
        if "layer_sizes" in d:
            d["layer_sizes"] = tuple(d["layer_sizes"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class DstlModel:
    dictionaries: tuple
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    classifier: Optional[classifier.SoftmaxParams] = None

    def __post_init__(self):
        dicts = tuple(self.dictionaries)
        object.__setattr__(self, "dictionaries", dicts)
        if len(dicts) != self.hyperparams.n_layers:
            raise DimensionError(
                f"{len(dicts)} dictionaries for {self.hyperparams.n_layers} configured layers")
        for l, (D, K) in enumerate(zip(dicts, self.hyperparams.layer_sizes), start=1):
            if D.K != K:
                raise DimensionError(f"layer {l} has {D.K} atoms, configured {K}")
            if l > 1 and D.M != dicts[l - 2].K:
                raise DimensionError(f"layer {l} atoms have {D.M} rows, layer {l-1} has K={dicts[l-2].K}")
        if self.classifier is not None and self.classifier.n_features != self.feature_dim:
            raise DimensionError(
                f"classifier expects {self.classifier.n_features} features, model gives {self.feature_dim}")

    @property
    def input_dim(self) -> int:
        return self.dictionaries[0].M

    @property
    def layer_sizes(self) -> tuple:
        return tuple(D.K for D in self.dictionaries)

    @property
    def feature_dim(self) -> int:
        hp = self.hyperparams
        dim = sum(self.layer_sizes) if hp.stack == "all" else self.layer_sizes[-1]
        return dim + (self.input_dim if hp.include_input else 0)

    def last_block(self) -> slice:
        """Rows of the classifier feature vector holding the last layer's codes."""
        return slice(self.feature_dim - self.layer_sizes[-1], self.feature_dim)

    def n_parameters(self, n_classes: Optional[int] = None) -> int:
        """Dictionary entries of every layer plus classifier weights and biases."""
        dims = (self.input_dim,) + self.layer_sizes
        n = sum(dims[l] * dims[l + 1] for l in range(len(self.layer_sizes)))
        if self.classifier is not None:
            return n + self.classifier.n_parameters
        if n_classes is None:
            raise NotFittedError("classifier unset; pass n_classes")
        return n + (self.feature_dim + 1) * int(n_classes)

    def with_(self, **changes) -> "DstlModel":
        return replace(self, **changes)


def parameter_count(M: int, layer_sizes: Sequence[int], C: int) -> int:
    """Learned parameters of a network whose classifier reads the last layer only.

    ``(M + K2) * K1 + (K2 + 1) * C`` for two layers.
    """
    dims = (int(M),) + tuple(int(k) for k in layer_sizes)
    return sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1)) + (dims[-1] + 1) * int(C)


def encode(model: DstlModel, X) -> List[np.ndarray]:
    """Codes of ``X`` at every layer, ``[A1, ..., AL]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.input_dim:
        raise DimensionError(f"X must have {model.input_dim} rows, got shape {X.shape}")
    hp = model.hyperparams
    codes = []
    current = X
    for D in model.dictionaries:
        current = code_batch(D, current, hp.coding_tol, hp.coding_max_iter)
        codes.append(current)
    return codes


def stack_features(codes: Sequence[np.ndarray]) -> np.ndarray:
    codes = [np.asarray(A, dtype=np.float64) for A in codes]
    if not codes:
        raise DimensionError("nothing to stack")
    n = {A.shape[1] for A in codes}
    if len(n) != 1:
        raise DimensionError(f"layers disagree on column count: {sorted(n)}")
    return np.vstack(codes)


def classifier_features(model: DstlModel, codes: Sequence[np.ndarray], X=None) -> np.ndarray:
    """Assemble the classifier input from per-layer codes per the model's stacking mode."""
    hp = model.hyperparams
    blocks = list(codes) if hp.stack == "all" else [codes[-1]]
    if hp.include_input:
        if X is None:
            raise DimensionError("include_input set but raw features not supplied")
        blocks = [X] + blocks
    return stack_features(blocks)


def pretrain(unlabeled, hp: Hyperparams) -> DstlModel:
    """Layer-wise archetype selection: layer 1 from the unlabeled data, layer l from its codes."""
    pool = np.asarray(unlabeled, dtype=np.float64)
    dicts = []
    for l, K in enumerate(hp.layer_sizes, start=1):
        try:
            sel = select_archetypes(pool, K)
        except InfeasibleError as exc:
            raise InfeasibleError(f"layer {l}: {exc}") from exc
        D = build_dictionary(pool, sel)
        log.info("layer %d: selected %d archetypes from %d pool columns", l, K, pool.shape[1])
        dicts.append(D)
        if l < hp.n_layers:
            pool = code_batch(D, pool, hp.coding_tol, hp.coding_max_iter)
    return DstlModel(tuple(dicts), hp)


def unlabeled_pools(model: DstlModel, unlabeled) -> List[np.ndarray]:
    """Pool each layer's atoms must come from: raw data, then the unlabeled codes."""
    pools = [np.asarray(unlabeled, dtype=np.float64)]
    hp = model.hyperparams
    for D in model.dictionaries[:-1]:
        pools.append(code_batch(D, pools[-1], hp.coding_tol, hp.coding_max_iter))
    return pools


def fit_classifier(model: DstlModel, codes, targets, X=None) -> DstlModel:
    hp = model.hyperparams
    F = classifier_features(model, codes, X)
    params = classifier.fit(F, targets, reg=hp.clf_reg, max_iter=hp.clf_max_iter, tol=hp.clf_tol)
    return model.with_(classifier=params)


def predict(model: DstlModel, X) -> np.ndarray:
    if model.classifier is None:
        raise NotFittedError("classifier unset")
    return classifier.predict_label(model.classifier, classifier_features(model, encode(model, X), X))
