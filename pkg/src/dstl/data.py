"""Data handling: rasters, patch extraction, normalization, splits, metrics and file I/O.

Feature matrices are column-major throughout: ``X[:, n]`` is one sample.
Labels are 1-based class indices; 0 marks an unlabeled pixel or row.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionError, InfeasibleError, InvalidInputError

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class RasterImage:
    values: np.ndarray  # B x H x W
    labels: Optional[np.ndarray] = None  # H x W, 0 = unlabeled
    nodata: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DimensionError(f"raster values must be B x H x W, got {v.shape}")
        valid = np.isfinite(v) if self.nodata is None else (np.isfinite(v) | (v == self.nodata))
        if not valid.all():
            raise InvalidInputError("raster values must be finite")
        object.__setattr__(self, "values", v)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != v.shape[1:]:
                raise DimensionError(f"label plane {lab.shape} != raster {v.shape[1:]}")
            if lab.min(initial=0) < 0:
                raise InvalidInputError("labels must be >= 0")
            object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray  # M x N
    labels: np.ndarray  # N, values in 1..C
    C: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if X.ndim != 2:
            raise DimensionError(f"X must be M x N, got {X.shape}")
        if X.shape[1] != y.shape[0]:
            raise DimensionError(f"{X.shape[1]} samples but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("features must be finite")
        C = int(self.C)
        if y.size and (y.min() < 1 or y.max() > C):
            raise InvalidInputError(f"labels must lie in 1..{C}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "C", C)

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return one_hot(self.labels, self.C)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.X[:, idx], self.labels[idx], self.C)


def one_hot(labels, C: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    T = np.zeros((int(C), y.shape[0]))
    T[y - 1, np.arange(y.shape[0])] = 1.0
    return T


@dataclass(frozen=True, eq=False)
class Metrics:
    confusion: np.ndarray  # rows = true class, columns = predicted
    per_class_accuracy: np.ndarray
    overall_accuracy: float
    average_accuracy: float
    kappa: float

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class_accuracy": [None if np.isnan(a) else float(a) for a in self.per_class_accuracy],
            "overall_accuracy": self.overall_accuracy,
            "average_accuracy": self.average_accuracy,
            "kappa": self.kappa,
        }


def evaluate(true_labels, predicted_labels, C: int) -> Metrics:
    """Confusion matrix, class-wise / overall / average accuracy and Cohen's kappa.

    Accuracies are fractions in [0, 1]. A class with no true samples gets a
    NaN class-wise accuracy and is left out of the average.
    """
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise DimensionError(f"{t.size} true labels vs {p.size} predictions")
    C = int(C)
    for name, y in (("true", t), ("predicted", p)):
        if y.size and (y.min() < 1 or y.max() > C):
            raise InvalidInputError(f"{name} labels outside 1..{C}")
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (t - 1, p - 1), 1)
    total = conf.sum()
    if total == 0:
        raise InvalidInputError("no samples to evaluate")
    rows = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(conf) / rows, np.nan)
    overall = float(np.trace(conf) / total)
    average = float(np.nanmean(per_class))
    p_e = float(np.sum(rows * conf.sum(axis=0)) / total ** 2)
    if p_e == 1.0:
        kappa = 1.0 if overall == 1.0 else 0.0
    else:
        kappa = (overall - p_e) / (1.0 - p_e)
    return Metrics(conf, per_class, overall, average, float(kappa))


def extract_patches(raster: RasterImage, patch: int, labeled_only: bool = False,
                    stride: int = 1, n_classes: Optional[int] = None):
    """One ``B * patch**2`` vector per patch fully inside the raster.

    Vectors are flattened band-major, then row-major within a band. With
    ``labeled_only`` the result is a ``LabeledDataset`` holding only patches
    whose center pixel is labeled; otherwise a bare feature matrix.
    Patches touching a nodata pixel are skipped.
    """
    patch = int(patch)
    if patch < 1 or patch % 2 == 0:
        raise InvalidInputError(f"patch size must be odd and >= 1, got {patch}")
    if patch > raster.height or patch > raster.width:
        raise InfeasibleError(f"patch {patch} exceeds raster {raster.height}x{raster.width}")
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if labeled_only and raster.labels is None:
        raise InvalidInputError("raster has no label plane")
    B = raster.bands
    windows = np.lib.stride_tricks.sliding_window_view(raster.values, (patch, patch), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # B x nh x nw x p x p
    nh, nw = windows.shape[1:3]
    X = windows.transpose(1, 2, 0, 3, 4).reshape(nh * nw, B * patch * patch).T
    h = patch // 2
    keep = np.ones(nh * nw, dtype=bool)
    if raster.nodata is not None:
        keep &= ~np.any(X == raster.nodata, axis=0)
    if not labeled_only:
        return np.ascontiguousarray(X[:, keep])
    centers = raster.labels[h:raster.height - h:stride, h:raster.width - h:stride][:nh, :nw].reshape(-1)
    keep &= centers > 0
    C = int(n_classes) if n_classes is not None else int(raster.labels.max())
    return LabeledDataset(np.ascontiguousarray(X[:, keep]), centers[keep], C)


def gcn_shift(X, std_floor: float = STD_FLOOR) -> np.ndarray:
    """Per-column global contrast normalization followed by one global shift to >= 0."""
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(axis=0, keepdims=True)
    std = np.sqrt(np.mean(Z * Z, axis=0, keepdims=True))
    Z = Z / np.maximum(std, std_floor)
    return Z + abs(min(float(Z.min(initial=0.0)), 0.0))


def split(dataset: LabeledDataset, n_train: int, n_val: int, seed: int
          ) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Seeded uniform split without replacement; whatever is left becomes the test set."""
    n_train, n_val = int(n_train), int(n_val)
    if n_train < 0 or n_val < 0 or n_train + n_val > dataset.N:
        raise InfeasibleError(f"cannot take {n_train}+{n_val} samples from {dataset.N}")
    perm = np.random.default_rng(seed).permutation(dataset.N)
    tr = np.sort(perm[:n_train])
    va = np.sort(perm[n_train:n_train + n_val])
    te = np.sort(perm[n_train + n_val:])
    train = dataset.subset(tr)
    missing = sorted(set(range(1, dataset.C + 1)) - set(train.labels.tolist()))
    if missing:
        log.warning("classes %s absent from the training split", missing)
    return train, dataset.subset(va), dataset.subset(te)


def subsample(X, n: int, seed: int) -> np.ndarray:
    """Seeded uniform choice of ``n`` columns (all of them when ``n`` >= N), order kept."""
    X = np.asarray(X)
    if n is None or n >= X.shape[1]:
        return X
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[1], int(n), replace=False))
    return X[:, idx]


# ---------------------------------------------------------------- file formats

def write_feature_csv(path, X, labels=None) -> None:
    """CSV with header ``f0..f{M-1},label``; rows are samples, label 0 = unlabeled."""
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    y = np.zeros(N, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(M)] + ["label"])
        for n in range(N):
            w.writerow([repr(float(v)) for v in X[:, n]] + [int(y[n])])


def read_feature_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(X, labels)``; labels are all 0 when the column is absent."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    feat = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
    if not feat:
        raise InvalidInputError(f"{path}: no f0..f(M-1) columns")
    feat.sort(key=lambda i: int(header[i][1:]))
    lab = header.index("label") if "label" in header else None
    body = [r for r in rows[1:] if r]
    try:
        X = np.array([[float(r[i]) for i in feat] for r in body], dtype=np.float64).T
        y = np.array([int(float(r[lab])) if lab is not None and r[lab] != "" else 0 for r in body],
                     dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    if X.size == 0:
        X = X.reshape(len(feat), 0)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{path}: non-finite feature values")
    return X, y


def labeled_from_csv(path, n_classes: Optional[int] = None) -> LabeledDataset:
    X, y = read_feature_csv(path)
    keep = y > 0
    C = int(n_classes) if n_classes else int(y.max(initial=0))
    if C < 1:
        raise InvalidInputError(f"{path}: no labeled rows")
    return LabeledDataset(X[:, keep], y[keep], C)


def read_raster(sidecar) -> RasterImage:
    """Load a band-sequential little-endian float32 raster described by a JSON sidecar.

    Sidecar keys: ``bands``, ``height``, ``width``, ``data`` (path of the
    values file), optional ``nodata`` and ``labels`` (path of a little-endian
    int32 ``H x W`` label plane). Relative paths resolve against the sidecar.
    """
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    try:
        B, H, W = int(meta["bands"]), int(meta["height"]), int(meta["width"])
        data_path = sidecar.parent / meta["data"]
    except KeyError as exc:
        raise InvalidInputError(f"{sidecar}: missing key {exc}") from exc
    values = np.fromfile(data_path, dtype="<f4")
    if values.size != B * H * W:
        raise DimensionError(f"{data_path}: {values.size} values, expected {B}*{H}*{W}")
    labels = None
    if meta.get("labels"):
        labels = np.fromfile(sidecar.parent / meta["labels"], dtype="<i4")
        if labels.size != H * W:
            raise DimensionError(f"label plane has {labels.size} entries, expected {H}*{W}")
        labels = labels.reshape(H, W)
    return RasterImage(values.reshape(B, H, W).astype(np.float64), labels, meta.get("nodata"))


def write_raster(sidecar, raster: RasterImage) -> None:
    sidecar = Path(sidecar)
    stem = sidecar.with_suffix("")
    data_name = stem.name + ".bsq"
    raster.values.astype("<f4").tofile(sidecar.parent / data_name)
    meta = {"bands": raster.bands, "height": raster.height, "width": raster.width,
            "data": data_name, "nodata": raster.nodata}
    if raster.labels is not None:
        lab_name = stem.name + ".labels"
        raster.labels.astype("<i4").tofile(sidecar.parent / lab_name)
        meta["labels"] = lab_name
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
