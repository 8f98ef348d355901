"""Batch command line front end: ``dstl {synth,pretrain,train,evaluate,encode}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Verbosity comes from the ``DSTL_LOG`` environment variable (error, info, debug).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import classifier
from .archive import atomic_write, load_model, save_model
from .coding import set_threads
from .config import RunConfig, load_config, require_paths
from .data import (LabeledDataset, evaluate, extract_patches, gcn_shift, labeled_from_csv,
                   read_feature_csv, read_raster, split, subsample, write_feature_csv)
from .errors import ConfigError, DstlError, NumericalError
from .network import classifier_features, encode, pretrain
from .synth import in_convex_hull, synth_generate
from .trainer import train

log = logging.getLogger("dstl")

PRETRAINED = "pretrained.dstl"
TRAINED = "model.dstl"


# ------------------------------------------------------------------ data loading

def _is_raster(path) -> bool:
    return str(path).lower().endswith(".json")


def load_labeled(cfg: RunConfig, path) -> LabeledDataset:
    if _is_raster(path):
        ds = extract_patches(read_raster(path), cfg.patch, labeled_only=True,
                             stride=cfg.stride, n_classes=cfg.n_classes)
    else:
        ds = labeled_from_csv(path, cfg.n_classes)
    if cfg.normalize:
        ds = LabeledDataset(gcn_shift(ds.X), ds.labels, ds.C)
    return ds


def load_unlabeled(cfg: RunConfig) -> np.ndarray:
    path = cfg.unlabeled
    if _is_raster(path):
        X = extract_patches(read_raster(path), cfg.patch, stride=cfg.stride)
    else:
        X, _ = read_feature_csv(path)
    X = subsample(X, cfg.n_unlabeled, cfg.seed)
    return gcn_shift(X) if cfg.normalize else X


def load_splits(cfg: RunConfig):
    ds = load_labeled(cfg, cfg.labeled)
    train_set, val_set, test_set = split(ds, cfg.n_train, cfg.n_val, cfg.seed)
    if cfg.test is not None:
        test_set = load_labeled(cfg, cfg.test)
    return train_set, val_set, test_set


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_path(cfg: RunConfig, default: str) -> Path:
    return Path(cfg.model) if cfg.model else Path(cfg.out) / default


# ------------------------------------------------------------------ commands

def cmd_synth(cfg: RunConfig) -> int:
    s = cfg.synth
    task = synth_generate(s.M, s.n_archetypes, s.n_classes, s.n_samples, s.noise_sigma,
                          cfg.seed, n_unlabeled=s.n_unlabeled, concentration=s.concentration)
    out = _out_dir(cfg)
    within = bool(np.all(in_convex_hull(task.generators.atoms,
                                        np.hstack([task.labeled.X, task.unlabeled]), tol=1e-9)))
    files = {"labeled.csv": (task.labeled.X, task.labeled.labels),
             "unlabeled.csv": (task.unlabeled, None),
             "generators.csv": (task.generators.atoms, task.generator_class)}
    for name, (X, y) in files.items():
        write_feature_csv(out / name, X, y)
    manifest = {"seed": cfg.seed, "synth": s.__dict__,
                "generator_pool_indices": list(task.generators.source_indices),
                "generator_class": task.generator_class.tolist(),
                "all_samples_within_generator_hull": within}
    atomic_write(out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    print(f"wrote {s.n_samples} labeled, {s.n_unlabeled} unlabeled samples to {out}")
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    require_paths(cfg, "unlabeled")
    U = load_unlabeled(cfg)
    model = pretrain(U, cfg.hyperparams)
    out = _out_dir(cfg)
    save_model(out / PRETRAINED, model, meta={"command": "pretrain", "seed": cfg.seed})
    for l, D in enumerate(model.dictionaries, start=1):
        print(f"layer {l}: {D.K} archetypes of dimension {D.M}, pool indices {list(D.source_indices)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    require_paths(cfg, "labeled", "unlabeled")
    model_path = _model_path(cfg, PRETRAINED)
    if not cfg.pretrain_inline and not model_path.exists():
        raise ConfigError(f"no pretrained archive at {model_path} (run pretrain or set pretrain_inline)")
    train_set, val_set, _ = load_splits(cfg)
    if val_set.N == 0:
        raise ConfigError("training needs a validation split (n_val >= 1)")
    U = load_unlabeled(cfg)
    if cfg.pretrain_inline:
        model = pretrain(U, cfg.hyperparams)
    else:
        model, _, _ = load_model(model_path)
        # the run config decides how the loaded dictionaries are refined
        model = model.with_(hyperparams=cfg.hyperparams)
    best, trace = train(model, train_set, val_set, U)
    out = _out_dir(cfg)
    atomic_write(out / "trace.csv", trace.to_csv().encode())
    save_model(out / TRAINED, best, trace, meta={"command": "train", "seed": cfg.seed})
    print(f"iterations: {len(trace.records) - 1}, best iteration {trace.best_iteration}, "
          f"validation overall accuracy {trace.best_accuracy:.4f} "
          f"(iteration 0: {trace.records[0]['val_overall_accuracy']:.4f})")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    require_paths(cfg, "labeled")
    model_path = _model_path(cfg, TRAINED)
    if not model_path.exists():
        raise ConfigError(f"no model archive at {model_path}")
    model, _, _ = load_model(model_path)
    if model.classifier is None:
        raise ConfigError(f"{model_path} has no classifier; run train first")
    train_set, _, test_set = load_splits(cfg)
    if test_set.N == 0:
        raise ConfigError("empty test set")
    hp = model.hyperparams
    base = classifier.fit(train_set.X, train_set.targets, reg=hp.clf_reg,
                          max_iter=hp.clf_max_iter, tol=hp.clf_tol)
    pred_base = classifier.predict_label(base, test_set.X)
    F = classifier_features(model, encode(model, test_set.X), test_set.X)
    pred_dstl = classifier.predict_label(model.classifier, F)
    C = test_set.C
    results = {"baseline": evaluate(test_set.labels, pred_base, C).to_dict(),
               "dstl": evaluate(test_set.labels, pred_dstl, C).to_dict(),
               "n_test": test_set.N}
    out = _out_dir(cfg)
    atomic_write(out / "metrics.json", (json.dumps(results, indent=2, sort_keys=True) + "\n").encode())
    atomic_write(out / "metrics.csv", _metrics_csv(results, C).encode())
    for name in ("baseline", "dstl"):
        r = results[name]
        print(f"{name:9s} overall {100 * r['overall_accuracy']:6.2f}%  "
              f"average {100 * r['average_accuracy']:6.2f}%  kappa {r['kappa']:.4f}")
    return 0


def _metrics_csv(results: dict, C: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "baseline", "dstl"])
    b, d = results["baseline"], results["dstl"]
    for key in ("overall_accuracy", "average_accuracy", "kappa"):
        w.writerow([key, repr(b[key]), repr(d[key])])
    for c in range(C):
        w.writerow([f"class_{c + 1}_accuracy", repr(b["per_class_accuracy"][c]),
                    repr(d["per_class_accuracy"][c])])
    return buf.getvalue()


def cmd_encode(cfg: RunConfig) -> int:
    model_path = _model_path(cfg, TRAINED)
    if not model_path.exists():
        raise ConfigError(f"no model archive at {model_path}")
    source = cfg.test or cfg.labeled
    if source is None:
        raise ConfigError("config needs 'test' or 'labeled' to encode")
    require_paths(cfg, "test" if cfg.test else "labeled")
    model, _, _ = load_model(model_path)
    if _is_raster(source):
        X = extract_patches(read_raster(source), cfg.patch, stride=cfg.stride)
        y = None
    else:
        X, y = read_feature_csv(source)
    if cfg.normalize:
        X = gcn_shift(X)
    F = classifier_features(model, encode(model, X), X)
    out = _out_dir(cfg)
    buf = out / "features.csv.tmp"
    write_feature_csv(buf, F, y)
    os.replace(buf, out / "features.csv")
    print(f"wrote {F.shape[0]} stacked features for {F.shape[1]} samples to {out / 'features.csv'}")
    return 0


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train,
            "evaluate": cmd_evaluate, "encode": cmd_encode}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dstl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--model", help="model archive to read")
        s.add_argument("--max-outer-iter", type=int, dest="max_outer_iter")
        if name == "train":
            s.add_argument("--pretrain-inline", action="store_true", default=None,
                           dest="pretrain_inline")
    return p


def _setup_logging() -> None:
    level = os.environ.get("DSTL_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "threads": args.threads, "out": args.out,
                     "model": args.model, "pretrain_inline": getattr(args, "pretrain_inline", None)}
        if args.max_outer_iter is not None:
            overrides["hyperparams"] = {"max_outer_iter": args.max_outer_iter}
        cfg = load_config(args.config, overrides)
        set_threads(cfg.threads)
        # BLAS stays single-threaded so results never depend on --threads
        with threadpool_limits(limits=1), np.errstate(over="raise", invalid="raise"):
            return COMMANDS[args.command](cfg)
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except DstlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
