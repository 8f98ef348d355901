"""Single-file model archive.

Layout (all integers little-endian)::

    b"DSTLARC\\0"            8-byte magic
    u32 version
    u64 manifest length
    manifest                 UTF-8 JSON, sorted keys
    blocks                   one per manifest entry, in order:
                             u32 ndim, u64 dims[ndim], float64 data (row-major)

The manifest holds the hyperparameters, per-layer source indices, the
training trace and, for each block, its name, shape and byte offset relative
to the start of the block section.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .classifier import SoftmaxParams
from .coding import Dictionary
from .errors import InvalidInputError
from .network import DstlModel, Hyperparams
from .trainer import TrainTrace

MAGIC = b"DSTLARC\0"
VERSION = 1


def _block(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def to_bytes(model: DstlModel, trace: Optional[TrainTrace] = None,
             meta: Optional[dict] = None) -> bytes:
    arrays = []
    layers = []
    for l, D in enumerate(model.dictionaries, start=1):
        name = f"dictionary/{l}"
        arrays.append((name, D.atoms))
        layers.append({"block": name,
                       "source_indices": None if D.source_indices is None else list(D.source_indices)})
    clf = None
    if model.classifier is not None:
        arrays.append(("classifier/weights", model.classifier.weights))
        arrays.append(("classifier/bias", model.classifier.bias))
        clf = {"weights": "classifier/weights", "bias": "classifier/bias"}

    blobs, entries, offset = [], [], 0
    for name, arr in arrays:
        blob = _block(arr)
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": "dstl-archive",
        "version": VERSION,
        "dtype": "<f8",
        "hyperparams": model.hyperparams.to_dict(),
        "layers": layers,
        "classifier": clf,
        "trace": None if trace is None else trace.to_dict(),
        "meta": meta or {},
        "blocks": entries,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(text)) + text + b"".join(blobs)


def from_bytes(buf: bytes):
    """Inverse of ``to_bytes``: returns ``(model, trace or None, meta)``."""
    if buf[:8] != MAGIC:
        raise InvalidInputError("not a model archive (bad magic)")
    version, n = struct.unpack_from("<IQ", buf, 8)
    if version != VERSION:
        raise InvalidInputError(f"unsupported archive version {version}")
    start = 8 + 12
    try:
        manifest = json.loads(buf[start:start + n].decode("utf-8"))
    except ValueError as exc:
        raise InvalidInputError(f"corrupt archive manifest: {exc}") from exc
    base = start + n
    blocks = {}
    for e in manifest["blocks"]:
        pos = base + e["offset"]
        (ndim,) = struct.unpack_from("<I", buf, pos)
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 4)
        if list(shape) != e["shape"]:
            raise InvalidInputError(f"block {e['name']}: header shape {shape} != manifest {e['shape']}")
        data_pos = pos + 4 + 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if data_pos + 8 * count > len(buf):
            raise InvalidInputError(f"block {e['name']} truncated")
        blocks[e["name"]] = np.frombuffer(buf, dtype="<f8", count=count,
                                          offset=data_pos).reshape(shape).astype(np.float64)
    hp = Hyperparams.from_dict(manifest["hyperparams"])
    dicts = tuple(Dictionary(blocks[layer["block"]], layer["source_indices"])
                  for layer in manifest["layers"])
    clf = None
    if manifest.get("classifier"):
        c = manifest["classifier"]
        clf = SoftmaxParams(blocks[c["weights"]], blocks[c["bias"]])
    trace = TrainTrace.from_dict(manifest["trace"]) if manifest.get("trace") else None
    return DstlModel(dicts, hp, clf), trace, manifest.get("meta", {})


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the target directory so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model: DstlModel, trace: Optional[TrainTrace] = None,
               meta: Optional[dict] = None) -> None:
    atomic_write(path, to_bytes(model, trace, meta))


def load_model(path):
    return from_bytes(Path(path).read_bytes())
