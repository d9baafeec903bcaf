"""Binary checkpoint container.

Layout, all integers little-endian::

    10 bytes   magic b"BACAPCKPT1"
    uint32     format version (1)
    uint32     metadata length L
    L bytes    UTF-8 JSON (sorted keys): model config, vocabulary tokens,
               optimizer hyperparameters, free-form extras
    uint32     tensor count K
    K times:
      uint16   name length, then the UTF-8 name
      uint8    ndim, then ndim uint32 dims
      float64  row-major data

Tensor names are the dotted parameter names (``encoder.layer1.Wx``);
optimizer accumulators are stored as ``opt.eg2.<name>`` and
``opt.edx2.<name>``.  Tensors are written in sorted name order, so saving
the same state twice yields identical bytes.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Vocabulary
from .model import ModelConfig, ModelParams

MAGIC = b"BACAPCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Optional[Vocabulary] = None
    optimizer: Optional[object] = None  # training.OptimizerState
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, params, vocab=None, optimizer=None, extra=None):
    meta = {
        "config": params.config.as_dict(),
        "vocab": list(vocab.tokens) if vocab is not None else None,
        "optimizer": None,
        "extra": extra or {},
    }
    tensors = dict(params.tensors())
    if optimizer is not None:
        meta["optimizer"] = {"rho": optimizer.rho, "eps": optimizer.eps, "lr": optimizer.lr,
                             "steps": optimizer.steps}
        for name, arr in optimizer.eg2.items():
            tensors[f"opt.eg2.{name}"] = arr
        for name, arr in optimizer.edx2.items():
            tensors[f"opt.edx2.{name}"] = arr
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    from .training import OptimizerState

    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        version, mlen = struct.unpack_from("<II", raw, off)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off += 8
        meta = json.loads(raw[off:off + mlen].decode("utf-8"))
        off += mlen
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape)) * 8
            if off + size > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name!r} at byte offset {off}")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size // 8,
                                          offset=off).reshape(shape).astype(np.float64)
            off += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint near byte offset {off} ({exc})") from None
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes at offset {off}")

    params = ModelParams.zeros(ModelConfig(**meta["config"]))
    for name, arr in params.tensors().items():
        if name not in tensors or tensors[name].shape != arr.shape:
            raise CheckpointError(f"{path}: missing or misshapen tensor {name!r}")
        arr[...] = tensors[name]

    optimizer = None
    if meta.get("optimizer") is not None:
        o = meta["optimizer"]
        optimizer = OptimizerState.for_params(params, rho=o["rho"], eps=o["eps"], lr=o["lr"])
        optimizer.steps = o["steps"]
        for name in optimizer.eg2:
            optimizer.eg2[name][...] = tensors[f"opt.eg2.{name}"]
            optimizer.edx2[name][...] = tensors[f"opt.edx2.{name}"]
    vocab = Vocabulary(meta["vocab"]) if meta.get("vocab") is not None else None
    return Checkpoint(params, vocab, optimizer, meta.get("extra", {}))
