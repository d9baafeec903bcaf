"""Backprop-through-time training: Adadelta, dropout, the epoch loop and
gradient checking against central finite differences."""

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cells import TEST, TRAIN
from .decoder import greedy_decode
from .encoder import BoundaryMode, encode
from .model import (ModelParams, check_grads_finite, frozen_mode, model_backward,
                    sample_loss, soft_sample_loss)
from .numerics import NumericFailure, apply_dropout, finite_diff_grad, make_rng  # noqa: F401

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    eg2: Dict[str, np.ndarray]
    edx2: Dict[str, np.ndarray]
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0
    steps: int = 0

    @classmethod
    def for_params(cls, params, rho=0.95, eps=1e-6, lr=1.0):
        t = params.tensors()
        return cls({k: np.zeros_like(v) for k, v in t.items()},
                   {k: np.zeros_like(v) for k, v in t.items()}, rho, eps, lr)


def adadelta_step(state, params, grads):
    """In-place Adadelta update.

    Raises NumericFailure (leaving params and state untouched) if any
    gradient entry is not finite.
    """
    ptens = params.tensors()
    gtens = grads.tensors()
    if ptens.keys() != gtens.keys() or ptens.keys() != state.eg2.keys():
        raise ValueError("gradient/optimizer layout does not match params")
    for name, g in gtens.items():
        if g.shape != ptens[name].shape:
            raise ValueError(f"shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in {name}; update skipped")
    rho, eps, lr = state.rho, state.eps, state.lr
    for name, p in ptens.items():
        g = gtens[name]
        eg2 = state.eg2[name]
        edx2 = state.edx2[name]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        delta = -lr * np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * delta * delta
        p += delta
    state.steps += 1
    return state, params


@dataclass
class TrainConfig:
    batch_size: int = 128
    dropout_retain: float = 0.5
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.dropout_retain <= 1.0:
            raise ValueError("dropout_retain must be in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("batch_size >= 1, max_epochs >= 0, patience >= 0 required")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: ModelParams              # best validation loss
    last_model: ModelParams
    epochs: List[EpochRecord]
    initial_val_loss: float
    best_epoch: int
    checkpoints: List[str] = field(default_factory=list)


def _mode(modes, sample, phase):
    if modes is not None and sample.id in modes:
        return modes[sample.id]
    return BoundaryMode.learned(phase)


def batch_gradient(params, batch, rng, retain=1.0, modes=None):
    """Mean loss and mean gradient over ``batch``, samples taken in order."""
    grads = params.zeros_like()
    total = 0.0
    w = 1.0 / len(batch)
    for sample in batch:
        loss, cache, _ = sample_loss(params, sample, _mode(modes, sample, TRAIN), rng, retain)
        model_backward(params, cache, w, grads)
        total += loss
    return total * w, grads


def validation_loss(params, samples, modes=None):
    """Mean caption loss with deterministic boundaries and no dropout."""
    total = 0.0
    for s in samples:
        total += sample_loss(params, s, _mode(modes, s, TEST))[0]
    return total / len(samples)


def write_epoch_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])


def train(params, cfg, train_set, val_set, out_dir=None, vocab=None, modes=None):
    """Train in place from ``params``; returns a TrainResult.

    ``modes`` maps sample ids to fixed BoundaryModes (forced or equal-chunk
    ablations); unlisted samples use the learned detector.  With ``out_dir``
    the best and last checkpoints plus ``epochs.csv`` are written there.
    """
    from .checkpoint import save_checkpoint

    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    rng = make_rng(cfg.seed)
    opt = OptimizerState.for_params(params)
    checkpoints = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint(name, epoch):
        if out_dir is None:
            return
        path = os.path.join(out_dir, name)
        save_checkpoint(path, params, vocab, opt, extra={"epoch": epoch, "seed": cfg.seed})
        if path not in checkpoints:
            checkpoints.append(path)

    best_val = initial = validation_loss(params, val_set, modes)
    best_params = params.copy()
    best_epoch = 0
    checkpoint("best.ckpt", 0)
    log.info("epoch 0: val_loss=%.6f", initial)
    records = []
    bad = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            loss, grads = batch_gradient(params, batch, rng, cfg.dropout_retain, modes)
            check_grads_finite(grads)
            adadelta_step(opt, params, grads)
            total += loss * len(batch)
        val = validation_loss(params, val_set, modes)
        if not math.isfinite(val):
            raise NumericFailure(f"non-finite validation loss at epoch {epoch}")
        records.append(EpochRecord(epoch, total / len(train_set), val))
        log.info("epoch %d: train_loss=%.6f val_loss=%.6f", epoch, records[-1].train_loss, val)
        if val < best_val:
            best_val, best_epoch, bad = val, epoch, 0
            best_params = params.copy()
            checkpoint("best.ckpt", epoch)
        else:
            bad += 1
        if out_dir is not None:
            write_epoch_log(os.path.join(out_dir, "epochs.csv"), records)
        if bad > cfg.patience:
            log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
            break
    checkpoint("last.ckpt", records[-1].epoch if records else 0)
    if out_dir is not None:
        write_epoch_log(os.path.join(out_dir, "epochs.csv"), records)
    return TrainResult(best_params, params, records, initial, best_epoch, checkpoints)


def predict(params, sample, mode=None, max_len=20):
    """Greedy caption and segmentation for one sample (test mode by default)."""
    if mode is None:
        mode = BoundaryMode.learned(TEST)
    enc, _ = encode(params.encoder, sample.features, mode)
    return greedy_decode(params.decoder, enc.video_vector, max_len), enc


# ---------------------------------------------------------------- gradient checks

def max_relative_error(analytic, numeric, floor=1e-12):
    """Largest per-tensor relative error ``|a - n| / max(|a|, |n|)`` (L2 norms).

    Tensors whose analytic and numeric gradients are both below ``floor``
    count as exact matches.
    """
    worst = 0.0
    num = numeric.tensors()
    for name, a in analytic.tensors().items():
        n = num[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale < floor:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def grad_check(params, sample, mode, rng=None, eps=1e-5, return_grads=False):
    """Compare analytic gradients with central finite differences.

    ``frozen-boundary`` samples decisions once with the stochastic detector
    and replays them as forced decisions; ``soft-relaxation`` swaps the step
    function for the plain sigmoid everywhere.  The finite differences are
    taken on a long-double copy of the model so that their rounding noise
    sits well below the 1e-6 tolerance even for tensors with small
    gradients.  Returns the max relative error.
    """
    if mode == "frozen-boundary":
        if rng is None:
            rng = make_rng(0)
        _, _, enc = sample_loss(params, sample, BoundaryMode.learned(TRAIN), rng)
        fixed = frozen_mode(enc)

        def loss_fn(p):
            return sample_loss(p, sample, fixed)[0]

        _, cache, _ = sample_loss(params, sample, fixed)
    elif mode == "soft-relaxation":
        def loss_fn(p):
            return soft_sample_loss(p, sample)[0]

        _, cache = soft_sample_loss(params, sample)
    else:
        raise ValueError(f"unknown grad_check mode {mode!r}")
    analytic = model_backward(params, cache)
    numeric = finite_diff_grad(loss_fn, params.astype(np.longdouble), eps).astype(np.float64)
    err = max_relative_error(analytic, numeric)
    if return_grads:
        return err, analytic, numeric
    return err
