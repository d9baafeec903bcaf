"""Activations, seeded generators, initializers and a finite-difference oracle.

Everything is float64.  Matrices and vectors are plain ``numpy`` arrays; the
helpers here only add validation and the initialization schemes used by the
model.
"""

import math

import numpy as np
from scipy.special import expit


class NumericFailure(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


def make_rng(seed):
    """Project-wide generator: PCG64 seeded from a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sigmoid(x):
    return expit(x)


def sigmoid_scalar(a):
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    ea = math.exp(a)
    return ea / (1.0 + ea)


def dsigmoid(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x):
    return np.tanh(x)


def softmax(logits):
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def check_finite(arr, what="value"):
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite {what}")
    return arr


def _check_dims(*dims):
    for d in dims:
        if int(d) < 1:
            raise ValueError(f"dimensions must be >= 1, got {dims}")


def glorot_init(rows, cols, rng):
    """Gaussian Glorot init: zero mean, variance 2 / (rows + cols)."""
    _check_dims(rows, cols)
    std = math.sqrt(2.0 / (rows + cols))
    return rng.standard_normal((rows, cols)) * std


def orthogonal_init(dim, rng):
    """Square orthogonal matrix from the QR factorization of a Gaussian draw.

    Columns are sign-corrected so the triangular factor has a positive
    diagonal, which makes the result a deterministic function of the draw.
    """
    _check_dims(dim)
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def finite_diff_grad(loss_fn, params, eps=1e-5):
    """Central-difference gradient of ``loss_fn`` at ``params``.

    ``params`` may be a float, an ndarray, or a parameter container exposing
    ``tensors()`` (name -> array, by reference) and ``zeros_like()``.  Arrays
    are perturbed in place and restored exactly, so ``loss_fn`` should close
    over the same object it is given.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    # keep whatever precision loss_fn returns; params in long double give a
    # far finer oracle than float64 at the same eps
    def evaluate(arg):
        val = loss_fn(arg)
        if not np.isfinite(val):
            raise NumericFailure("loss is not finite during finite differencing")
        return val

    if np.isscalar(params):
        theta = params
        return float((evaluate(theta + eps) - evaluate(theta - eps)) / (2.0 * eps))

    if isinstance(params, np.ndarray):
        targets = {"": params}
        grad = np.zeros_like(params, dtype=np.float64)
        grad_tensors = {"": grad}
    else:
        targets = params.tensors()
        grad = params.zeros_like()
        grad_tensors = grad.tensors()

    evaluate(params)
    for name, arr in targets.items():
        g = grad_tensors[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = evaluate(params)
            arr[idx] = orig - eps
            down = evaluate(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * eps)
    return grad


class ParamSet:
    """Mixin for dataclasses whose fields are arrays or nested ParamSets.

    ``tensors()`` returns the arrays by reference under dotted names, which is
    what optimizers, checkpoints and the finite-difference oracle iterate over.
    """

    def tensors(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, ParamSet):
                out.update(value.tensors(key + "."))
            elif isinstance(value, np.ndarray):
                out[key] = value
        return out

    def zeros_like(self):
        kwargs = {}
        for name, value in vars(self).items():
            if isinstance(value, ParamSet):
                kwargs[name] = value.zeros_like()
            elif isinstance(value, np.ndarray):
                kwargs[name] = np.zeros_like(value)
            else:
                kwargs[name] = value
        return type(self)(**kwargs)

    def astype(self, dtype):
        kwargs = {}
        for name, value in vars(self).items():
            if isinstance(value, (ParamSet, np.ndarray)):
                kwargs[name] = value.astype(dtype)
            else:
                kwargs[name] = value
        return type(self)(**kwargs)

    def copy(self):
        kwargs = {}
        for name, value in vars(self).items():
            if isinstance(value, (ParamSet, np.ndarray)):
                kwargs[name] = value.copy()
            else:
                kwargs[name] = value
        return type(self)(**kwargs)


def dropout_mask(shape, retain, rng):
    """Inverted-dropout mask: entries are 0 or 1/retain."""
    if not 0.0 < retain <= 1.0:
        raise ValueError(f"retain must be in (0, 1], got {retain}")
    if retain == 1.0:
        return np.ones(shape)
    return (rng.random(shape) < retain) / retain


def apply_dropout(x, retain, rng, phase):
    if not 0.0 < retain <= 1.0:
        raise ValueError(f"retain must be in (0, 1], got {retain}")
    if phase == "test" or retain == 1.0:
        return x
    return x * dropout_mask(np.shape(x), retain, rng)
