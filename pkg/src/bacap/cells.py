"""Single-timestep kernels: plain LSTM, boundary-aware LSTM and GRU.

Gate weights are stored stacked (LSTM order i, f, g, o; GRU order z, r, h) so
one product computes every gate.  The per-gate matrices are exposed as views
(``W_ix``, ``W_fh``, ...), so writing into a view writes into the parameter.

Each forward kernel returns a cache; the matching ``*_backward`` turns
upstream gradients into parameter and input gradients.  The ``*_core``
variants take a precomputed input projection and are what the sequence
loops in :mod:`bacap.encoder` and :mod:`bacap.decoder` call.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import ParamSet, glorot_init, orthogonal_init, sigmoid, sigmoid_scalar

TRAIN = "train"
TEST = "test"


def _block_view(name, matrix, k):
    def get(self):
        arr = getattr(self, matrix)
        n = arr.shape[0] // self.n_blocks
        return arr[k * n:(k + 1) * n]
    get.__name__ = name
    return property(get)


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass(eq=False)
class LstmParams(ParamSet):
    Wx: np.ndarray  # (4H, D)
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray   # (4H,)

    n_blocks = 4

    W_ix = _block_view("W_ix", "Wx", 0)
    W_fx = _block_view("W_fx", "Wx", 1)
    W_gx = _block_view("W_gx", "Wx", 2)
    W_ox = _block_view("W_ox", "Wx", 3)
    W_ih = _block_view("W_ih", "Wh", 0)
    W_fh = _block_view("W_fh", "Wh", 1)
    W_gh = _block_view("W_gh", "Wh", 2)
    W_oh = _block_view("W_oh", "Wh", 3)
    b_i = _block_view("b_i", "b", 0)
    b_f = _block_view("b_f", "b", 1)
    b_g = _block_view("b_g", "b", 2)
    b_o = _block_view("b_o", "b", 3)

    def __post_init__(self):
        h = self.Wh.shape[1]
        _require(self.Wh.shape == (4 * h, h), f"Wh must be (4H, H), got {self.Wh.shape}")
        _require(self.Wx.ndim == 2 and self.Wx.shape[0] == 4 * h, "Wx must be (4H, D)")
        _require(self.b.shape == (4 * h,), "b must be (4H,)")

    @property
    def hidden_dim(self):
        return self.Wh.shape[1]

    @property
    def input_dim(self):
        return self.Wx.shape[1]

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        return cls(np.zeros((4 * hidden_dim, input_dim)),
                   np.zeros((4 * hidden_dim, hidden_dim)),
                   np.zeros(4 * hidden_dim))

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        """Glorot for input-side blocks, orthogonal for recurrent blocks, zero biases."""
        H = hidden_dim
        Wx = np.concatenate([glorot_init(H, input_dim, rng) for _ in range(4)])
        Wh = np.concatenate([orthogonal_init(H, rng) for _ in range(4)])
        return cls(Wx, Wh, np.zeros(4 * H))


@dataclass(eq=False)
class BoundaryParams(ParamSet):
    v_s: np.ndarray   # (H,)
    W_si: np.ndarray  # (H, D)
    W_sh: np.ndarray  # (H, H)
    b_s: np.ndarray   # (H,)

    def __post_init__(self):
        h = self.v_s.shape[0]
        _require(self.W_sh.shape == (h, h), "W_sh must be square of hidden dim")
        _require(self.W_si.ndim == 2 and self.W_si.shape[0] == h, "W_si must be (H, D)")
        _require(self.b_s.shape == (h,), "b_s must be (H,)")

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        return cls(np.zeros(hidden_dim), np.zeros((hidden_dim, input_dim)),
                   np.zeros((hidden_dim, hidden_dim)), np.zeros(hidden_dim))

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        return cls(glorot_init(1, hidden_dim, rng)[0],
                   glorot_init(hidden_dim, input_dim, rng),
                   orthogonal_init(hidden_dim, rng),
                   np.zeros(hidden_dim))


@dataclass(eq=False)
class GruParams(ParamSet):
    Wy: np.ndarray  # (3H, E) word-embedding side
    Wv: np.ndarray  # (3H, V) video-vector side
    Wh: np.ndarray  # (3H, H)
    b: np.ndarray   # (3H,)

    n_blocks = 3

    W_zy = _block_view("W_zy", "Wy", 0)
    W_ry = _block_view("W_ry", "Wy", 1)
    W_hy = _block_view("W_hy", "Wy", 2)
    W_zv = _block_view("W_zv", "Wv", 0)
    W_rv = _block_view("W_rv", "Wv", 1)
    W_hv = _block_view("W_hv", "Wv", 2)
    W_zh = _block_view("W_zh", "Wh", 0)
    W_rh = _block_view("W_rh", "Wh", 1)
    W_hh = _block_view("W_hh", "Wh", 2)
    b_z = _block_view("b_z", "b", 0)
    b_r = _block_view("b_r", "b", 1)
    b_h = _block_view("b_h", "b", 2)

    def __post_init__(self):
        h = self.Wh.shape[1]
        _require(self.Wh.shape == (3 * h, h), "Wh must be (3H, H)")
        _require(self.Wy.shape[0] == 3 * h and self.Wv.shape[0] == 3 * h,
                 "Wy and Wv must have 3H rows")
        _require(self.b.shape == (3 * h,), "b must be (3H,)")

    @property
    def hidden_dim(self):
        return self.Wh.shape[1]

    @classmethod
    def zeros(cls, word_dim, video_dim, hidden_dim):
        H = hidden_dim
        return cls(np.zeros((3 * H, word_dim)), np.zeros((3 * H, video_dim)),
                   np.zeros((3 * H, H)), np.zeros(3 * H))

    @classmethod
    def init(cls, word_dim, video_dim, hidden_dim, rng):
        H = hidden_dim
        Wy = np.concatenate([glorot_init(H, word_dim, rng) for _ in range(3)])
        Wv = np.concatenate([glorot_init(H, video_dim, rng) for _ in range(3)])
        Wh = np.concatenate([orthogonal_init(H, rng) for _ in range(3)])
        return cls(Wy, Wv, Wh, np.zeros(3 * H))


@dataclass
class BoundaryState:
    h: np.ndarray
    c: np.ndarray
    s: int = 0
    logit: float = 0.0

    @classmethod
    def zeros(cls, hidden_dim):
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class LstmCache:
    params: LstmParams
    x: Optional[np.ndarray]
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


@dataclass
class BoundaryCache:
    lstm: LstmCache
    bparams: BoundaryParams
    h_prev: np.ndarray  # before the reset
    c_prev: np.ndarray
    u: np.ndarray       # W_si x + W_sh h_prev + b_s
    logit: float
    s: int
    forced: bool


@dataclass
class GruCache:
    params: GruParams
    y: Optional[np.ndarray]
    v: Optional[np.ndarray]
    p_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray


# ---------------------------------------------------------------- LSTM

def lstm_core(p, xproj, h_prev, c_prev, x=None):
    """LSTM update given ``xproj = Wx x + b`` already computed."""
    H = h_prev.shape[0]
    pre = xproj + p.Wh @ h_prev
    gates = sigmoid(pre)
    i = gates[:H]
    f = gates[H:2 * H]
    o = gates[3 * H:]
    g = np.tanh(pre[2 * H:3 * H])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(p, x, h_prev, c_prev, i, f, g, o, tanh_c)


def lstm_step(p, x, h_prev, c_prev):
    _require(x.shape == (p.input_dim,), f"input dim {x.shape} != {p.input_dim}")
    _require(h_prev.shape == (p.hidden_dim,) and c_prev.shape == (p.hidden_dim,),
             "state dim does not match hidden dim")
    return lstm_core(p, p.Wx @ x + p.b, h_prev, c_prev, x=x)


def lstm_core_backward(cache, dh, dc):
    """Gradients w.r.t. the stacked pre-activations and the incoming state."""
    dc = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    do = dh * cache.tanh_c
    di = dc * cache.g
    df = dc * cache.c_prev
    dg = dc * cache.i
    dpre = np.concatenate([
        di * cache.i * (1.0 - cache.i),
        df * cache.f * (1.0 - cache.f),
        dg * (1.0 - cache.g ** 2),
        do * cache.o * (1.0 - cache.o),
    ])
    dh_prev = cache.params.Wh.T @ dpre
    dc_prev = dc * cache.f
    return dpre, dh_prev, dc_prev


def lstm_step_backward(cache, dh, dc, grads=None):
    """Returns ``(grads, dx, dh_prev, dc_prev)``; accumulates into ``grads`` if given."""
    p = cache.params
    _require(dh.shape == (p.hidden_dim,) and dc.shape == (p.hidden_dim,),
             "upstream gradient does not match cache")
    if grads is None:
        grads = p.zeros_like()
    dpre, dh_prev, dc_prev = lstm_core_backward(cache, dh, dc)
    grads.Wx += np.outer(dpre, cache.x)
    grads.Wh += np.outer(dpre, cache.h_prev)
    grads.b += dpre
    dx = p.Wx.T @ dpre
    return grads, dx, dh_prev, dc_prev


# ---------------------------------------------------------------- boundary detector

def boundary_logit(bp, x, h_prev):
    _require(x.shape == (bp.W_si.shape[1],), "input dim does not match W_si")
    _require(h_prev.shape == bp.v_s.shape, "hidden dim does not match v_s")
    return float(bp.v_s @ (bp.W_si @ x + bp.W_sh @ h_prev + bp.b_s))


def tau_deterministic(a):
    # sigmoid(a) > 0.5 exactly when a > 0
    return 1 if a > 0 else 0


def tau_stochastic(a, rng):
    return 1 if sigmoid_scalar(a) > rng.random() else 0


def decide(mode, a, rng=None):
    """Boundary decision for one step: ``mode`` is "train", "test" or a forced 0/1."""
    if mode == TRAIN:
        if rng is None:
            raise ValueError("train mode needs an rng")
        return tau_stochastic(a, rng)
    if mode == TEST:
        return tau_deterministic(a)
    if mode in (0, 1):
        return int(mode)
    raise ValueError(f"unknown boundary mode {mode!r}")


def boundary_lstm_step(p, bp, x, prev, mode, rng=None):
    """One step of the boundary-aware layer.

    The decision uses the un-reset ``prev.h``.  On a boundary the previous
    hidden state is emitted and the recurrent inputs are zeroed before the
    gates are computed.  Returns ``(next_state, emitted_or_None, cache)``.
    """
    _require(x.shape == (p.input_dim,), f"input dim {x.shape} != {p.input_dim}")
    _require(bp.W_si.shape[1] == p.input_dim and bp.v_s.shape[0] == p.hidden_dim,
             "boundary params do not match the LSTM")
    u = bp.W_si @ x + bp.W_sh @ prev.h + bp.b_s
    a = float(bp.v_s @ u)
    s = decide(mode, a, rng)
    keep = 1.0 - s
    h, c, lcache = lstm_step(p, x, prev.h * keep, prev.c * keep)
    emitted = prev.h.copy() if s else None
    cache = BoundaryCache(lcache, bp, prev.h, prev.c, u, a, s,
                          forced=mode not in (TRAIN, TEST))
    return BoundaryState(h, c, s, a), emitted, cache


def boundary_reset_backward(cache, dh_in, dc_in):
    """Backprop through the reset products ``h*(1-s)``, ``c*(1-s)``.

    Returns ``(dh_prev, dc_prev, dlogit)``.  The straight-through estimator
    uses sigmoid'(logit) as the derivative of the step; forced decisions
    carry no gradient.
    """
    keep = 1.0 - cache.s
    dh_prev = dh_in * keep
    dc_prev = dc_in * keep
    if cache.forced:
        return dh_prev, dc_prev, 0.0
    ds = -(dh_in @ cache.h_prev + dc_in @ cache.c_prev)
    sg = sigmoid_scalar(cache.logit)
    return dh_prev, dc_prev, ds * sg * (1.0 - sg)


def boundary_lstm_step_backward(cache, dh, dc, d_emitted=None, grads=None, bgrads=None):
    """Returns ``(grads, bgrads, dx, dh_prev, dc_prev)`` for one boundary step."""
    lc = cache.lstm
    bp = cache.bparams
    grads, dx, dh_in, dc_in = lstm_step_backward(lc, dh, dc, grads)
    if bgrads is None:
        bgrads = bp.zeros_like()
    dh_prev, dc_prev, da = boundary_reset_backward(cache, dh_in, dc_in)
    if cache.s and d_emitted is not None:
        dh_prev = dh_prev + d_emitted
    if da != 0.0:
        du = da * bp.v_s
        bgrads.v_s += da * cache.u
        bgrads.W_si += np.outer(du, lc.x)
        bgrads.W_sh += np.outer(du, cache.h_prev)
        bgrads.b_s += du
        dx = dx + bp.W_si.T @ du
        dh_prev = dh_prev + bp.W_sh.T @ du
    return grads, bgrads, dx, dh_prev, dc_prev


# ---------------------------------------------------------------- GRU

def gru_core(p, in_proj, p_prev, y=None, v=None):
    """GRU update given ``in_proj = Wy y + Wv v + b`` already computed."""
    H = p_prev.shape[0]
    zr = sigmoid(in_proj[:2 * H] + p.Wh[:2 * H] @ p_prev)
    z = zr[:H]
    r = zr[H:]
    h_tilde = np.tanh(in_proj[2 * H:] + p.Wh[2 * H:] @ (r * p_prev))
    p_t = (1.0 - z) * p_prev + z * h_tilde
    return p_t, GruCache(p, y, v, p_prev, z, r, h_tilde)


def gru_step(p, y_embed, v, p_prev):
    H = p.hidden_dim
    _require(y_embed.shape == (p.Wy.shape[1],), "word embedding dim mismatch")
    _require(v.shape == (p.Wv.shape[1],), "video vector dim mismatch")
    _require(p_prev.shape == (H,), "state dim mismatch")
    return gru_core(p, p.Wy @ y_embed + p.Wv @ v + p.b, p_prev, y=y_embed, v=v)


def gru_core_backward(cache, dp):
    """Gradients w.r.t. the stacked pre-activations and ``p_prev``.

    Also returns ``r * p_prev`` since the candidate block of ``Wh`` multiplies
    it rather than ``p_prev``.
    """
    H = dp.shape[0]
    z, r, ht, pp = cache.z, cache.r, cache.h_tilde, cache.p_prev
    dz = dp * (ht - pp)
    dht = dp * z
    dp_prev = dp * (1.0 - z)
    dpre_h = dht * (1.0 - ht ** 2)
    drp = cache.params.Wh[2 * H:].T @ dpre_h
    dr = drp * pp
    dp_prev += drp * r
    dpre = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r), dpre_h])
    dp_prev += cache.params.Wh[:2 * H].T @ dpre[:2 * H]
    return dpre, dp_prev, r * pp


def gru_step_backward(cache, dp, grads=None):
    """Returns ``(grads, dy, dv, dp_prev)``."""
    p = cache.params
    H = p.hidden_dim
    _require(dp.shape == (H,), "upstream gradient does not match cache")
    if grads is None:
        grads = p.zeros_like()
    dpre, dp_prev, rp = gru_core_backward(cache, dp)
    grads.Wy += np.outer(dpre, cache.y)
    grads.Wv += np.outer(dpre, cache.v)
    grads.Wh[:2 * H] += np.outer(dpre[:2 * H], cache.p_prev)
    grads.Wh[2 * H:] += np.outer(dpre[2 * H:], rp)
    grads.b += dpre
    return grads, p.Wy.T @ dpre, p.Wv.T @ dpre, dp_prev


def step_backward(cache, upstream):
    """Dispatch on cache type.

    ``upstream`` is ``(dh, dc)`` for an LSTM step, ``(dh, dc, d_emitted)`` for
    a boundary step and ``dp`` for a GRU step.  Returns
    ``(param_grads, input_grads)``.
    """
    if isinstance(cache, BoundaryCache):
        dh, dc, *rest = upstream
        d_emit = rest[0] if rest else None
        grads, bgrads, dx, dh_prev, dc_prev = boundary_lstm_step_backward(cache, dh, dc, d_emit)
        return (grads, bgrads), (dx, dh_prev, dc_prev)
    if isinstance(cache, LstmCache):
        dh, dc = upstream
        grads, dx, dh_prev, dc_prev = lstm_step_backward(cache, dh, dc)
        return grads, (dx, dh_prev, dc_prev)
    if isinstance(cache, GruCache):
        grads, dy, dv, dp_prev = gru_step_backward(cache, upstream)
        return grads, (dy, dv, dp_prev)
    raise ValueError(f"unknown cache type {type(cache).__name__}")
