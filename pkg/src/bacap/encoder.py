"""Hierarchical video encoder.

Frames go through a linear embedding, then a boundary-aware LSTM layer that
emits one summary per detected segment, then a plain LSTM over those
summaries.  The last hidden state of the second layer is the video vector.

Timesteps in public results are 1-based; arrays are indexed from 0.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cells import (TEST, TRAIN, BoundaryParams, LstmParams, decide, lstm_core,
                    lstm_core_backward)
from .numerics import ParamSet, dropout_mask, glorot_init, sigmoid, sigmoid_scalar


@dataclass
class FeatureSequence:
    id: str
    frames: np.ndarray  # (n, feature_dim)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"{self.id}: feature sequence must be a non-empty (n, dim) array")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"{self.id}: non-finite feature values")

    @property
    def n(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass(eq=False)
class EncoderParams(ParamSet):
    W_embed: np.ndarray  # (E, F)
    b_embed: np.ndarray  # (E,)
    layer1: LstmParams
    boundary: BoundaryParams
    layer2: LstmParams

    def __post_init__(self):
        E = self.W_embed.shape[0]
        if self.b_embed.shape != (E,) or self.layer1.input_dim != E:
            raise ValueError("embedding output dim must equal layer1 input dim")
        if self.layer2.input_dim != self.layer1.hidden_dim:
            raise ValueError("layer1 hidden dim must equal layer2 input dim")
        if (self.boundary.W_si.shape[1] != E
                or self.boundary.v_s.shape[0] != self.layer1.hidden_dim):
            raise ValueError("boundary params do not match layer1")

    @property
    def feature_dim(self):
        return self.W_embed.shape[1]

    @property
    def video_dim(self):
        return self.layer2.hidden_dim

    @classmethod
    def init(cls, feature_dim, embed_dim, hidden_dim, rng):
        return cls(glorot_init(embed_dim, feature_dim, rng),
                   np.zeros(embed_dim),
                   LstmParams.init(embed_dim, hidden_dim, rng),
                   BoundaryParams.init(embed_dim, hidden_dim, rng),
                   LstmParams.init(hidden_dim, hidden_dim, rng))

    @classmethod
    def zeros(cls, feature_dim, embed_dim, hidden_dim):
        return cls(np.zeros((embed_dim, feature_dim)), np.zeros(embed_dim),
                   LstmParams.zeros(embed_dim, hidden_dim),
                   BoundaryParams.zeros(embed_dim, hidden_dim),
                   LstmParams.zeros(hidden_dim, hidden_dim))


def equal_chunk_decisions(n, m):
    """Forced decisions splitting ``n`` steps into ``m`` near-equal chunks.

    A boundary is placed at step ceil(k*n/m) + 1 (1-based) for k = 1..m-1.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    out = [0] * n
    for k in range(1, m):
        out[-(-k * n // m)] = 1  # ceil(k*n/m) as a 0-based index of step ceil+1
    return out


@dataclass(frozen=True)
class BoundaryMode:
    kind: str                       # "learned" | "forced" | "equal_chunks"
    phase: str = TEST               # learned only: "train" or "test"
    decisions: tuple = ()           # forced only
    chunks: int = 0                 # equal_chunks only

    @classmethod
    def learned(cls, phase=TEST):
        if phase not in (TRAIN, TEST):
            raise ValueError(f"phase must be train or test, got {phase!r}")
        return cls("learned", phase=phase)

    @classmethod
    def forced(cls, decisions):
        decisions = tuple(int(d) for d in decisions)
        if any(d not in (0, 1) for d in decisions):
            raise ValueError("forced decisions must be 0/1")
        return cls("forced", decisions=decisions)

    @classmethod
    def equal_chunks(cls, m):
        if m < 1:
            raise ValueError("equal_chunks needs m >= 1")
        return cls("equal_chunks", chunks=int(m))

    def decisions_for(self, n):
        """Fixed decision list for an ``n``-step video, or None when learned."""
        if self.kind == "learned":
            return None
        if self.kind == "forced":
            if len(self.decisions) != n:
                raise ValueError(f"forced decisions have length {len(self.decisions)}, video has {n}")
            return list(self.decisions)
        if self.kind == "equal_chunks":
            return equal_chunk_decisions(n, self.chunks)
        raise ValueError(f"unknown boundary mode {self.kind!r}")


@dataclass
class EncodeResult:
    video_vector: np.ndarray
    summaries: List[np.ndarray]
    boundaries: List[int]          # 1-based steps where the detector fired
    per_step_logits: List[float]
    decisions: List[int] = field(default_factory=list)

    @property
    def n(self):
        return len(self.decisions)


@dataclass
class EncodeCache:
    frames: np.ndarray
    inputs: np.ndarray              # embedded frames after dropout
    mask_in: Optional[np.ndarray]
    steps: list                     # LstmCache per layer-1 step
    h_prev: np.ndarray              # (n, H) un-reset hidden state entering each step
    c_prev: np.ndarray
    u: np.ndarray                   # (n, H) boundary pre-projection
    logits: np.ndarray
    decisions: List[int]
    learned: bool
    emit_steps: List[int]           # 0-based step whose decision emitted each summary
    summaries_in: np.ndarray        # after dropout
    mask_out: Optional[np.ndarray]
    steps2: list


def embed_input(p, f):
    if f.dim != p.feature_dim:
        raise ValueError(f"{f.id}: frame dim {f.dim} != embedding input dim {p.feature_dim}")
    return f.frames @ p.W_embed.T + p.b_embed


def encode(p, f, mode, rng=None, retain=1.0):
    """Run the two-layer encoder over one video.

    ``rng`` is needed for stochastic boundaries (learned/train) and whenever
    ``retain < 1`` turns dropout on.  Returns ``(EncodeResult, EncodeCache)``.
    """
    if f.n < 1:
        raise ValueError("empty feature sequence")
    forced = mode.decisions_for(f.n)
    if forced is None and mode.phase == TRAIN and rng is None:
        raise ValueError("learned(train) mode requires an rng")
    if retain < 1.0 and rng is None:
        raise ValueError("dropout requires an rng")

    L1, B, L2 = p.layer1, p.boundary, p.layer2
    H = L1.hidden_dim
    n = f.n

    emb = embed_input(p, f)
    mask_in = dropout_mask(emb.shape, retain, rng) if retain < 1.0 else None
    x_in = emb * mask_in if mask_in is not None else emb
    # per-step matvecs rather than one batched product: keeps every step
    # bit-identical to boundary_lstm_step / lstm_step on the same inputs
    dt = np.result_type(x_in, L1.Wx)
    h = np.zeros(H, dt)
    c = np.zeros(H, dt)
    zero = np.zeros(H, dt)
    steps, decisions, emit_steps, summaries = [], [], [], []
    h_prev = np.empty((n, H), dt)
    c_prev = np.empty((n, H), dt)
    U = np.empty((n, H), dt)
    logits = np.empty(n)
    for t in range(n):
        x = x_in[t]
        u = B.W_si @ x + B.W_sh @ h + B.b_s
        a = float(B.v_s @ u)
        s = forced[t] if forced is not None else decide(mode.phase, a, rng)
        h_prev[t] = h
        c_prev[t] = c
        U[t] = u
        logits[t] = a
        decisions.append(s)
        if s:
            summaries.append(h)
            emit_steps.append(t)
            h, c, lc = lstm_core(L1, L1.Wx @ x + L1.b, zero, zero)
        else:
            h, c, lc = lstm_core(L1, L1.Wx @ x + L1.b, h, c)
        steps.append(lc)
    summaries.append(h)
    emit_steps.append(n)

    S = np.array(summaries)
    mask_out = dropout_mask(S.shape, retain, rng) if retain < 1.0 else None
    S_in = S * mask_out if mask_out is not None else S
    q = np.zeros(L2.hidden_dim, dt)
    cq = np.zeros(L2.hidden_dim, dt)
    steps2 = []
    for k in range(len(S_in)):
        q, cq, lc2 = lstm_core(L2, L2.Wx @ S_in[k] + L2.b, q, cq)
        steps2.append(lc2)

    result = EncodeResult(
        video_vector=q,
        summaries=summaries,
        boundaries=[t + 1 for t, s in enumerate(decisions) if s],
        per_step_logits=logits.tolist(),
        decisions=decisions,
    )
    cache = EncodeCache(f.frames, x_in, mask_in, steps, h_prev, c_prev, U, logits,
                        decisions, forced is None, emit_steps, S_in, mask_out, steps2)
    return result, cache


def _lstm_chain_backward(steps, dpre_out, dh, dc=None):
    """Reverse pass over a plain LSTM chain with no per-step output gradient
    except the final ``dh``; fills ``dpre_out`` row by row and returns it."""
    if dc is None:
        dc = np.zeros_like(dh)
    for k in range(len(steps) - 1, -1, -1):
        dpre_out[k], dh, dc = lstm_core_backward(steps[k], dh, dc)
    return dpre_out


def encode_backward(p, cache, dv, grads=None):
    """Backprop a gradient on the video vector into every encoder parameter.

    Boundary decisions made by the detector (learned mode) receive the
    straight-through gradient sigmoid'(logit) via the two reset products;
    forced decisions receive none.  Returns ``(grads, d_frames)``.
    """
    if grads is None:
        grads = p.zeros_like()
    L1, B, L2 = p.layer1, p.boundary, p.layer2
    n = len(cache.steps)
    m = len(cache.steps2)
    H = L1.hidden_dim
    if dv.shape != (L2.hidden_dim,) or cache.inputs.shape[1] != L1.input_dim:
        raise ValueError("cache does not match encoder params")

    # second layer
    dpre2 = _lstm_chain_backward(cache.steps2, np.empty((m, 4 * L2.hidden_dim)), dv)
    q_prev = np.array([st.h_prev for st in cache.steps2])
    grads.layer2.Wx += dpre2.T @ cache.summaries_in
    grads.layer2.Wh += dpre2.T @ q_prev
    grads.layer2.b += dpre2.sum(axis=0)
    dS = dpre2 @ L2.Wx
    if cache.mask_out is not None:
        dS *= cache.mask_out
    d_emit = {t: dS[k] for k, t in enumerate(cache.emit_steps)}

    # boundary-aware layer
    dpre1 = np.empty((n, 4 * H))
    h_in = np.empty((n, H))
    dA = np.zeros(n)
    w_back = B.W_sh.T @ B.v_s
    dh = d_emit[n].copy()
    dc = np.zeros(H)
    for t in range(n - 1, -1, -1):
        st = cache.steps[t]
        h_in[t] = st.h_prev
        dpre1[t], dh_in, dc_in = lstm_core_backward(st, dh, dc)
        s = cache.decisions[t]
        if s:
            dh = d_emit[t].copy()
            dc = np.zeros(H)
        else:
            dh = dh_in
            dc = dc_in
        if cache.learned:
            ds = -(dh_in @ cache.h_prev[t] + dc_in @ cache.c_prev[t])
            sg = sigmoid_scalar(cache.logits[t])
            da = ds * sg * (1.0 - sg)
            dA[t] = da
            dh = dh + da * w_back

    grads.layer1.Wx += dpre1.T @ cache.inputs
    grads.layer1.Wh += dpre1.T @ h_in
    grads.layer1.b += dpre1.sum(axis=0)
    dx_in = dpre1 @ L1.Wx
    if cache.learned:
        grads.boundary.v_s += dA @ cache.u
        grads.boundary.W_si += np.outer(B.v_s, dA @ cache.inputs)
        grads.boundary.W_sh += np.outer(B.v_s, dA @ cache.h_prev)
        grads.boundary.b_s += B.v_s * dA.sum()
        dx_in += np.outer(dA, B.W_si.T @ B.v_s)

    if cache.mask_in is not None:
        dx_in *= cache.mask_in
    grads.W_embed += dx_in.T @ cache.frames
    grads.b_embed += dx_in.sum(axis=0)
    return grads, dx_in @ p.W_embed


# ---------------------------------------------------------------- soft relaxation

@dataclass
class SoftEncodeCache:
    frames: np.ndarray
    inputs: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    u: np.ndarray
    s: np.ndarray
    steps: list      # layer-1 LstmCache per step
    cand: list       # layer-2 LstmCache of the candidate update consuming h_{t-1}
    q_prev: np.ndarray
    cq_prev: np.ndarray
    q_cand: np.ndarray
    cq_cand: np.ndarray
    closing: object


def encode_soft(p, f):
    """Fully differentiable relaxation of the encoder, for gradient checking.

    The detector output is the plain sigmoid ``s`` of its logit.  The reset
    products use ``1 - s``; the second layer takes its update on ``h_{t-1}``
    with weight ``s`` and carries its previous state with weight ``1 - s``.
    For binary ``s`` this is exactly the hard encoder.
    """
    L1, B, L2 = p.layer1, p.boundary, p.layer2
    H, H2, n = L1.hidden_dim, L2.hidden_dim, f.n
    x_in = embed_input(p, f)
    xproj = x_in @ L1.Wx.T + L1.b
    ux = x_in @ B.W_si.T + B.b_s
    dt = xproj.dtype
    h, c = np.zeros(H, dt), np.zeros(H, dt)
    q, cq = np.zeros(H2, dt), np.zeros(H2, dt)
    arrs = {k: np.empty((n, H), dt) for k in ("h_prev", "c_prev", "u")}
    arrs2 = {k: np.empty((n, H2), dt) for k in ("q_prev", "cq_prev", "q_cand", "cq_cand")}
    s_all = np.empty(n, dt)
    steps, cand = [], []
    for t in range(n):
        u = ux[t] + B.W_sh @ h
        s = sigmoid(B.v_s @ u)
        arrs["h_prev"][t], arrs["c_prev"][t], arrs["u"][t] = h, c, u
        arrs2["q_prev"][t], arrs2["cq_prev"][t] = q, cq
        s_all[t] = s
        qc, cqc, lc2 = lstm_core(L2, L2.Wx @ h + L2.b, q, cq, x=h)
        arrs2["q_cand"][t], arrs2["cq_cand"][t] = qc, cqc
        cand.append(lc2)
        q = s * qc + (1.0 - s) * q
        cq = s * cqc + (1.0 - s) * cq
        h, c, lc = lstm_core(L1, xproj[t], h * (1.0 - s), c * (1.0 - s))
        steps.append(lc)
    q, cq, closing = lstm_core(L2, L2.Wx @ h + L2.b, q, cq, x=h)
    cache = SoftEncodeCache(f.frames, x_in, arrs["h_prev"], arrs["c_prev"], arrs["u"],
                            s_all, steps, cand, arrs2["q_prev"], arrs2["cq_prev"],
                            arrs2["q_cand"], arrs2["cq_cand"], closing)
    return q, cache


def encode_soft_backward(p, cache, dv, grads=None):
    if grads is None:
        grads = p.zeros_like()
    L1, B, L2 = p.layer1, p.boundary, p.layer2
    n = len(cache.steps)
    g1, g2, gb = grads.layer1, grads.layer2, grads.boundary

    def l2_backward(lc, dq, dcq):
        dpre, dq_prev, dcq_prev = lstm_core_backward(lc, dq, dcq)
        g2.Wx += np.outer(dpre, lc.x)
        g2.Wh += np.outer(dpre, lc.h_prev)
        g2.b += dpre
        return L2.Wx.T @ dpre, dq_prev, dcq_prev

    dh, dq, dcq = l2_backward(cache.closing, dv, np.zeros_like(dv))
    dc = np.zeros(L1.hidden_dim)
    dx_in = np.empty_like(cache.inputs)
    for t in range(n - 1, -1, -1):
        s = cache.s[t]
        lc = cache.steps[t]
        dpre, dh_in, dc_in = lstm_core_backward(lc, dh, dc)
        g1.Wx += np.outer(dpre, cache.inputs[t])
        g1.Wh += np.outer(dpre, lc.h_prev)
        g1.b += dpre
        dx = L1.Wx.T @ dpre
        dh_prev = dh_in * (1.0 - s)
        dc_prev = dc_in * (1.0 - s)
        ds = -(dh_in @ cache.h_prev[t] + dc_in @ cache.c_prev[t])
        # q_t = s*q_cand + (1-s)*q_prev
        ds += dq @ (cache.q_cand[t] - cache.q_prev[t]) + dcq @ (cache.cq_cand[t] - cache.cq_prev[t])
        dh_from_l2, dq_c, dcq_c = l2_backward(cache.cand[t], dq * s, dcq * s)
        dq = dq * (1.0 - s) + dq_c
        dcq = dcq * (1.0 - s) + dcq_c
        dh_prev += dh_from_l2
        da = ds * s * (1.0 - s)
        u = cache.u[t]
        du = da * B.v_s
        gb.v_s += da * u
        gb.W_si += np.outer(du, cache.inputs[t])
        gb.W_sh += np.outer(du, cache.h_prev[t])
        gb.b_s += du
        dx_in[t] = dx + B.W_si.T @ du
        dh = dh_prev + B.W_sh.T @ du
        dc = dc_prev
    grads.W_embed += dx_in.T @ cache.frames
    grads.b_embed += dx_in.sum(axis=0)
    return grads


# ---------------------------------------------------------------- statistics

@dataclass
class BoundaryStatistics:
    counts: np.ndarray     # counts[k] = number of videos with k detected boundaries
    positions: np.ndarray  # 100-bin histogram of t/n over all detected boundaries

    @property
    def n_videos(self):
        return int(self.counts.sum())


def boundary_statistics(results, bins=100):
    """Histograms of detector activations; the closing emission is not counted."""
    if not results:
        raise ValueError("boundary_statistics needs at least one result")
    per_video = [len(r.boundaries) for r in results]
    counts = np.bincount(per_video, minlength=1)
    positions = np.zeros(bins, dtype=np.int64)
    for r in results:
        n = r.n
        for t in r.boundaries:
            k = min(t * bins // n, bins - 1)
            positions[k] += 1
    return BoundaryStatistics(counts, positions)
