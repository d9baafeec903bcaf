"""GRU caption decoder conditioned on the video vector."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .cells import GruParams, gru_core, gru_core_backward
from .numerics import ParamSet, glorot_init, softmax

BOS = 0
EOS = 1
UNK = 2


@dataclass
class CaptionTokens:
    ids: List[int]

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError(f"caption must start with BOS and end with EOS: {self.ids}")

    @property
    def T(self):
        """Number of prediction steps."""
        return len(self.ids) - 1


@dataclass(eq=False)
class DecoderParams(ParamSet):
    gru: GruParams
    W_w: np.ndarray  # (word_dim, N): column k embeds token k
    W_p: np.ndarray  # (N, H)

    def __post_init__(self):
        if self.W_w.shape[1] != self.W_p.shape[0]:
            raise ValueError("W_w columns and W_p rows must both equal the vocabulary size")
        if self.W_p.shape[1] != self.gru.hidden_dim:
            raise ValueError("W_p columns must equal the GRU hidden dim")
        if self.gru.Wy.shape[1] != self.W_w.shape[0]:
            raise ValueError("GRU word input dim must equal the word embedding dim")

    @property
    def vocab_size(self):
        return self.W_p.shape[0]

    @property
    def video_dim(self):
        return self.gru.Wv.shape[1]

    @classmethod
    def init(cls, vocab_size, word_dim, video_dim, hidden_dim, rng):
        return cls(GruParams.init(word_dim, video_dim, hidden_dim, rng),
                   glorot_init(word_dim, vocab_size, rng),
                   glorot_init(vocab_size, hidden_dim, rng))

    @classmethod
    def zeros(cls, vocab_size, word_dim, video_dim, hidden_dim):
        return cls(GruParams.zeros(word_dim, video_dim, hidden_dim),
                   np.zeros((word_dim, vocab_size)),
                   np.zeros((vocab_size, hidden_dim)))


def word_distribution(dp, p_t):
    return softmax(dp.W_p @ p_t)


@dataclass
class DecodeCache:
    ids: List[int]
    v: np.ndarray
    steps: list          # GruCache per prediction step
    states: np.ndarray   # (T, H) decoder outputs p_1..p_T
    probs: np.ndarray    # (T, N)


def caption_loss(dp, v, cap):
    """Teacher-forced negative log-likelihood summed over prediction steps."""
    N = dp.vocab_size
    ids = cap.ids
    if any(i < 0 or i >= N for i in ids):
        raise ValueError(f"token index out of vocabulary of size {N}")
    if v.shape != (dp.video_dim,):
        raise ValueError("video vector dim does not match decoder")
    g = dp.gru
    H = g.hidden_dim
    T = cap.T
    # input-side projections for every step at once; v is constant
    in_proj = dp.W_w[:, ids[:-1]].T @ g.Wy.T + (g.Wv @ v + g.b)
    p = np.zeros(H, in_proj.dtype)
    steps = []
    states = np.empty((T, H), in_proj.dtype)
    for t in range(T):
        p, gc = gru_core(g, in_proj[t], p)
        steps.append(gc)
        states[t] = p
    logits = states @ dp.W_p.T
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    probs = expd / expd.sum(axis=1, keepdims=True)
    log_norm = np.log(expd.sum(axis=1))
    targets = ids[1:]
    loss = -(logits[np.arange(T), targets] - log_norm).sum()
    return loss, DecodeCache(list(ids), v, steps, states, probs)


def caption_loss_backward(dp, cache, dloss=1.0, grads=None):
    """Returns ``(grads, dv)`` for an upstream gradient ``dloss`` on the loss."""
    if grads is None:
        grads = dp.zeros_like()
    g = dp.gru
    H = g.hidden_dim
    ids = cache.ids
    T = len(cache.steps)
    dlogits = cache.probs.copy()
    dlogits[np.arange(T), ids[1:]] -= 1.0
    dlogits *= dloss
    grads.W_p += dlogits.T @ cache.states
    dstates = dlogits @ dp.W_p

    dpre = np.empty((T, 3 * H))
    p_prev = np.empty((T, H))
    rp = np.empty((T, H))
    dp_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        st = cache.steps[t]
        dpre[t], dp_next, rp[t] = gru_core_backward(st, dstates[t] + dp_next)
        p_prev[t] = st.p_prev

    words = dp.W_w[:, ids[:-1]].T
    grads.gru.Wy += dpre.T @ words
    dsum = dpre.sum(axis=0)
    grads.gru.Wv += np.outer(dsum, cache.v)
    grads.gru.b += dsum
    grads.gru.Wh[:2 * H] += dpre[:, :2 * H].T @ p_prev
    grads.gru.Wh[2 * H:] += dpre[:, 2 * H:].T @ rp
    dwords = dpre @ g.Wy
    np.add.at(grads.W_w.T, ids[:-1], dwords)
    return grads, g.Wv.T @ dsum


def greedy_decode(dp, v, max_len, banned=(BOS, UNK)):
    """Feed back the argmax word until EOS or ``max_len`` generated tokens.

    Ties go to the lowest index.  Tokens in ``banned`` are never produced:
    BOS is never a target and UNK is only a placeholder for dropped words.  A
    caption cut off at ``max_len`` still gets a closing EOS so it stays a
    well-formed :class:`CaptionTokens`.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    g = dp.gru
    v_proj = g.Wv @ v + g.b
    p = np.zeros(g.hidden_dim)
    ids = [BOS]
    for _ in range(max_len):
        p, _ = gru_core(g, g.Wy @ dp.W_w[:, ids[-1]] + v_proj, p)
        logits = dp.W_p @ p
        for b in banned:
            if b < logits.shape[0]:
                logits[b] = -np.inf
        nxt = int(np.argmax(logits))
        ids.append(nxt)
        if nxt == EOS:
            return CaptionTokens(ids)
    return CaptionTokens(ids + [EOS])
