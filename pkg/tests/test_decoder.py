import math

import numpy as np
import pytest

from bacap.decoder import (BOS, EOS, UNK, CaptionTokens, DecoderParams, caption_loss,
                           caption_loss_backward, greedy_decode, word_distribution)
from bacap.numerics import finite_diff_grad, make_rng
from bacap.training import max_relative_error


def random_decoder(rng, N=7, word_dim=4, video_dim=3, hidden_dim=4, scale=0.6):
    dp = DecoderParams.zeros(N, word_dim, video_dim, hidden_dim)
    for t in dp.tensors().values():
        t[...] = rng.standard_normal(t.shape) * scale
    return dp


def brute_force_loss(dp, v, ids):
    """Materialise one-hot inputs and full probability tables step by step."""
    g = dp.gru
    N = dp.vocab_size
    p = np.zeros(g.hidden_dim)
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    total = 0.0
    tables = []
    for t in range(1, len(ids)):
        onehot = np.zeros(N)
        onehot[ids[t - 1]] = 1.0
        y = dp.W_w @ onehot
        z = sig(g.W_zy @ y + g.W_zv @ v + g.W_zh @ p + g.b_z)
        r = sig(g.W_ry @ y + g.W_rv @ v + g.W_rh @ p + g.b_r)
        ht = np.tanh(g.W_hy @ y + g.W_hv @ v + g.W_hh @ (r * p) + g.b_h)
        p = (1 - z) * p + z * ht
        logits = dp.W_p @ p
        probs = np.exp(logits) / np.exp(logits).sum()
        tables.append(probs)
        total -= math.log(probs[ids[t]])
    return total, tables


def test_caption_tokens_validation():
    assert CaptionTokens([BOS, 5, EOS]).T == 2
    with pytest.raises(ValueError):
        CaptionTokens([5, EOS])
    with pytest.raises(ValueError):
        CaptionTokens([BOS, 5])


def test_word_distribution_examples():
    dp = DecoderParams.zeros(5, 2, 2, 3)
    assert np.allclose(word_distribution(dp, np.ones(3)), 0.2, atol=1e-15)
    dp2 = DecoderParams.zeros(2, 1, 1, 1)
    dp2.W_p[...] = [[0.0], [math.log(3.0)]]
    assert np.allclose(word_distribution(dp2, np.ones(1)), [0.25, 0.75], atol=1e-12)


def test_uniform_loss_is_T_ln2():
    dp = DecoderParams.zeros(2, 3, 3, 3)
    cap = CaptionTokens([BOS, EOS, EOS, EOS])
    loss, _ = caption_loss(dp, np.ones(3), cap)
    assert abs(loss - 3 * math.log(2)) < 1e-12


def test_saturated_single_step_loss_vanishes():
    dp = DecoderParams.zeros(4, 2, 2, 2)
    dp.gru.b_h[...] = 5.0
    dp.gru.b_z[...] = 5.0
    dp.W_p[EOS] = 200.0
    loss, _ = caption_loss(dp, np.zeros(2), CaptionTokens([BOS, EOS]))
    assert 0.0 <= loss < 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_loss_matches_brute_force(seed):
    rng = make_rng(seed)
    dp = random_decoder(rng)
    v = rng.standard_normal(3)
    ids = [BOS] + [int(i) for i in rng.integers(3, 7, size=4)] + [EOS]
    loss, cache = caption_loss(dp, v, CaptionTokens(ids))
    ref, tables = brute_force_loss(dp, v, ids)
    assert abs(loss - ref) < 1e-12
    assert np.allclose(cache.probs, tables, atol=1e-12)
    assert np.allclose(cache.probs.sum(axis=1), 1.0, atol=1e-12)


def test_out_of_vocabulary_index_rejected():
    dp = DecoderParams.zeros(4, 2, 2, 2)
    with pytest.raises(ValueError):
        caption_loss(dp, np.zeros(2), CaptionTokens([BOS, 9, EOS]))


@pytest.mark.parametrize("seed", range(4))
def test_caption_loss_gradients(seed):
    rng = make_rng(100 + seed)
    dp = random_decoder(rng)
    v = rng.standard_normal(3)
    ids = [BOS, 4, 4, 6, EOS]
    cap = CaptionTokens(ids)
    _, cache = caption_loss(dp, v, cap)
    grads, dv = caption_loss_backward(dp, cache)
    num = finite_diff_grad(lambda q: caption_loss(q, v, cap)[0], dp.astype(np.longdouble))
    assert max_relative_error(grads, num.astype(np.float64)) < 1e-6
    nv = finite_diff_grad(lambda x: caption_loss(dp, x, cap)[0], v.copy())
    assert np.allclose(dv, nv, rtol=1e-6, atol=1e-9)


def rigged(word):
    """Decoder whose state saturates to +1 so ``word`` always wins."""
    dp = DecoderParams.zeros(6, 2, 2, 2)
    dp.gru.b_z[...] = 10.0
    dp.gru.b_h[...] = 10.0
    dp.W_p[word] = 5.0
    return dp


def test_greedy_rigged_eos():
    out = greedy_decode(rigged(EOS), np.zeros(2), 10)
    assert out.ids == [BOS, EOS]


def test_greedy_rigged_word_truncates():
    out = greedy_decode(rigged(4), np.zeros(2), 5)
    assert out.ids == [BOS, 4, 4, 4, 4, 4, EOS]


def test_greedy_never_emits_bos_or_unk():
    for tok in (BOS, UNK):
        out = greedy_decode(rigged(tok), np.zeros(2), 3)
        assert tok not in out.ids[1:]


def test_greedy_ties_take_lowest_index():
    dp = DecoderParams.zeros(6, 2, 2, 2)
    out = greedy_decode(dp, np.zeros(2), 2)
    assert out.ids == [BOS, EOS]  # all logits equal; BOS is banned so EOS (1) wins


def test_greedy_deterministic_and_scale_invariant():
    rng = make_rng(9)
    dp = random_decoder(rng, N=9, scale=1.0)
    v = rng.standard_normal(3)
    a = greedy_decode(dp, v, 12)
    assert a.ids == greedy_decode(dp, v, 12).ids
    scaled = dp.copy()
    scaled.W_p *= 3.7
    assert greedy_decode(scaled, v, 12).ids == a.ids
