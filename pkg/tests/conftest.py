import numpy as np
import pytest

from bacap.decoder import BOS, EOS, CaptionTokens
from bacap.encoder import FeatureSequence
from bacap.model import ModelConfig, ModelParams, Sample
from bacap.numerics import make_rng


def random_params(cfg, rng, scale=0.5):
    """Model with every tensor drawn N(0, scale^2); biases included."""
    p = ModelParams.zeros(cfg)
    for t in p.tensors().values():
        t[...] = rng.standard_normal(t.shape) * scale
    return p


def tiny_sample(rng, n_frames=8, feature_dim=4, vocab_size=7, n_words=3, sid="v0"):
    words = [int(w) for w in rng.integers(3, vocab_size, size=n_words)]
    frames = rng.standard_normal((n_frames, feature_dim))
    return Sample(sid, FeatureSequence(sid, frames), CaptionTokens([BOS] + words + [EOS]))


@pytest.fixture
def tiny_config():
    return ModelConfig(feature_dim=4, vocab_size=7, embed_dim=4, word_dim=4, hidden_dim=4)


@pytest.fixture
def rng():
    return make_rng(1234)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
