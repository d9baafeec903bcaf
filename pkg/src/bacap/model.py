"""Full encoder-decoder parameter set and the per-sample loss."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .decoder import CaptionTokens, DecoderParams, caption_loss, caption_loss_backward
from .encoder import (BoundaryMode, EncoderParams, FeatureSequence, encode,
                      encode_backward, encode_soft, encode_soft_backward)
from .numerics import NumericFailure, ParamSet


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    vocab_size: int
    embed_dim: int = 512
    word_dim: int = 512
    hidden_dim: int = 1024

    def as_dict(self):
        return {"feature_dim": self.feature_dim, "vocab_size": self.vocab_size,
                "embed_dim": self.embed_dim, "word_dim": self.word_dim,
                "hidden_dim": self.hidden_dim}


@dataclass(eq=False)
class ModelParams(ParamSet):
    encoder: EncoderParams
    decoder: DecoderParams

    def __post_init__(self):
        if self.encoder.video_dim != self.decoder.video_dim:
            raise ValueError("encoder video vector dim must equal decoder video input dim")

    @property
    def config(self):
        return ModelConfig(
            feature_dim=self.encoder.feature_dim,
            vocab_size=self.decoder.vocab_size,
            embed_dim=self.encoder.W_embed.shape[0],
            word_dim=self.decoder.W_w.shape[0],
            hidden_dim=self.encoder.layer1.hidden_dim,
        )

    @classmethod
    def init(cls, config, rng):
        c = config
        enc = EncoderParams.init(c.feature_dim, c.embed_dim, c.hidden_dim, rng)
        dec = DecoderParams.init(c.vocab_size, c.word_dim, c.hidden_dim, c.hidden_dim, rng)
        return cls(enc, dec)

    @classmethod
    def zeros(cls, config):
        c = config
        return cls(EncoderParams.zeros(c.feature_dim, c.embed_dim, c.hidden_dim),
                   DecoderParams.zeros(c.vocab_size, c.word_dim, c.hidden_dim, c.hidden_dim))


@dataclass
class Sample:
    id: str
    features: FeatureSequence
    caption: CaptionTokens
    boundaries: Optional[List[int]] = None  # ground truth, 1-based
    references: List[List[str]] = field(default_factory=list)


@dataclass
class ForwardCache:
    encoder: object
    decoder: object
    soft: bool = False


def sample_loss(params, sample, mode, rng=None, retain=1.0):
    """Forward one sample.  Returns ``(loss, cache, encode_result)``."""
    enc, enc_cache = encode(params.encoder, sample.features, mode, rng=rng, retain=retain)
    loss, dec_cache = caption_loss(params.decoder, enc.video_vector, sample.caption)
    if not math.isfinite(loss):
        raise NumericFailure(f"non-finite loss on sample {sample.id!r}")
    return loss, ForwardCache(enc_cache, dec_cache), enc


def soft_sample_loss(params, sample):
    v, enc_cache = encode_soft(params.encoder, sample.features)
    loss, dec_cache = caption_loss(params.decoder, v, sample.caption)
    return loss, ForwardCache(enc_cache, dec_cache, soft=True)


def model_backward(params, cache, dloss=1.0, grads=None):
    """Gradient of ``dloss * loss`` for every parameter, accumulated into ``grads``."""
    if grads is None:
        grads = params.zeros_like()
    _, dv = caption_loss_backward(params.decoder, cache.decoder, dloss, grads.decoder)
    if cache.soft:
        encode_soft_backward(params.encoder, cache.encoder, dv, grads.encoder)
    else:
        encode_backward(params.encoder, cache.encoder, dv, grads.encoder)
    return grads


def frozen_mode(encode_result):
    """Replay mode reproducing the decisions of an earlier encode."""
    return BoundaryMode.forced(encode_result.decisions)


def check_grads_finite(grads):
    for name, g in grads.tensors().items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in {name}")
