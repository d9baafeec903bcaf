"""Feature files, manifests, vocabulary and the synthetic segment corpus.

Feature file (``.bafv``), all little-endian::

    offset  size  field
    0       4     magic b"BAFV"
    4       4     uint32 version (1)
    8       4     uint32 n_frames
    12      4     uint32 dim
    16      4*n*dim float32 frames, row-major

Manifest: JSON lines, one object per video with keys ``id``,
``feature_path`` (relative to the manifest's directory), ``n_frames``,
``dim``, ``caption`` and optionally ``boundaries`` (1-based segment starts,
excluding step 1).

Tokenization lowercases, deletes every ASCII punctuation character
(``string.punctuation``) and splits on whitespace.
"""

import json
import os
import string
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .decoder import BOS, EOS, UNK, CaptionTokens
from .encoder import FeatureSequence
from .model import Sample
from .numerics import make_rng

FEATURE_MAGIC = b"BAFV"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"
UNK_TOKEN = "<UNK>"
RESERVED = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

_PUNCT = str.maketrans("", "", string.punctuation)


class FormatError(ValueError):
    """Malformed feature file or manifest."""


def tokenize(text):
    return text.lower().translate(_PUNCT).split()


@dataclass
class Vocabulary:
    tokens: List[str]
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:3]) != RESERVED:
            raise ValueError("vocabulary must start with <BOS>, <EOS>, <UNK>")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    @property
    def N(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok):
        return self.index.get(tok, UNK)


def build_vocab(captions, min_count=5):
    """Keep tokens seen at least ``min_count`` times, sorted for stability."""
    if not captions:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in captions for tok in tokenize(text))
    kept = sorted(tok for tok, n in counts.items() if n >= min_count and tok not in RESERVED)
    return Vocabulary(list(RESERVED) + kept)


def encode_caption(vocab, tokens):
    return CaptionTokens([BOS] + [vocab.id(t) for t in tokens] + [EOS])


def decode_caption(vocab, cap):
    """Token strings between BOS and EOS."""
    ids = cap.ids if isinstance(cap, CaptionTokens) else cap
    return [vocab.tokens[i] for i in ids if i not in (BOS, EOS)]


# ---------------------------------------------------------------- feature files

def save_features(path, frames):
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array")
    n, dim = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, dim))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def load_features(path, id=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    magic, version, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    if n < 1 or dim < 1:
        raise FormatError(f"{path}: empty feature header (n={n}, dim={dim}) at byte offset 8")
    expected = _HEADER.size + 4 * n * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: payload length mismatch, expected {expected} bytes, "
                          f"file ends at byte offset {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, dim)
    if id is None:
        id = os.path.splitext(os.path.basename(path))[0]
    return FeatureSequence(id, frames.astype(np.float64))


# ---------------------------------------------------------------- manifests

@dataclass
class ManifestRecord:
    id: str
    feature_path: str
    n_frames: int
    dim: int
    caption: str
    boundaries: Optional[List[int]] = None

    def to_json(self):
        d = {"id": self.id, "feature_path": self.feature_path, "n_frames": self.n_frames,
             "dim": self.dim, "caption": self.caption}
        if self.boundaries is not None:
            d["boundaries"] = list(self.boundaries)
        return json.dumps(d, sort_keys=True)


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = ManifestRecord(id=str(d["id"]), feature_path=d["feature_path"],
                                     n_frames=int(d["n_frames"]), dim=int(d["dim"]),
                                     caption=d["caption"], boundaries=d.get("boundaries"))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from None
            if rec.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def load_split(manifest_path, vocab=None):
    """Read a manifest and its feature files.

    Returns ``(records, samples)``; samples are None when no vocabulary is
    given (captions cannot be encoded yet).
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = read_manifest(manifest_path)
    samples = []
    for rec in records:
        feats = load_features(os.path.join(base, rec.feature_path), id=rec.id)
        if feats.n != rec.n_frames or feats.dim != rec.dim:
            raise FormatError(f"{manifest_path}: record {rec.id!r} says {rec.n_frames}x{rec.dim}, "
                              f"feature file has {feats.n}x{feats.dim}")
        toks = tokenize(rec.caption)
        cap = encode_caption(vocab, toks) if vocab is not None else None
        samples.append(Sample(rec.id, feats, cap, rec.boundaries, [toks]))
    return records, (samples if vocab is not None else None)


# ---------------------------------------------------------------- synthetic corpus

ACTION_NAMES = ("run", "jump", "sit", "wave", "turn", "fall", "climb", "swim",
                "throw", "catch", "kick", "push", "pull", "drive", "read", "write")


@dataclass
class SyntheticConfig:
    n_prototypes: int = 16
    feature_dim: int = 32
    segments: Tuple[int, int] = (2, 4)        # inclusive range per video
    segment_length: Tuple[int, int] = (4, 8)  # inclusive range in steps
    noise: float = 0.1
    splits: Tuple[Tuple[str, int], ...] = (("train", 500), ("val", 100), ("test", 100))
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.segments, self.segment_length):
            if not 1 <= lo <= hi:
                raise ValueError(f"empty range ({lo}, {hi})")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.n_prototypes < 1 or self.feature_dim < 1:
            raise ValueError("need at least one prototype and one feature dim")
        if self.n_prototypes < 2 and self.segments[1] > 1:
            raise ValueError("consecutive segments need at least two prototypes")


def action_names(k):
    if k <= len(ACTION_NAMES):
        return list(ACTION_NAMES[:k])
    return list(ACTION_NAMES) + [f"action{i}" for i in range(len(ACTION_NAMES), k)]


def make_prototypes(cfg, rng):
    protos = rng.standard_normal((cfg.n_prototypes, cfg.feature_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def synth_video(cfg, protos, names, rng, lengths=None, labels=None):
    """One video: returns ``(frames, caption_text, boundaries)``.

    Consecutive segments always use different prototypes.  ``lengths`` and
    ``labels`` override the random draws.
    """
    if lengths is None:
        k = int(rng.integers(cfg.segments[0], cfg.segments[1] + 1))
        lengths = [int(rng.integers(cfg.segment_length[0], cfg.segment_length[1] + 1))
                   for _ in range(k)]
    if labels is None:
        labels = []
        for _ in lengths:
            choices = [j for j in range(len(protos)) if not labels or j != labels[-1]]
            labels.append(int(choices[rng.integers(len(choices))]))
    frames, boundaries, t = [], [], 1
    for seg, (lab, ln) in enumerate(zip(labels, lengths)):
        if seg > 0:
            boundaries.append(t)
        noise = rng.standard_normal((ln, protos.shape[1])) * cfg.noise
        frames.append(protos[lab] + noise)
        t += ln
    caption = " then ".join(names[lab] for lab in labels)
    return np.concatenate(frames), caption, boundaries


def gen_synthetic(cfg, out_dir):
    """Write ``<out>/<split>/manifest.jsonl`` plus one feature file per video."""
    rng = make_rng(cfg.seed)
    protos = make_prototypes(cfg, rng)
    names = action_names(cfg.n_prototypes)
    manifests = {}
    for split, count in cfg.splits:
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        records = []
        for i in range(count):
            vid = f"{split}{i:05d}"
            frames, caption, bounds = synth_video(cfg, protos, names, rng)
            fname = vid + ".bafv"
            save_features(os.path.join(split_dir, fname), frames)
            records.append(ManifestRecord(vid, fname, frames.shape[0], frames.shape[1],
                                          caption, bounds))
        path = os.path.join(split_dir, "manifest.jsonl")
        write_manifest(path, records)
        manifests[split] = path
    return manifests
