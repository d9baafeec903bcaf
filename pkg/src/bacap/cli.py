"""``bacap`` command line: gen-data, train, eval, segment, stats.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .cells import TEST, TRAIN
from .checkpoint import CheckpointError, load_checkpoint
from .data import (FormatError, SyntheticConfig, build_vocab, decode_caption, gen_synthetic,
                   load_features, load_split, read_manifest)
from .encoder import BoundaryMode, boundary_statistics, encode
from .metrics import EvalCorpus, bleu4, boundary_f1, cider, rouge_l
from .model import ModelConfig, ModelParams
from .numerics import NumericFailure, make_rng
from .training import TrainConfig, predict, train

log = logging.getLogger("bacap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pair(text):
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def _boundary_spec(text):
    if text == "learned":
        return ("learned", None)
    kind, _, arg = text.partition(":")
    if kind == "equal":
        try:
            m = int(arg)
        except ValueError:
            m = 0
        if m < 1:
            raise argparse.ArgumentTypeError(f"equal:<m> needs a positive integer, got {arg!r}")
        return ("equal", m)
    if kind == "file" and arg:
        return ("file", arg)
    raise argparse.ArgumentTypeError(f"expected learned, equal:<m> or file:<path>, got {text!r}")


def read_boundary_file(path):
    """JSON lines with ``id`` and ``boundaries`` (1-based); a manifest works as is."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out[str(d["id"])] = [int(b) for b in d["boundaries"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad boundary record ({exc})") from None
    return out


def forced_from_boundaries(n, boundaries, vid="?"):
    d = np.zeros(n, dtype=np.int64)
    for b in boundaries:
        if not 1 <= b <= n:
            raise FormatError(f"boundary {b} outside 1..{n} for video {vid!r}")
        d[b - 1] = 1
    return BoundaryMode.forced(d)


def resolve_modes(spec, samples, phase):
    """Per-video BoundaryMode for a ``--boundaries`` spec."""
    kind, arg = spec
    if kind == "learned":
        return {s.id: BoundaryMode.learned(phase) for s in samples}
    if kind == "equal":
        return {s.id: BoundaryMode.equal_chunks(arg) for s in samples}
    table = read_boundary_file(arg)
    modes = {}
    for s in samples:
        if s.id not in table:
            raise FormatError(f"{arg}: no boundaries for video {s.id!r}")
        modes[s.id] = forced_from_boundaries(s.features.n, table[s.id], s.id)
    return modes


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("BACAP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"BACAP_SEED must be an integer, got {env!r}") from None


def echo_config(args, seed):
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
           if k != "func"}
    cfg["seed"] = seed
    log.info("config: %s", json.dumps(cfg, sort_keys=True))
    return cfg


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args, seed):
    splits = (("train", args.train), ("val", args.val), ("test", args.test))
    try:
        cfg = SyntheticConfig(n_prototypes=args.prototypes, feature_dim=args.dim,
                              segments=args.segments, segment_length=args.segment_length,
                              noise=args.noise, splits=splits, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = gen_synthetic(cfg, args.out)
    for split, path in paths.items():
        log.info("wrote %s", path)
    return EXIT_OK


def _split_manifest(data_dir, split):
    path = os.path.join(data_dir, split, "manifest.jsonl")
    if not os.path.exists(path):
        raise FormatError(f"missing manifest {path}")
    return path


def cmd_train(args, seed):
    train_path = _split_manifest(args.data, "train")
    val_path = _split_manifest(args.data, "val")
    records, _ = load_split(train_path)
    vocab = build_vocab([r.caption for r in records], min_count=args.min_count)
    _, train_set = load_split(train_path, vocab)
    _, val_set = load_split(val_path, vocab)
    dims = {s.features.dim for s in train_set + val_set}
    if len(dims) != 1:
        raise FormatError(f"inconsistent feature dims across splits: {sorted(dims)}")
    config = ModelConfig(feature_dim=dims.pop(), vocab_size=vocab.N, embed_dim=args.embed_dim,
                         word_dim=args.word_dim, hidden_dim=args.hidden_dim)
    try:
        tcfg = TrainConfig(batch_size=args.batch_size, dropout_retain=args.dropout_retain,
                           max_epochs=args.epochs, patience=args.patience, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    modes = None
    if args.boundaries[0] != "learned":
        modes = resolve_modes(args.boundaries, train_set + val_set, TRAIN)
    params = ModelParams.init(config, make_rng(seed))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump({"run": args.config_echo, "model": config.as_dict(), "vocab_size": vocab.N},
                  fh, sort_keys=True, indent=1)
        fh.write("\n")
    log.info("training on %d videos, validating on %d, vocabulary %d",
             len(train_set), len(val_set), vocab.N)
    result = train(params, tcfg, train_set, val_set, out_dir=args.out, vocab=vocab, modes=modes)
    log.info("best epoch %d; checkpoints: %s", result.best_epoch, ", ".join(result.checkpoints))
    return EXIT_OK


def _load_model(path):
    ckpt = load_checkpoint(path)
    if ckpt.vocab is None:
        raise CheckpointError(f"{path}: checkpoint carries no vocabulary")
    return ckpt


def _check_dim(ckpt, samples, where):
    want = ckpt.params.config.feature_dim
    for s in samples:
        if s.features.dim != want:
            raise FormatError(f"{where}: video {s.id!r} has dim {s.features.dim}, model expects {want}")


def cmd_eval(args, seed):
    ckpt = _load_model(args.checkpoint)
    _, samples = load_split(args.manifest, ckpt.vocab)
    _check_dim(ckpt, samples, args.manifest)
    modes = resolve_modes(args.boundaries, samples, TEST)
    cands, refs, pred, truth = {}, {}, {}, {}
    for s in samples:
        cap, enc = predict(ckpt.params, s, modes[s.id], args.max_len)
        cands[s.id] = decode_caption(ckpt.vocab, cap)
        refs[s.id] = s.references
        pred[s.id] = enc.boundaries
        if s.boundaries is not None:
            truth[s.id] = s.boundaries
    corpus = EvalCorpus(cands, refs)
    rows = [("bleu4", repr(bleu4(corpus))), ("rouge_l", repr(rouge_l(corpus)))]
    if len(cands) >= 2:
        rows.append(("cider", repr(cider(corpus)[1])))
    if truth:
        p, r, f = boundary_f1(pred, truth, args.tolerance)
        rows += [("boundary_precision", repr(p)), ("boundary_recall", repr(r)),
                 ("boundary_f1", repr(f))]
    _write_csv("-", ["metric", "value"], rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "metrics.csv"), ["metric", "value"], rows)
        _write_csv(os.path.join(args.out, "captions.csv"), ["id", "caption"],
                   [(vid, " ".join(cands[vid])) for vid in sorted(cands)])
    return EXIT_OK


def _segment_inputs(args):
    if args.video:
        fs = [load_features(p) for p in args.video]
        return [(f.id, f) for f in fs]
    base = os.path.dirname(os.path.abspath(args.manifest))
    return [(r.id, load_features(os.path.join(base, r.feature_path), id=r.id))
            for r in read_manifest(args.manifest)]


def cmd_segment(args, seed):
    ckpt = _load_model(args.checkpoint)
    if bool(args.video) == bool(args.manifest):
        raise UsageError("segment needs exactly one of --video or --manifest")
    want = ckpt.params.config.feature_dim
    phase = TEST if args.mode == "test" else TRAIN
    rng = make_rng(seed) if phase == TRAIN else None
    kind, arg = args.boundaries
    table = read_boundary_file(arg) if kind == "file" else None
    lines, summary_rows = [], []
    for vid, feats in _segment_inputs(args):
        if feats.dim != want:
            raise FormatError(f"video {vid!r} has dim {feats.dim}, model expects {want}")
        if kind == "learned":
            mode = BoundaryMode.learned(phase)
        elif kind == "equal":
            mode = BoundaryMode.equal_chunks(arg)
        else:
            if vid not in table:
                raise FormatError(f"{arg}: no boundaries for video {vid!r}")
            mode = forced_from_boundaries(feats.n, table[vid], vid)
        enc, _ = encode(ckpt.params.encoder, feats, mode, rng=rng)
        lines.append(f"{vid}\t{' '.join(str(b) for b in enc.boundaries)}\n")
        for k, vec in enumerate(enc.summaries):
            summary_rows.append([vid, k] + [repr(float(x)) for x in vec])
    sys.stdout.write("".join(lines))
    if args.summaries:
        dim = ckpt.params.encoder.layer1.hidden_dim
        _write_csv(args.summaries, ["id", "segment"] + [f"h{i}" for i in range(dim)], summary_rows)
    return EXIT_OK


def cmd_stats(args, seed):
    ckpt = _load_model(args.checkpoint)
    _, samples = load_split(args.manifest, ckpt.vocab)
    _check_dim(ckpt, samples, args.manifest)
    modes = resolve_modes(args.boundaries, samples, TEST)
    results = [encode(ckpt.params.encoder, s.features, modes[s.id])[0] for s in samples]
    stats = boundary_statistics(results, bins=args.bins)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "boundary_counts.csv"), ["boundaries", "videos"],
               [(k, int(c)) for k, c in enumerate(stats.counts)])
    _write_csv(os.path.join(args.out, "boundary_positions.csv"), ["bin", "boundaries"],
               [(k, int(c)) for k, c in enumerate(stats.positions)])
    log.info("wrote boundary histograms for %d videos to %s", len(samples), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="bacap", description="Boundary-aware hierarchical video captioning.")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic segment corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--prototypes", type=int, default=16)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--segments", type=_pair, default=(2, 4), help="LO,HI segments per video")
    g.add_argument("--segment-length", type=_pair, default=(4, 8), help="LO,HI steps per segment")
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--train", type=int, default=500)
    g.add_argument("--val", type=int, default=100)
    g.add_argument("--test", type=int, default=100)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on <data>/train, validate on <data>/val")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--embed-dim", type=int, default=512)
    t.add_argument("--word-dim", type=int, default=512)
    t.add_argument("--hidden-dim", type=int, default=1024)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--dropout-retain", type=float, default=0.5)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--min-count", type=int, default=5)
    t.add_argument("--boundaries", type=_boundary_spec, default=("learned", None))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="caption metrics over a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--boundaries", type=_boundary_spec, default=("learned", None))
    e.add_argument("--max-len", type=int, default=20)
    e.add_argument("--tolerance", type=int, default=2)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("segment", help="print detected boundaries per video")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--video", nargs="+")
    s.add_argument("--manifest")
    s.add_argument("--mode", choices=["test", "train"], default="test")
    s.add_argument("--seed", type=int)
    s.add_argument("--boundaries", type=_boundary_spec, default=("learned", None))
    s.add_argument("--summaries", help="write segment summaries to this CSV")
    s.set_defaults(func=cmd_segment)

    h = sub.add_parser("stats", help="boundary count and position histograms")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--manifest", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--seed", type=int)
    h.add_argument("--bins", type=int, default=100)
    h.add_argument("--boundaries", type=_boundary_spec, default=("learned", None))
    h.set_defaults(func=cmd_stats)
    return p


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s", force=True)
        seed = resolve_seed(args.seed)
        args.config_echo = echo_config(args, seed)
        return args.func(args, seed)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError) as exc:
        print(f"bacap: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"bacap: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"bacap: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
