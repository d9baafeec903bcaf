import csv
import io
import json
import os

import pytest

from bacap.cli import run


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


SMALL = ["--train", "12", "--val", "4", "--test", "4", "--prototypes", "4", "--dim", "6"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data, out = root / "d", root / "run1"
    assert run(["gen-data", "--out", str(data), "--seed", "1"] + SMALL) == 0
    assert run(["train", "--data", str(data), "--out", str(out), "--seed", "1",
                "--embed-dim", "6", "--word-dim", "6", "--hidden-dim", "8", "--batch-size", "4",
                "--epochs", "2", "--min-count", "1"]) == 0
    return data, out


def test_gen_data_is_reproducible(tmp_path):
    assert run(["gen-data", "--out", str(tmp_path / "a"), "--seed", "1"] + SMALL) == 0
    assert run(["gen-data", "--out", str(tmp_path / "b"), "--seed", "1"] + SMALL) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BACAP_SEED", "1")
    assert run(["gen-data", "--out", str(tmp_path / "env")] + SMALL) == 0
    assert run(["gen-data", "--out", str(tmp_path / "flag"), "--seed", "1"] + SMALL) == 0
    assert tree_bytes(tmp_path / "env") == tree_bytes(tmp_path / "flag")
    monkeypatch.setenv("BACAP_SEED", "soon")
    assert run(["gen-data", "--out", str(tmp_path / "bad")] + SMALL) == 1


def test_usage_errors_exit_1(capsys):
    assert run(["train", "--data", "d", "--out", "o", "--bogus"]) == 1
    assert "bogus" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["segment", "--checkpoint", "x", "--boundaries", "sometimes"]) == 1


def test_missing_checkpoint_exits_2(tmp_path, capsys):
    code = run(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
                "--manifest", str(tmp_path / "m.jsonl")])
    assert code == 2
    assert "missing.ckpt" in capsys.readouterr().err


def test_train_outputs(trained):
    _, out = trained
    names = set(os.listdir(out))
    assert {"best.ckpt", "last.ckpt", "epochs.csv", "config.json"} <= names
    rows = list(csv.reader(open(out / "epochs.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_loss"] and len(rows) >= 2
    cfg = json.load(open(out / "config.json"))
    assert cfg["run"]["seed"] == 1 and cfg["model"]["hidden_dim"] == 8


def test_segment_prints_increasing_boundaries_and_is_repeatable(trained, capsys):
    data, out = trained
    videos = sorted(str(data / "test" / f) for f in os.listdir(data / "test") if f.endswith(".bafv"))
    argv = ["segment", "--checkpoint", str(out / "best.ckpt"), "--video", *videos, "--mode", "test"]
    assert run(argv) == 0
    first = capsys.readouterr().out
    assert run(argv) == 0
    assert capsys.readouterr().out == first
    lines = first.splitlines()
    assert len(lines) == len(videos)
    for line in lines:
        vid, _, rest = line.partition("\t")
        b = [int(x) for x in rest.split()]
        assert b == sorted(set(b))


def test_segment_equal_and_file_modes(trained, capsys, tmp_path):
    data, out = trained
    manifest = data / "test" / "manifest.jsonl"
    assert run(["segment", "--checkpoint", str(out / "best.ckpt"), "--manifest", str(manifest),
                "--boundaries", "equal:2", "--summaries", str(tmp_path / "s.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(len(l.split("\t")[1].split()) == 1 for l in lines)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert len(rows) == 1 + 2 * len(lines)
    # the manifest doubles as a boundary file
    assert run(["segment", "--checkpoint", str(out / "best.ckpt"), "--manifest", str(manifest),
                "--boundaries", f"file:{manifest}"]) == 0
    got = {l.split("\t")[0]: l.split("\t")[1] for l in capsys.readouterr().out.splitlines()}
    for line in open(manifest):
        rec = json.loads(line)
        assert got[rec["id"]] == " ".join(map(str, rec["boundaries"]))


def test_eval_is_repeatable(trained, capsys, tmp_path):
    data, out = trained
    argv = ["eval", "--checkpoint", str(out / "best.ckpt"),
            "--manifest", str(data / "test" / "manifest.jsonl"), "--out", str(tmp_path / "e")]
    assert run(argv) == 0
    first = capsys.readouterr().out
    assert run(argv) == 0
    assert capsys.readouterr().out == first
    metrics = dict(csv.reader(io.StringIO(first)))
    assert {"bleu4", "rouge_l", "cider", "boundary_f1"} <= set(metrics)
    assert (tmp_path / "e" / "metrics.csv").read_text() == first


def test_stats_writes_histograms(trained, tmp_path):
    data, out = trained
    assert run(["stats", "--checkpoint", str(out / "best.ckpt"),
                "--manifest", str(data / "test" / "manifest.jsonl"), "--out", str(tmp_path),
                "--boundaries", "equal:3"]) == 0
    counts = list(csv.reader(open(tmp_path / "boundary_counts.csv")))
    assert counts[0] == ["boundaries", "videos"] and counts[-1] == ["2", "4"]
    pos = list(csv.reader(open(tmp_path / "boundary_positions.csv")))
    assert len(pos) == 101 and sum(int(r[1]) for r in pos[1:]) == 8


def test_bad_data_dir_exits_2(tmp_path):
    assert run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
