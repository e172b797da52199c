import csv
import hashlib
import json
import subprocess
import sys

import pytest

from aclr import __version__
from aclr.cli import OUTPUT_ENV, _train_config, build_parser, run

SMALL = ["--hidden-dim", "5", "--out-dim", "3", "--max-epochs", "2", "--lr", "0.01"]


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert run(["synth", "--seed", "7", "--n-source", "30", "--n-target", "20", "--mean-posts", "4",
                "--out", str(out)]) == 0
    return out


def data_args(bench, source=True):
    args = ["--target", str(bench / "target.jsonl"), "--target-emb", str(bench / "target_emb.jsonl")]
    if source:
        args += ["--source", str(bench / "source.jsonl"), "--source-emb", str(bench / "source_emb.jsonl")]
    return args


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_is_deterministic(bench, tmp_path):
    assert run(["synth", "--seed", "7", "--n-source", "30", "--n-target", "20", "--mean-posts", "4",
                "--out", str(tmp_path)]) == 0
    for name in ("source.jsonl", "source_emb.jsonl", "target.jsonl", "target_emb.jsonl"):
        assert (bench / name).read_bytes() == (tmp_path / name).read_bytes()


def test_train_target_only_alpha_zero(bench, tmp_path):
    code = run(["train", "--regime", "target-only", "--alpha", "0", *data_args(bench, source=False),
                *SMALL, "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "history.csv")
    assert rows and all(r["L"] == r["ce_t"] == r["L_t"] and r["L_s"] == "" for r in rows)
    assert (tmp_path / "checkpoint.json").exists()


def test_manifest_records_inputs_and_config(bench, tmp_path):
    assert run(["train", *data_args(bench), *SMALL, "--seed", "3", "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["version"] == __version__
    assert m["seed"] == 3
    assert m["config"]["regime"] == "ACLR"
    assert m["config"]["tau"] == 0.1 and m["config"]["hidden_dim"] == 5
    digest = hashlib.sha256((bench / "target.jsonl").read_bytes()).hexdigest()
    assert m["inputs"]["target"]["sha256"] == digest
    assert set(m["outputs"]) == {"history", "checkpoint"}


def test_manifest_is_written_before_training(bench, tmp_path):
    # mismatched embedding dims fail inside training, after the manifest
    other = tmp_path / "other"
    assert run(["synth", "--dim", "8", "--n-source", "10", "--n-target", "10", "--out", str(other)]) == 0
    out = tmp_path / "run"
    code = run(["train", "--source", str(other / "source.jsonl"), "--source-emb", str(other / "source_emb.jsonl"),
                *data_args(bench, source=False), *SMALL, "--out", str(out)])
    assert code == 1
    assert (out / "manifest.json").exists()
    assert not (out / "history.csv").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--regime", "CE-only", "--alpha", "0.5"],
    ["train", "--regime", "target-only", "--alpha", "0.3"],
    ["train", "--regime", "CLR", "--epsilon", "1.0"],
    ["train", "--regime", "CE-only", "--adv-in-scl"],
    ["train", "--regime", "ACLR", "--no-such-flag"],
    ["train", "--lr", "-1"],
])
def test_usage_errors(bench, argv, capsys):
    assert run([*argv, *data_args(bench)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_file_and_source(bench, tmp_path, capsys):
    assert run(["train", "--target", str(tmp_path / "nope.jsonl")]) == 2
    assert "no such file" in capsys.readouterr().err
    assert run(["train", "--regime", "CLR", *data_args(bench, source=False)]) == 2
    assert "needs --source" in capsys.readouterr().err


def test_bad_data_is_a_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "e", "label": 1, "posts": [{"id": "a", "parent": "a", "t": 0}]}\n')
    assert run(["train", "--regime", "target-only", "--target", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_train_defaults_are_the_published_values():
    args = build_parser().parse_args(["train", "--target", "x"])
    cfg = _train_config(args)
    assert (cfg.lr, cfg.dropout, cfg.tau, cfg.alpha, cfg.epsilon, cfg.layers) == (1e-4, 0.2, 0.1, 0.5, 1.5, 2)
    assert (cfg.batch_source, cfg.batch_target, cfg.hidden_dim, cfg.out_dim) == (32, 32, 512, 128)
    assert cfg.regime == "ACLR"


def test_cv_is_byte_reproducible(bench, tmp_path):
    for name in ("a", "b"):
        assert run(["cv", *data_args(bench), *SMALL, "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "metrics.csv")
    assert [r["fold"] for r in rows] == ["0", "1", "2", "3", "4", "mean", "std"]
    assert all(r["n_train"] == "4" and r["n_test"] == "16" for r in rows[:5])


def test_early_and_export(bench, tmp_path):
    ck = tmp_path / "t"
    assert run(["train", "--regime", "target-only", *data_args(bench, source=False), *SMALL, "--out", str(ck)]) == 0
    common = ["--checkpoint", str(ck / "checkpoint.json"), "--events", str(bench / "target.jsonl"),
              "--emb", str(bench / "target_emb.jsonl")]
    assert run(["early", *common, "--grid", "1,2,all", "--out", str(tmp_path / "e")]) == 0
    rows = read_csv(tmp_path / "e" / "early.csv")
    assert [r["checkpoint"] for r in rows][:2] == ["1", "2"]
    assert list(rows[0]) == ["checkpoint", "acc", "macro_f1", "f1_rumor", "f1_nonrumor", "mean_posts"]
    assert run(["early", *common, "--time-grid", "0,all", "--out", str(tmp_path / "e2")]) == 0
    assert read_csv(tmp_path / "e2" / "early.csv")[0]["mean_posts"] == "1.0"
    assert run(["early", *common, "--grid", "5,2", "--out", str(tmp_path / "e3")]) == 2
    assert run(["export-features", *common, "--out", str(tmp_path / "f")]) == 0
    assert len(read_csv(tmp_path / "f" / "features.csv")) == 20


def test_sweep_epsilon_grid(bench, tmp_path):
    code = run(["sweep", *data_args(bench), *SMALL, "--epsilon", "0.5,1.0,1.5,2.0,2.5", "--seeds", "2",
                "--out", str(tmp_path)])
    assert code == 0
    assert [r["epsilon"] for r in read_csv(tmp_path / "sweep_epsilon.csv")] == ["0.5", "1.0", "1.5", "2.0", "2.5"]
    assert len(read_csv(tmp_path / "sweep_epsilon_runs.csv")) == 10


def test_sweep_needs_one_grid(bench):
    assert run(["sweep", *data_args(bench)]) == 2
    assert run(["sweep", *data_args(bench), "--epsilon", "1", "--alpha", "0.5"]) == 2
    assert run(["sweep", *data_args(bench), "--regime", "CE-only", "--alpha", "0.1,0.5"]) == 2


def test_output_dir_from_environment(bench, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run(["synth", "--n-source", "4", "--n-target", "4"]) == 0
    assert (tmp_path / "synth" / "target.jsonl").exists()


def test_figures_are_rendered(bench, tmp_path):
    pytest.importorskip("matplotlib")
    assert run(["cv", *data_args(bench), *SMALL, "--only-folds", "0,1", "--figures", "--out", str(tmp_path)]) == 0
    png = tmp_path / "metrics.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "aclr", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
