"""
End-to-end tests for the command-line surface
"""

import json

import pytest

from layerwise.cli import main
from layerwise.core.config import settings
from layerwise.storage.checkpoint import load_checkpoint
from layerwise.storage.reports import read_report


@pytest.fixture
def run_config(tmp_path):
    raw = {
        "experiment": "cli",
        "seed": 2,
        "dataset": {
            "kind": "seq_classify",
            "generator": {"seq_len": 4, "vocab_size": 4, "num_samples": 120},
            "dev_fraction": 0.2,
            "test_fraction": 0.2,
            "subset_fractions": [0.25, 0.5],
            "unseen_fraction": 0.5,
            "seed": 3,
        },
        "model": [
            {"kind": "embedding", "input_dim": 4, "output_dim": 4},
            {"kind": "tanh_rnn", "input_dim": 4, "output_dim": 6},
            {"kind": "dense", "input_dim": 6, "output_dim": 6, "activation": "tanh"},
            {"kind": "output", "input_dim": 6, "output_dim": 2},
        ],
        "train": {"optimizer": {"lr": 0.05}, "batch_size": 8, "max_epochs": 2, "patience": 1},
        "grid": {"seeds": [0], "k": 2},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def cli(*argv):
    return main(["--log-level", "WARNING", *[str(a) for a in argv]])


def error_line(captured) -> str:
    """The one-line error; structured log events may precede it on stderr"""
    return [line for line in captured.err.splitlines() if line.startswith("error: ")][-1]


@pytest.fixture
def base_run(run_config, tmp_path, capsys):
    out = tmp_path / "base"
    assert cli("train", "--config", run_config, "--out", out) == 0
    capsys.readouterr()
    return out


class TestTrain:
    def test_outputs(self, run_config, tmp_path, capsys):
        out = tmp_path / "train"
        assert cli("train", "--config", run_config, "--out", out) == 0
        printed = capsys.readouterr().out.strip()
        assert printed.startswith("best_epoch=")

        header, records = read_report(out / "records.jsonl")
        epochs = max(r.epoch for r in records)
        assert header.kind == "fit_records"
        for epoch in range(1, epochs + 1):
            assert (out / f"epoch_{epoch:03d}.ckpt").exists()
        assert (out / "best.ckpt").exists()
        assert (out / "records.summary.csv").exists()
        assert json.loads((out / "config.json").read_text())["seed"] == 2

    def test_same_seed_same_checkpoint(self, run_config, tmp_path):
        for name in ("a", "b"):
            assert cli("train", "--config", run_config, "--out", tmp_path / name) == 0
        assert (tmp_path / "a" / "best.ckpt").read_bytes() == (tmp_path / "b" / "best.ckpt").read_bytes()

    def test_flag_overrides(self, run_config, tmp_path):
        out = tmp_path / "one"
        assert cli("train", "--config", run_config, "--out", out, "--max-epochs", 1, "--patience", 1, "--seed", 7) == 0
        _, records = read_report(out / "records.jsonl")
        assert {r.epoch for r in records} == {1}
        assert {r.seed for r in records} == {7}

    def test_default_output_dir(self, run_config, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "runs"))
        assert cli("train", "--config", run_config, "--max-epochs", 1, "--patience", 1) == 0
        assert (tmp_path / "runs" / "cli" / "train" / "best.ckpt").exists()


class TestCheckpointCommands:
    def test_eval_matches_best_record(self, run_config, base_run, capsys):
        assert cli("eval", "--config", run_config, "--model", base_run / "best.ckpt") == 0
        value = float(capsys.readouterr().out.strip())
        _, metadata = load_checkpoint(base_run / "best.ckpt")
        assert value == metadata.best_dev_error

    def test_eval_test_split(self, run_config, base_run, capsys):
        assert cli("eval", "--config", run_config, "--model", base_run / "best.ckpt", "--split", "test") == 0
        assert 0.0 <= float(capsys.readouterr().out.strip()) <= 1.0

    def test_topdown(self, run_config, base_run, tmp_path, capsys):
        out = tmp_path / "td"
        assert cli("topdown", "--config", run_config, "--model", base_run / "best.ckpt", "--out", out) == 0
        assert "accepted_stages=" in capsys.readouterr().out
        header, records = read_report(out / "trace.jsonl")
        assert header.kind == "search_trace"
        assert records[0].config == "baseline"
        load_checkpoint(out / "final.ckpt")

    def test_search_given_partitions(self, run_config, base_run, tmp_path, capsys):
        out = tmp_path / "search"
        argv = ["search", "--config", run_config, "--model", base_run / "best.ckpt", "--out", out]
        assert cli(*argv, "--partition", "2,2", "--partition", "1,1,2") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [line.split("\t")[0] for line in lines] == ["2-2", "1-1-2"]
        _, records = read_report(out / "search.jsonl")
        assert {r.config for r in records} == {"baseline", "2-2", "1-1-2"}

    def test_control(self, run_config, base_run, tmp_path):
        out = tmp_path / "control"
        assert cli("control", "--config", run_config, "--model", base_run / "best.ckpt", "--out", out) == 0
        control, _ = load_checkpoint(out / "control.ckpt")
        assert control.frozen_flags == [True, False, False, False]

    def test_graft(self, run_config, base_run, tmp_path):
        out = tmp_path / "graft"
        ckpt = base_run / "best.ckpt"
        assert cli("graft", "--config", run_config, "--source", ckpt, "--target", ckpt, "--out", out, "-k", 1) == 0
        grafted, _ = load_checkpoint(out / "grafted.ckpt")
        assert grafted.frozen_flags == [False, False, False, True]


class TestExperimentCommands:
    def test_transfer(self, run_config, tmp_path, capsys):
        out = tmp_path / "transfer"
        assert cli("transfer", "--config", run_config, "--out", out) == 0
        assert capsys.readouterr().out.startswith("spearman_transferred_dev=")
        _, records = read_report(out / "transfer.jsonl")
        assert len(records) == 2 * 4

    def test_curve(self, run_config, tmp_path, capsys):
        out = tmp_path / "curve"
        assert cli("curve", "--config", run_config, "--out", out, "--max-epochs", 3) == 0
        assert capsys.readouterr().out.startswith("interior_minima=")
        _, records = read_report(out / "curve.jsonl")
        # the source run has early stopping disabled
        assert max(r.epoch for r in records if r.config == "source") == 3

    def test_compare_with_dropout_recipe(self, run_config, tmp_path, capsys):
        out = tmp_path / "compare"
        assert cli("compare", "--config", run_config, "--out", out, "--set", "dropout_rate=0.2") == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert [line.split("\t")[0] for line in printed] == ["baseline", "topdown", "freeze_bottom"]
        assert (out / "compare.jsonl").exists()
        assert (out / "dropout_topdown.jsonl").exists()


class TestErrors:
    def test_usage_error(self, capsys):
        assert cli("bogus") == 2
        assert error_line(capsys.readouterr()).startswith("error: USAGE_ERROR")

    def test_help(self, capsys):
        assert cli("--help") == 0

    def test_version(self, capsys):
        assert cli("--version") == 0
        assert capsys.readouterr().out.strip() == f"{settings.APP_NAME} {settings.APP_VERSION}"

    def test_missing_config(self, tmp_path, capsys):
        assert cli("train", "--config", tmp_path / "absent.json", "--out", tmp_path / "o") == 1
        assert error_line(capsys.readouterr()).startswith("error: IO_ERROR")

    def test_invalid_config_value(self, run_config, tmp_path, capsys):
        assert cli("train", "--config", run_config, "--out", tmp_path / "o", "--set", "train.batch_size=0") == 1
        assert error_line(capsys.readouterr()).startswith("error: CONFIGURATION_ERROR")

    def test_mismatched_head(self, run_config, tmp_path, capsys):
        code = cli("train", "--config", run_config, "--out", tmp_path / "o", "--set", "dataset.generator.rule=first_token")
        assert code == 1
        assert "output head" in error_line(capsys.readouterr())

    def test_single_part_schedule(self, run_config, base_run, tmp_path, capsys):
        argv = ["search", "--config", run_config, "--model", base_run / "best.ckpt", "--out", tmp_path / "s"]
        assert cli(*argv, "--partition", "4") == 1
        assert error_line(capsys.readouterr()).startswith("error: CONTRACT_VIOLATION")

    def test_corrupt_checkpoint(self, run_config, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert cli("eval", "--config", run_config, "--model", bad) == 1
        assert error_line(capsys.readouterr()).startswith("error: CHECKPOINT_FORMAT")
