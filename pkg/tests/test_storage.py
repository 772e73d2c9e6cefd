"""
Tests for checkpoints, report files and run configuration
"""

import json
import struct

import numpy as np
import pytest
from pydantic import ValidationError

from layerwise.core.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
)
from layerwise.models import Rng, build_model
from layerwise.schemas.common import REPORT_FORMAT, ReportRecord, TaskKind
from layerwise.services.experiments import ExperimentReport
from layerwise.services.topdown import freeze_top, greedy_topdown
from layerwise.services.training import evaluate
from layerwise.storage.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from layerwise.storage.reports import emit_report, read_report, read_summary, summary_path, trace_report
from layerwise.storage.run_config import apply_overrides, echo_config, load_run_config, set_dotted


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, trained_model, tiny_task, tmp_path):
        freeze_top(trained_model, 2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_model, None, path)
        loaded, metadata = load_checkpoint(path)
        assert loaded.same_parameters(trained_model)
        assert loaded.specs == trained_model.specs
        assert loaded.frozen_flags == [False, False, True, True]
        assert metadata == trained_model.metadata
        assert evaluate(loaded, tiny_task.dev) == evaluate(trained_model, tiny_task.dev)
        assert not (tmp_path / "model.ckpt.tmp").exists()

    def test_header_layout(self, seq_specs, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(seq_specs, 0), None, path)
        data = path.read_bytes()
        assert data[:4] == MAGIC
        version, meta_length = struct.unpack("<II", data[4:12])
        assert version == 1
        header = json.loads(data[12:12 + meta_length])
        assert header["manifest"][0] == ["0.weight", [4, 4]]

    def test_explicit_metadata(self, seq_specs, tmp_path):
        model = build_model(seq_specs, 0)
        override = model.metadata.model_copy(update={"trained_epochs": 7})
        save_checkpoint(model, override, tmp_path / "m.ckpt")
        assert load_checkpoint(tmp_path / "m.ckpt")[1].trained_epochs == 7

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_unknown_version(self, seq_specs, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(seq_specs, 0), None, path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_truncated_payload(self, seq_specs, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(seq_specs, 0), None, path)
        full = path.read_bytes()
        path.write_bytes(full[:-1])
        with pytest.raises(CheckpointTruncatedError) as exc:
            load_checkpoint(path)
        assert exc.value.expected == len(full)
        assert exc.value.actual == len(full) - 1

    def test_truncated_metadata(self, seq_specs, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(seq_specs, 0), None, path)
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)

    def test_trailing_bytes(self, seq_specs, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(seq_specs, 0), None, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


class TestReports:
    def test_fit_records(self, fit_result, tmp_path):
        path = emit_report(fit_result, tmp_path / "records.jsonl")
        header, records = read_report(path)
        assert header.format == REPORT_FORMAT
        assert header.kind == "fit_records"
        assert len(records) == 3 * fit_result.epochs
        assert {r.metric for r in records} == {"train_loss", "dev_loss", "dev_error"}
        dev = [r.value for r in records if r.metric == "dev_error"]
        assert dev == [rec.dev_error for rec in fit_result.records]

    def test_summary_csv(self, tmp_path):
        report = ExperimentReport("demo")
        report.add("a", 0, "dev", 0.25)
        report.add("a", 1, "dev", 0.75)
        path = emit_report(report, tmp_path / "demo.jsonl")
        assert summary_path(path).name == "demo.summary.csv"
        summary = read_summary(path)
        assert list(summary.columns) == ["experiment", "config", "metric", "mean", "std", "count"]
        assert summary.loc[0, "mean"] == pytest.approx(0.5)

    def test_empty_report(self, tmp_path):
        path = emit_report(ExperimentReport("empty"), tmp_path / "empty.jsonl")
        assert len(path.read_text(encoding="utf-8").splitlines()) == 1
        header, records = read_report(path)
        assert header.experiment == "empty"
        assert records == []
        summary = read_summary(path)
        assert summary.empty
        assert list(summary.columns) == ["experiment", "config", "metric", "mean", "std", "count"]

    def test_trace_report(self, trained_model, tiny_task, fast_config, tmp_path):
        _, trace = greedy_topdown(trained_model, tiny_task.pool, tiny_task.dev, fast_config, Rng(1))
        report = trace_report(trace, seed=5)
        configs = [r.config for r in report.records]
        assert configs[0] == "baseline" and configs[-1] == "final"
        assert sum(1 for r in report.records if r.metric == "accepted") == len(trace.stages)
        header, _ = read_report(emit_report(trace, tmp_path / "trace.jsonl"))
        assert header.kind == "search_trace"
        assert len(header.metadata["stages"]) == len(trace.stages)

    def test_malformed_report(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "experiment"}\n', encoding="utf-8")
        with pytest.raises(ConfigurationError):
            read_report(path)

    def test_records_must_be_finite(self):
        with pytest.raises(ValidationError):
            ReportRecord(experiment="e", config="c", seed=0, metric="m", value=float("nan"))


def _write_config(directory, **overrides):
    raw = {
        "experiment": "demo",
        "seed": 3,
        "dataset": {"kind": "seq_classify", "generator": {"seq_len": 4, "vocab_size": 4, "num_samples": 100}},
        "model": [
            {"kind": "embedding", "input_dim": 4, "output_dim": 4},
            {"kind": "tanh_rnn", "input_dim": 4, "output_dim": 4},
            {"kind": "output", "input_dim": 4, "output_dim": 2},
        ],
        "train": {"max_epochs": 4, "patience": 2},
    }
    raw.update(overrides)
    path = directory / "run.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


class TestRunConfig:
    def test_load_and_seed_train_config(self, tmp_path):
        config = load_run_config(_write_config(tmp_path))
        assert config.experiment == "demo"
        assert config.train_config().seed == 3
        assert config.topdown.k == 2

    def test_flag_overrides(self, tmp_path):
        config = load_run_config(
            _write_config(tmp_path), ["topdown.k=1", "train.optimizer.name=sgd"], seed=9, max_epochs=6, lr=0.5
        )
        assert config.seed == 9
        assert config.topdown.k == 1
        assert config.train.max_epochs == 6
        assert config.train.optimizer.name.value == "sgd"
        assert config.train.optimizer.lr == 0.5

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_run_config(_write_config(tmp_path, extra_section={}))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_run_config(path)

    def test_relative_corpus_path(self, tmp_path):
        (tmp_path / "corpus.txt").write_text("abc abc abc\n", encoding="utf-8")
        path = _write_config(
            tmp_path,
            dataset={"kind": "char_lm", "source": "corpus.txt", "window": 4},
        )
        config = load_run_config(path)
        assert config.dataset.source == str((tmp_path / "corpus.txt").resolve())

    def test_set_dotted(self):
        raw = {"train": {"optimizer": {"lr": 0.1}}}
        set_dotted(raw, "train.optimizer.lr", 0.2)
        set_dotted(raw, "grid.seeds", [1, 2])
        assert raw == {"train": {"optimizer": {"lr": 0.2}}, "grid": {"seeds": [1, 2]}}
        with pytest.raises(ConfigurationError):
            set_dotted(raw, "train..lr", 1)
        with pytest.raises(ConfigurationError):
            set_dotted(raw, "train.optimizer.lr.x", 1)

    def test_assignment_needs_equals(self):
        with pytest.raises(ConfigurationError):
            apply_overrides({}, ["train.max_epochs"])

    def test_string_values_stay_strings(self):
        assert apply_overrides({}, ["experiment=sweep"]) == {"experiment": "sweep"}

    def test_echo(self, tmp_path):
        config = load_run_config(_write_config(tmp_path))
        echoed = echo_config(config, tmp_path / "out")
        assert json.loads(echoed.read_text(encoding="utf-8"))["seed"] == 3


def test_model_metadata_survives_checkpoint(seq_specs, tmp_path):
    model = build_model(seq_specs, 4, TaskKind.SEQ_CLASSIFY, 4)
    model.layers[0].params["weight"] = np.full((4, 4), 0.1)
    save_checkpoint(model, None, tmp_path / "m.ckpt")
    loaded, metadata = load_checkpoint(tmp_path / "m.ckpt")
    assert metadata.task == TaskKind.SEQ_CLASSIFY and metadata.vocab_size == 4 and metadata.seed == 4
    assert loaded.layers[0].params["weight"].tobytes() == np.full((4, 4), 0.1).tobytes()
