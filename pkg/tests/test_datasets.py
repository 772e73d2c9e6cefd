"""
Tests for corpora, windows, synthetic tasks and nested splits
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from layerwise.core.errors import ConfigurationError, CorpusReadError
from layerwise.models import Rng
from layerwise.schemas.common import TaskKind
from layerwise.schemas.experiments import DatasetSpec, GeneratorParams, SequenceRule
from layerwise.services.datasets import (
    SequenceDataset,
    Vocabulary,
    generate_sequence_task,
    load_char_corpus,
    make_split,
    minimum_pool_size,
    prepare_task,
    split_pool,
    windows,
)


class TestVocabulary:
    def test_ids_and_unknown(self):
        vocab = Vocabulary.from_text("banana")
        assert vocab.chars == ["a", "b", "n"]
        assert len(vocab) == 3 and vocab.id_space == 4
        assert vocab.encode("bax").tolist() == [2, 1, 0]

    def test_decode(self):
        vocab = Vocabulary.from_text("abc")
        assert vocab.decode([3, 1, 2]) == "cab"


class TestCharCorpus:
    def test_positional_split(self, tmp_path):
        path = tmp_path / "text.txt"
        path.write_text("abcdefghij", encoding="utf-8")
        corpus = load_char_corpus(str(path), dev_fraction=0.2, test_fraction=0.2)
        assert corpus.vocab.chars == list("abcdef")
        assert corpus.vocab.decode(corpus.train) == "abcdef"
        # dev and test characters never seen in training map to unknown
        assert corpus.dev.tolist() == [0, 0]
        assert corpus.test.tolist() == [0, 0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusReadError):
            load_char_corpus(str(tmp_path / "absent.txt"))

    def test_invalid_utf8(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_bytes(b"\xff\xfe\xfa")
        with pytest.raises(CorpusReadError):
            load_char_corpus(str(path))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_char_corpus(str(path))


class TestWindows:
    def test_next_character_targets(self):
        data = windows(np.arange(10), 3)
        assert len(data) == 3
        assert data.inputs[0].tolist() == [0, 1, 2]
        assert data.targets[0].tolist() == [1, 2, 3]
        assert data.targets[2].tolist() == [7, 8, 9]
        assert data.task == TaskKind.CHAR_LM

    def test_too_short(self):
        assert len(windows(np.arange(10), 9)) == 1
        with pytest.raises(ConfigurationError):
            windows(np.arange(10), 10, "dev text")


class TestSequenceTask:
    def test_first_last_match(self):
        params = GeneratorParams(seq_len=6, vocab_size=5, num_samples=200)
        data = generate_sequence_task(params, Rng(1))
        assert data.inputs.shape == (200, 6)
        assert int(data.targets.sum()) == 100
        assert np.array_equal(data.targets, (data.inputs[:, 0] == data.inputs[:, -1]).astype(np.int64))

    def test_first_token(self):
        params = GeneratorParams(seq_len=4, vocab_size=3, num_samples=50, rule=SequenceRule.FIRST_TOKEN)
        data = generate_sequence_task(params, Rng(1))
        assert np.array_equal(data.targets, data.inputs[:, 0])
        assert params.num_classes == 3

    def test_seeded(self):
        params = GeneratorParams(num_samples=20)
        a, b = generate_sequence_task(params, Rng(7)), generate_sequence_task(params, Rng(7))
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)


class TestDatasetSpec:
    def test_fractions_increasing(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="seq_classify", subset_fractions=[0.2, 0.1])

    def test_subset_and_unseen_fit(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="seq_classify", subset_fractions=[0.5, 0.9], unseen_fraction=0.2)

    def test_dev_and_test_leave_room(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="seq_classify", dev_fraction=0.5, test_fraction=0.5)

    def test_kind_specific_fields(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="char_lm", generator=GeneratorParams())
        with pytest.raises(ValidationError):
            DatasetSpec(kind="seq_classify", source="corpus.txt")


class TestSplits:
    def test_prepare_task_sizes(self, tiny_task):
        assert len(tiny_task.dev) == 24
        assert len(tiny_task.test) == 24
        assert len(tiny_task.pool) == 72
        assert tiny_task.num_classes == 2

    def test_char_lm_task(self, tmp_path):
        path = tmp_path / "corpus.txt"
        path.write_text("the cat sat on the mat. " * 20, encoding="utf-8")
        task = prepare_task(DatasetSpec(kind="char_lm", source=str(path), window=8))
        assert task.vocab_size == task.num_classes == task.vocab.id_space
        assert task.pool.inputs.shape[1] == 8

    def test_nested_subsets_and_disjoint_unseen(self, tiny_dataset_spec, tiny_task):
        subsets, unseen = split_pool(tiny_task.pool, tiny_dataset_spec)
        small, large = subsets[0.25], subsets[0.5]
        assert len(small) == 18 and len(large) == 36 and len(unseen) == 36
        assert np.array_equal(large[:18], small)
        assert not set(large.tolist()) & set(unseen.tolist())

    def test_split_is_seeded(self, tiny_dataset_spec):
        a, b = make_split(tiny_dataset_spec), make_split(tiny_dataset_spec)
        assert np.array_equal(a.unseen_indices, b.unseen_indices)
        assert np.array_equal(a.subsets[0.5].inputs, b.subsets[0.5].inputs)

    def test_minimum_pool_size(self, tiny_dataset_spec):
        assert minimum_pool_size(tiny_dataset_spec, 16) == 64

    def test_pool_too_small(self, tiny_dataset_spec, tiny_task):
        with pytest.raises(ConfigurationError) as exc:
            split_pool(tiny_task.pool, tiny_dataset_spec, batch_size=32)
        assert exc.value.details["required"] == 128

    @staticmethod
    def _pool(n: int) -> SequenceDataset:
        return SequenceDataset(np.arange(2 * n).reshape(n, 2), np.zeros(n, dtype=np.int64), TaskKind.SEQ_CLASSIFY)

    def test_thousand_sample_layout(self):
        spec = DatasetSpec(kind="seq_classify", subset_fractions=[0.05, 0.1, 0.2, 0.4, 0.8], unseen_fraction=0.2)
        subsets, unseen = split_pool(self._pool(1000), spec)
        assert [len(subsets[f]) for f in spec.subset_fractions] == [50, 100, 200, 400, 800]
        assert len(unseen) == 200
        assert sorted(subsets[0.8].tolist() + unseen.tolist()) == list(range(1000))

    @pytest.mark.parametrize("fractions,unseen_fraction", [([0.1, 0.3, 0.6], 0.3), ([0.05, 0.1, 0.2, 0.4, 0.8], 0.2), ([0.5], 0.5)])
    def test_nesting_holds_for_any_pool_size(self, fractions, unseen_fraction):
        sizes = np.random.default_rng(21).integers(20, 600, size=25)
        for seed, n in enumerate(sizes.tolist()):
            spec = DatasetSpec(kind="seq_classify", subset_fractions=fractions, unseen_fraction=unseen_fraction, seed=seed)
            subsets, unseen = split_pool(self._pool(n), spec)
            held_out = set(unseen.tolist())
            assert len(held_out) == len(unseen) == math.floor(unseen_fraction * n + 1e-9)
            previous = np.array([], dtype=np.int64)
            for f in fractions:
                idx = subsets[f]
                assert len(idx) == math.floor(f * n + 1e-9)
                assert len(set(idx.tolist())) == len(idx)
                assert np.array_equal(idx[: len(previous)], previous)
                assert not set(idx.tolist()) & held_out
                assert idx.min() >= 0 and idx.max() < n
                previous = idx
