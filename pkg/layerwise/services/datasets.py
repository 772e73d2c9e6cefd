"""
Datasets: character corpora, synthetic sequence tasks and nested subset splits
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from layerwise.core.config import settings
from layerwise.core.errors import ConfigurationError, ContractError, CorpusReadError
from layerwise.core.logging import get_struct_logger
from layerwise.models.rng import Purpose, Rng
from layerwise.schemas.common import TaskKind
from layerwise.schemas.experiments import DatasetSpec, GeneratorParams, SequenceRule

logger = get_struct_logger(__name__)

UNKNOWN_ID = 0
FRACTION_SLACK = 1e-9  # keeps floor(0.05 * 1000) at 50 despite binary rounding


@dataclass
class SequenceDataset:
    """Integer inputs [N×T] with targets [N×T] (char_lm) or [N] (seq_classify)"""

    inputs: np.ndarray
    targets: np.ndarray
    task: TaskKind

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.targets) != len(self.inputs):
            raise ContractError(
                f"dataset inputs {self.inputs.shape} and targets {self.targets.shape} do not align"
            )

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, indices: Sequence[int]) -> "SequenceDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return SequenceDataset(self.inputs[idx], self.targets[idx], self.task)

    def batches(
        self,
        batch_size: int,
        generator: Optional[np.random.Generator] = None,
    ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Minibatches in order, or in a seeded permutation when a generator is given"""
        if batch_size <= 0:
            raise ContractError(f"batch_size must be positive, got {batch_size}")
        order = generator.permutation(len(self)) if generator is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.targets[idx]


@dataclass
class Vocabulary:
    """Characters seen in training text; id 0 is reserved for unknown characters"""

    chars: List[str]
    index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {ch: i + 1 for i, ch in enumerate(self.chars)}

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls(sorted(set(text)))

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def id_space(self) -> int:
        return len(self.chars) + 1

    def encode(self, text: str) -> np.ndarray:
        return np.fromiter((self.index.get(ch, UNKNOWN_ID) for ch in text), dtype=np.int64, count=len(text))

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.chars[i - 1] if i > 0 else "�" for i in ids)


@dataclass
class CharCorpus:
    train: np.ndarray
    dev: np.ndarray
    test: np.ndarray
    vocab: Vocabulary


def load_char_corpus(
    path: str,
    vocab: Optional[Vocabulary] = None,
    dev_fraction: float = 0.0,
    test_fraction: float = 0.0,
) -> CharCorpus:
    """Tokenize a UTF-8 file by character.

    The text is split positionally (train prefix, then dev, then test) and
    the vocabulary comes from the training prefix only.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusReadError(f"cannot read corpus {path}: {exc}", details={"path": str(path)}) from exc
    if not text:
        raise ConfigurationError(f"corpus {path} is empty", details={"path": str(path)})
    if not 0 <= dev_fraction < 1 or not 0 <= test_fraction < 1 or dev_fraction + test_fraction >= 1:
        raise ConfigurationError(f"invalid corpus split dev={dev_fraction} test={test_fraction}")

    n = len(text)
    n_dev = int(math.floor(dev_fraction * n + FRACTION_SLACK))
    n_test = int(math.floor(test_fraction * n + FRACTION_SLACK))
    n_train = n - n_dev - n_test
    train_text = text[:n_train]
    dev_text = text[n_train:n_train + n_dev]
    test_text = text[n_train + n_dev:]

    vocab = vocab or Vocabulary.from_text(train_text)
    logger.debug("corpus_loaded", path=str(path), characters=n, vocab_size=len(vocab))
    return CharCorpus(vocab.encode(train_text), vocab.encode(dev_text), vocab.encode(test_text), vocab)


def windows(ids: np.ndarray, window: int, name: str = "text") -> SequenceDataset:
    """Non-overlapping next-character windows: inputs ids[t..t+w), targets ids[t+1..t+w]"""
    count = (len(ids) - 1) // window
    if count < 1:
        raise ConfigurationError(
            f"{name} has {len(ids)} characters, a window of {window} needs at least {window + 1}"
        )
    inputs = np.stack([ids[i * window:(i + 1) * window] for i in range(count)])
    targets = np.stack([ids[i * window + 1:(i + 1) * window + 1] for i in range(count)])
    return SequenceDataset(inputs, targets, TaskKind.CHAR_LM)


def generate_sequence_task(params: GeneratorParams, rng: Rng) -> SequenceDataset:
    """Synthetic classification whose label depends on the first token.

    first_last_match: label 1 iff the last token repeats the first; classes
    are balanced by alternating labels before shuffling.
    first_token: label is the first token itself.
    """
    generator = rng.generator(Purpose.DATA)
    n, length, vocab = params.num_samples, params.seq_len, params.vocab_size
    inputs = generator.integers(0, vocab, size=(n, length), dtype=np.int64)

    if params.rule == SequenceRule.FIRST_TOKEN:
        labels = inputs[:, 0].copy()
    else:
        labels = generator.permutation(np.arange(n, dtype=np.int64) % 2)
        first = inputs[:, 0]
        # a shift in [1, vocab) never maps a token onto itself
        shift = generator.integers(1, vocab, size=n, dtype=np.int64)
        inputs[:, -1] = np.where(labels == 1, first, (first + shift) % vocab)
    return SequenceDataset(inputs, labels, TaskKind.SEQ_CLASSIFY)


@dataclass
class TaskData:
    """Training pool plus dev and test sets for one dataset spec"""

    pool: SequenceDataset
    dev: SequenceDataset
    test: SequenceDataset
    vocab_size: int
    num_classes: int
    vocab: Optional[Vocabulary] = None


def prepare_task(spec: DatasetSpec) -> TaskData:
    if spec.kind == TaskKind.CHAR_LM:
        source = spec.source or settings.DEFAULT_CORPUS
        if source is None:
            raise ConfigurationError("char_lm datasets need a source corpus path")
        corpus = load_char_corpus(source, None, spec.dev_fraction, spec.test_fraction)
        return TaskData(
            pool=windows(corpus.train, spec.window, "training text"),
            dev=windows(corpus.dev, spec.window, "dev text"),
            test=windows(corpus.test, spec.window, "test text"),
            vocab_size=corpus.vocab.id_space,
            num_classes=corpus.vocab.id_space,
            vocab=corpus.vocab,
        )

    params = spec.generator_params
    data = generate_sequence_task(params, Rng(spec.seed))
    n = len(data)
    n_dev = int(math.floor(spec.dev_fraction * n + FRACTION_SLACK))
    n_test = int(math.floor(spec.test_fraction * n + FRACTION_SLACK))
    if n_dev < 1 or n_test < 1 or n - n_dev - n_test < 1:
        raise ConfigurationError(f"{n} samples cannot fill dev/train/test splits")
    order = Rng(spec.seed).generator(Purpose.SPLIT).permutation(n)
    return TaskData(
        pool=data.subset(order[n_dev + n_test:]),
        dev=data.subset(order[:n_dev]),
        test=data.subset(order[n_dev:n_dev + n_test]),
        vocab_size=params.vocab_size,
        num_classes=params.num_classes,
    )


@dataclass
class SubsetSplit:
    """Nested training subsets keyed by fraction plus a disjoint unseen pool"""

    subsets: Dict[float, SequenceDataset]
    unseen: SequenceDataset
    dev: SequenceDataset
    test: SequenceDataset
    vocab_size: int
    num_classes: int
    subset_indices: Dict[float, np.ndarray]
    unseen_indices: np.ndarray
    vocab: Optional[Vocabulary] = None


def share(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + FRACTION_SLACK))


def minimum_pool_size(spec: DatasetSpec, batch_size: int = 1) -> int:
    """Smallest pool whose smallest subset and unseen share hold a full batch"""
    smallest = min(min(spec.subset_fractions), spec.unseen_fraction)
    n = max(1, math.ceil(batch_size / smallest) - 1)
    while share(min(spec.subset_fractions), n) < batch_size or share(spec.unseen_fraction, n) < batch_size:
        n += 1
    return n


def split_pool(pool: SequenceDataset, spec: DatasetSpec, batch_size: int = 1) -> Tuple[Dict[float, np.ndarray], np.ndarray]:
    n = len(pool)
    required = minimum_pool_size(spec, batch_size)
    if n < required:
        raise ConfigurationError(
            f"training pool has {n} samples, these fractions need at least {required}",
            details={"pool": n, "required": required},
        )
    order = Rng(spec.seed).child(1).generator(Purpose.SPLIT).permutation(n)
    unseen = order[n - share(spec.unseen_fraction, n):]
    subsets = {f: order[:share(f, n)] for f in spec.subset_fractions}
    return subsets, unseen


def make_split(spec: DatasetSpec, batch_size: int = 1) -> SubsetSplit:
    """Seeded permutation of the pool: nested prefixes as subsets, the tail as unseen data"""
    task = prepare_task(spec)
    subset_indices, unseen_indices = split_pool(task.pool, spec, batch_size)
    logger.info(
        "split_created",
        pool=len(task.pool),
        subsets={str(f): len(idx) for f, idx in subset_indices.items()},
        unseen=len(unseen_indices),
    )
    return SubsetSplit(
        subsets={f: task.pool.subset(idx) for f, idx in subset_indices.items()},
        unseen=task.pool.subset(unseen_indices),
        dev=task.dev,
        test=task.test,
        vocab_size=task.vocab_size,
        num_classes=task.num_classes,
        subset_indices=subset_indices,
        unseen_indices=unseen_indices,
        vocab=task.vocab,
    )
