"""
Seeded, splittable random streams

Every stream is a numpy Philox-4x64 counter-based generator keyed by
SeedSequence(seed, spawn_key=path + (purpose,)). Philox output and the
SeedSequence hash are specified bit-for-bit by numpy, so a given
(seed, path, purpose) yields the same numbers on every platform.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from layerwise.core.errors import ConfigurationError

MAX_SEED = 2**64 - 1


class Purpose(IntEnum):
    INIT = 0
    DROPOUT = 1
    SHUFFLE = 2
    SPLIT = 3
    DATA = 4


@dataclass(frozen=True)
class Rng:
    seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigurationError(f"seed must be in [0, 2**64), got {self.seed}")
        if any(k < 0 for k in self.path):
            raise ConfigurationError(f"substream keys must be non-negative, got {self.path}")

    def child(self, *keys: int) -> "Rng":
        """Substream addressed by additional keys, e.g. (stage,) or (layer,)"""
        return Rng(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self, purpose: Purpose) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path + (int(purpose),))
        return np.random.Generator(np.random.Philox(sequence))
