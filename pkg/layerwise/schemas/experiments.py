"""
Dataset and experiment schemas
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from layerwise.schemas.common import TaskKind

DEFAULT_SUBSET_FRACTIONS = [0.05, 0.1, 0.2, 0.4, 0.8]


class SequenceRule(str, Enum):
    FIRST_LAST_MATCH = "first_last_match"  # label 1 iff first token == last token
    FIRST_TOKEN = "first_token"  # label is the first token


class GeneratorParams(BaseModel):
    """Synthetic long-range sequence classification"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seq_len: int = Field(default=12, ge=2)
    vocab_size: int = Field(default=8, ge=2)
    num_samples: PositiveInt = 1000
    rule: SequenceRule = SequenceRule.FIRST_LAST_MATCH

    @property
    def num_classes(self) -> int:
        return 2 if self.rule == SequenceRule.FIRST_LAST_MATCH else self.vocab_size


class DatasetSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: TaskKind
    source: Optional[str] = None
    generator: Optional[GeneratorParams] = None
    window: PositiveInt = 32
    dev_fraction: float = Field(default=0.1, gt=0, lt=1)
    test_fraction: float = Field(default=0.1, gt=0, lt=1)
    subset_fractions: List[float] = Field(default_factory=lambda: list(DEFAULT_SUBSET_FRACTIONS))
    unseen_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("subset_fractions")
    @classmethod
    def check_fractions(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one subset fraction is required")
        if any(not 0 < f <= 1 for f in v):
            raise ValueError(f"subset fractions must lie in (0, 1], got {v}")
        if v != sorted(set(v)):
            raise ValueError(f"subset fractions must be strictly increasing, got {v}")
        return v

    @model_validator(mode="after")
    def check_layout(self) -> "DatasetSpec":
        if self.dev_fraction + self.test_fraction >= 1:
            raise ValueError("dev_fraction + test_fraction must be below 1")
        if max(self.subset_fractions) + self.unseen_fraction > 1 + 1e-9:
            raise ValueError("largest subset fraction + unseen_fraction cannot exceed 1")
        if self.kind == TaskKind.CHAR_LM and self.generator is not None:
            raise ValueError("char_lm datasets read a corpus; generator params do not apply")
        if self.kind == TaskKind.SEQ_CLASSIFY and self.source is not None:
            raise ValueError("seq_classify datasets are generated; source does not apply")
        return self

    @property
    def generator_params(self) -> GeneratorParams:
        return self.generator or GeneratorParams()
