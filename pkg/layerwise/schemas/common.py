"""
Common schemas used across the toolkit
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

REPORT_FORMAT = "layerwise-report"
REPORT_VERSION = 1
RECORD_FIELDS = ["experiment", "config", "seed", "metric", "value", "epoch"]


class TaskKind(str, Enum):
    CHAR_LM = "char_lm"
    SEQ_CLASSIFY = "seq_classify"


class Metric(str, Enum):
    ERROR_RATE = "error_rate"
    PERPLEXITY = "perplexity"
    CER = "cer"


class ReportRecord(BaseModel):
    """One measured value for a (config, seed, metric) cell"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment: str
    config: str
    seed: int
    metric: str
    value: float
    epoch: Optional[int] = Field(default=None, ge=1)

    @field_validator("value")
    @classmethod
    def finite_value(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"report values must be finite, got {v}")
        return v

    @property
    def cell(self) -> tuple:
        return (self.config, self.seed, self.metric, self.epoch)


class ReportHeader(BaseModel):
    """First line of every report file"""

    model_config = ConfigDict(extra="forbid")

    format: str = REPORT_FORMAT
    version: int = REPORT_VERSION
    kind: str
    experiment: str
    fields: List[str] = Field(default_factory=lambda: list(RECORD_FIELDS))
    metadata: dict = Field(default_factory=dict)
