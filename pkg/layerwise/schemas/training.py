"""
Training and top-down schemas
"""

import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from layerwise.schemas.common import Metric


class OptimizerName(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: OptimizerName = OptimizerName.ADAM
    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class TrainConfig(BaseModel):
    """Joint-training hyperparameters; retraining stages reuse them unchanged"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    batch_size: PositiveInt = 16
    max_epochs: PositiveInt = 30
    patience: int = Field(default=5, ge=0)
    early_stopping: bool = True
    clip_norm: Optional[float] = Field(default=None, gt=0)
    seed: int = Field(default=0, ge=0)
    shuffle: bool = True
    metric: Optional[Metric] = None

    @model_validator(mode="after")
    def check_patience(self) -> "TrainConfig":
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) cannot exceed max_epochs ({self.max_epochs})")
        return self


class EpochRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epoch: int = Field(ge=1)
    train_loss: float
    dev_loss: float
    dev_error: float

    @field_validator("train_loss", "dev_loss", "dev_error")
    @classmethod
    def finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"epoch records must be finite, got {v}")
        return v


class ReinitMode(str, Enum):
    FRESH = "fresh"  # new draws from the stage substream
    ORIGINAL = "original"  # the baseline's own initial weights


class StageRecord(BaseModel):
    """One freeze/reinit/retrain stage of a cascade"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    stage: int = Field(ge=1)
    frozen_top: int = Field(ge=1)
    dev_error_before: float
    dev_error_after: float
    accepted: bool
    epochs_trained: int = Field(ge=1)
    best_epoch: int = Field(ge=1)

    @model_validator(mode="after")
    def check_acceptance(self) -> "StageRecord":
        if self.accepted != (self.dev_error_after <= self.dev_error_before):
            raise ValueError("accepted must equal dev_error_after <= dev_error_before")
        return self
