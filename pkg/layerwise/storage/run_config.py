"""
Run configuration files

A run is described by one JSON document validated into `RunConfig`.
Unknown keys are rejected. Command-line flags override file values, and
the effective configuration is echoed as config.json into the run's
output directory.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from layerwise.core.config import settings
from layerwise.core.errors import ConfigurationError
from layerwise.core.logging import get_struct_logger
from layerwise.models.layers import LayerSpec
from layerwise.schemas.experiments import DatasetSpec
from layerwise.schemas.training import ReinitMode, TrainConfig

logger = get_struct_logger(__name__)

CONFIG_ECHO = "config.json"

PathLike = Union[str, Path]


class TopdownOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(default=2, ge=1)
    reinit: ReinitMode = ReinitMode.FRESH
    partitions: Optional[List[List[int]]] = None


class GridOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    k: int = Field(default=2, ge=1)
    fraction: Optional[float] = Field(default=None, gt=0, le=1)

    @field_validator("seeds")
    @classmethod
    def non_empty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one seed is required")
        return v


class RunConfig(BaseModel):
    """Everything a command needs; `seed` is the master seed"""

    model_config = ConfigDict(extra="forbid")

    experiment: str = "run"
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    dataset: DatasetSpec
    model: List[LayerSpec]
    train: TrainConfig = Field(default_factory=TrainConfig)
    topdown: TopdownOptions = Field(default_factory=TopdownOptions)
    grid: GridOptions = Field(default_factory=GridOptions)
    dropout_rate: float = Field(default=0.0, ge=0, lt=1)

    def train_config(self) -> TrainConfig:
        """Training hyperparameters seeded by the master seed"""
        return self.train.model_copy(update={"seed": self.seed})


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(raw: Dict[str, Any], dotted: str, value: Any) -> None:
    """Assign raw['a']['b'] = value for dotted key 'a.b', creating parents"""
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigurationError(f"invalid override key {dotted!r}")
    node = raw
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"override {dotted!r}: {key!r} is not a section")
        node = child
    node[keys[-1]] = value


def apply_overrides(
    raw: Dict[str, Any],
    assignments: Sequence[str] = (),
    seed: Optional[int] = None,
    max_epochs: Optional[int] = None,
    patience: Optional[int] = None,
    lr: Optional[float] = None,
) -> Dict[str, Any]:
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigurationError(f"override {assignment!r} must look like key.path=value")
        key, text = assignment.split("=", 1)
        set_dotted(raw, key.strip(), _parse_value(text.strip()))
    if seed is not None:
        raw["seed"] = seed
    if max_epochs is not None:
        set_dotted(raw, "train.max_epochs", max_epochs)
    if patience is not None:
        set_dotted(raw, "train.patience", patience)
    if lr is not None:
        set_dotted(raw, "train.optimizer.lr", lr)
    return raw


def load_run_config(path: PathLike, assignments: Sequence[str] = (), **flags: Any) -> RunConfig:
    """Read, override and validate a run configuration"""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})", details={"path": str(path)}) from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    raw = apply_overrides(raw, assignments, **flags)
    config = RunConfig.model_validate(raw)
    dataset = config.dataset
    if dataset.source is not None and not Path(dataset.source).is_absolute():
        # corpus paths are relative to the config file
        resolved = (path.parent / dataset.source).resolve()
        if resolved.exists():
            config = config.model_copy(update={"dataset": dataset.model_copy(update={"source": str(resolved)})})
    return config


def echo_config(config: RunConfig, out_dir: PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / CONFIG_ECHO
    target.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.debug("config_echoed", path=str(target))
    return target
