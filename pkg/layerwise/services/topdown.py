"""
Top-down layer-wise training

The classifier (top layers) of a trained model is frozen while the feature
extractor below it is reinitialized and retrained. The greedy cascade grows
the frozen block one layer per stage and stops at the first stage whose dev
error is worse than the current model's.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import accumulate
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from layerwise.core.config import settings
from layerwise.core.errors import ContractError
from layerwise.core.logging import get_struct_logger
from layerwise.models.layers import init_layer
from layerwise.models.network import LayeredModel
from layerwise.models.rng import Rng
from layerwise.schemas.training import ReinitMode, StageRecord, TrainConfig
from layerwise.services.datasets import SequenceDataset
from layerwise.services.training import FitResult, evaluate, fit

logger = get_struct_logger(__name__)


# -- primitives -----------------------------------------------------------

def freeze_top(model: LayeredModel, k: int) -> None:
    """Freeze exactly the top k layers; parameters are untouched"""
    n = model.n_layers
    if not 1 <= k <= n - 1:
        raise ContractError(f"freeze_top: k must be in 1..{n - 1}, got {k}")
    for index, layer in enumerate(model.layers):
        layer.frozen = index >= n - k


def freeze_bottom(model: LayeredModel, k: int) -> None:
    """Freeze exactly the bottom k layers (the freeze-lowest control)"""
    n = model.n_layers
    if not 1 <= k <= n - 1:
        raise ContractError(f"freeze_bottom: k must be in 1..{n - 1}, got {k}")
    for index, layer in enumerate(model.layers):
        layer.frozen = index < k


def unfreeze_all(model: LayeredModel) -> None:
    for layer in model.layers:
        layer.frozen = False


def reinit_layers(model: LayeredModel, indices: Sequence[int], rng: Rng) -> None:
    """Redraw the listed layers, layer i from rng.child(i)"""
    for index in indices:
        layer = model.layers[index]
        if layer.frozen:
            raise ContractError(f"cannot reinitialize frozen layer {index}")
        layer.params = init_layer(layer.spec, rng.child(index))


def reinit_bottom(model: LayeredModel, m: int, rng: Rng) -> None:
    """Redraw layers 0..m−1; with Rng(seed) this reproduces build_model(specs, seed) there"""
    n = model.n_layers
    if not 1 <= m <= n - 1:
        raise ContractError(f"reinit_bottom: m must be in 1..{n - 1}, got {m}")
    reinit_layers(model, range(m), rng)


def _reinit_source(model: LayeredModel, stage_rng: Rng, mode: ReinitMode) -> Rng:
    return Rng(model.metadata.seed) if mode == ReinitMode.ORIGINAL else stage_rng


def retrain(
    model: LayeredModel,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Optional[Rng] = None,
) -> Tuple[LayeredModel, FitResult]:
    """Fit the unfrozen bottom under a frozen top block"""
    if model.frozen_top < 1 or model.frozen_top != sum(model.frozen_flags):
        raise ContractError(f"retrain needs one frozen block at the top, got {model.frozen_flags}")
    result = fit(model, train_set, dev_set, config, rng)
    return model, result


def _stage(
    model: LayeredModel,
    frozen_top: int,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    stage_rng: Rng,
    reinit: ReinitMode,
) -> Tuple[LayeredModel, FitResult]:
    candidate = model.copy()
    unfreeze_all(candidate)
    freeze_top(candidate, frozen_top)
    reinit_bottom(candidate, candidate.n_layers - frozen_top, _reinit_source(model, stage_rng, reinit))
    return retrain(candidate, train_set, dev_set, config, stage_rng)


# -- greedy cascade -------------------------------------------------------

@dataclass
class SearchTrace:
    baseline_error: float
    stages: List[StageRecord]
    model: LayeredModel
    final_error: float
    metric: str
    fits: List[FitResult] = field(default_factory=list, repr=False)

    @property
    def accepted(self) -> List[StageRecord]:
        return [s for s in self.stages if s.accepted]


def greedy_topdown(
    model: LayeredModel,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
    reinit: ReinitMode = ReinitMode.FRESH,
) -> Tuple[LayeredModel, SearchTrace]:
    """Greedy top-down cascade over a trained model.

    Stage i freezes the top i layers of the current model, redraws the
    remaining n−i from rng.child(i) and retrains them. A stage whose dev
    error exceeds the current one ends the search; ties are accepted.
    """
    n = model.n_layers
    if n < 2:
        raise ContractError("top-down training needs at least two layers")
    if model.metadata.trained_epochs < 1:
        raise ContractError("greedy_topdown needs a trained model; run fit first")
    model.validate()

    current = model.copy()
    error = evaluate(current, dev_set, config.metric)
    baseline = error
    stages: List[StageRecord] = []
    fits: List[FitResult] = []

    for i in range(1, n):
        logger.info("stage_started", stage=i, frozen_top=i, dev_error=error)
        candidate, result = _stage(current, i, train_set, dev_set, config, rng.child(i), reinit)
        candidate_error = evaluate(candidate, dev_set, config.metric)
        accepted = candidate_error <= error
        stages.append(
            StageRecord(
                stage=i,
                frozen_top=i,
                dev_error_before=error,
                dev_error_after=candidate_error,
                accepted=accepted,
                epochs_trained=result.epochs,
                best_epoch=result.best_epoch,
            )
        )
        fits.append(result)
        if not accepted:
            logger.info("stage_rejected", stage=i, dev_error=candidate_error, kept=error)
            break
        logger.info("stage_accepted", stage=i, dev_error=candidate_error, previous=error)
        current, error = candidate, candidate_error

    trace = SearchTrace(
        baseline_error=baseline,
        stages=stages,
        model=current,
        final_error=error,
        metric=current.metadata.metric or "",
        fits=fits,
    )
    return current, trace


# -- schedules ------------------------------------------------------------

class Partition(BaseModel):
    """Ordered composition of the layer count; part j is frozen at stage j"""

    model_config = ConfigDict(frozen=True)

    parts: Tuple[int, ...]

    @field_validator("parts")
    @classmethod
    def positive_parts(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(v) < 2:
            raise ContractError(f"a schedule needs at least two parts, got {v}")
        if any(p < 1 for p in v):
            raise ContractError(f"parts must be positive, got {v}")
        return v

    @property
    def n(self) -> int:
        return sum(self.parts)

    def frozen_tops(self) -> List[int]:
        """Cumulative frozen-top size for each stage"""
        return list(accumulate(self.parts[:-1]))

    def label(self) -> str:
        return "-".join(str(p) for p in self.parts)


def enumerate_compositions(n: int) -> List[Partition]:
    """All compositions of n with at least two parts, in lexicographic order"""
    if n < 2:
        raise ContractError(f"compositions need n >= 2, got {n}")

    def compose(remaining: int) -> List[Tuple[int, ...]]:
        if remaining == 0:
            return [()]
        return [(first,) + rest for first in range(1, remaining + 1) for rest in compose(remaining - first)]

    return [Partition(parts=parts) for parts in compose(n) if len(parts) >= 2]


def run_partition(
    base: LayeredModel,
    partition: Partition,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
    reinit: ReinitMode = ReinitMode.FRESH,
) -> Tuple[LayeredModel, List[float]]:
    """Run every stage of a schedule unconditionally; stage s uses rng.child(s)"""
    if partition.n != base.n_layers:
        raise ContractError(f"partition {partition.parts} does not sum to {base.n_layers} layers")
    current = base.copy()
    errors: List[float] = []
    for stage, frozen_top in enumerate(partition.frozen_tops(), start=1):
        current, _ = _stage(current, frozen_top, train_set, dev_set, config, rng.child(stage), reinit)
        errors.append(evaluate(current, dev_set, config.metric))
    logger.info("partition_completed", partition=partition.label(), stage_errors=errors)
    return current, errors


def run_partitions(
    base: LayeredModel,
    partitions: Sequence[Partition],
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
    reinit: ReinitMode = ReinitMode.FRESH,
    max_workers: Optional[int] = None,
) -> List[Tuple[LayeredModel, List[float]]]:
    """Independent schedules from the same base model, results in input order"""
    workers = max_workers or settings.MAX_WORKERS

    def job(partition: Partition):
        return run_partition(base, partition, train_set, dev_set, config, rng, reinit)

    if workers <= 1:
        return [job(p) for p in partitions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, partitions))


# -- epoch search and grafting -------------------------------------------

@dataclass
class EpochSearchResult:
    curve: List[float]
    best_epoch: int

    @property
    def has_interior_minimum(self) -> bool:
        return 1 < self.best_epoch < len(self.curve)


def epoch_search(
    fit_result: FitResult,
    k: int,
    transfer_train: SequenceDataset,
    transfer_dev: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
) -> EpochSearchResult:
    """Transferred dev error of the top-k classifier taken from every epoch snapshot"""
    curve: List[float] = []
    for epoch in range(1, fit_result.epochs + 1):
        snapshot = fit_result.model_at(epoch)
        unfreeze_all(snapshot)
        freeze_top(snapshot, k)
        epoch_rng = rng.child(epoch)
        reinit_bottom(snapshot, snapshot.n_layers - k, epoch_rng)
        retrain(snapshot, transfer_train, transfer_dev, config, epoch_rng)
        curve.append(evaluate(snapshot, transfer_dev, config.metric))
        logger.debug("epoch_searched", epoch=epoch, transferred_error=curve[-1])
    best = min(range(len(curve)), key=lambda i: (curve[i], i)) + 1
    return EpochSearchResult(curve=curve, best_epoch=best)


def graft_classifier(
    source: LayeredModel,
    target: LayeredModel,
    k: int,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
) -> Tuple[LayeredModel, FitResult]:
    """Freeze the source's top-k classifier onto the target and retrain the target's bottom"""
    if source.n_layers != target.n_layers:
        raise ContractError(f"source has {source.n_layers} layers, target has {target.n_layers}")
    n = target.n_layers
    if not 1 <= k <= n - 1:
        raise ContractError(f"graft: k must be in 1..{n - 1}, got {k}")
    for index in range(n - k, n):
        if source.layers[index].spec != target.layers[index].spec:
            raise ContractError(
                f"layer {index} differs: source {source.layers[index].spec.describe()}, "
                f"target {target.layers[index].spec.describe()}"
            )
    grafted = target.copy()
    unfreeze_all(grafted)
    for index in range(n - k, n):
        grafted.layers[index] = source.layers[index].copy()
    freeze_top(grafted, k)
    reinit_bottom(grafted, n - k, rng)
    return retrain(grafted, train_set, dev_set, config, rng)
