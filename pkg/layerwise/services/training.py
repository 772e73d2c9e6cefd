"""
Joint training: minibatch descent with early stopping and per-epoch checkpoints
"""

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from layerwise.core.config import settings
from layerwise.core.errors import ConfigurationError, ContractError, DivergedTrainingError
from layerwise.core.logging import get_struct_logger
from layerwise.engine import ops
from layerwise.engine.tape import Tape, backward
from layerwise.models.layers import Layer, LayerSpec, Mode
from layerwise.models.network import LayeredModel, ModelMetadata, ModelState, flat_targets, forward
from layerwise.models.rng import Purpose, Rng
from layerwise.schemas.common import Metric, TaskKind
from layerwise.schemas.training import EpochRecord, TrainConfig
from layerwise.services.datasets import SequenceDataset
from layerwise.services.metrics import character_error_rate, error_rate, perplexity
from layerwise.services.optim import OptimizerState, clip_global_norm, optimizer_step

logger = get_struct_logger(__name__)


class EarlyStopping:
    """Stop once the watched value has not strictly improved for `patience` epochs.

    With patience 0 the first non-improving epoch stops training. A disabled
    stopper still tracks the best epoch but never asks to stop.
    """

    def __init__(self, patience: int, enabled: bool = True):
        self.patience = patience
        self.enabled = enabled
        self.counter = 0
        self.best_value: Optional[float] = None
        self.best_epoch = 0

    def check(self, epoch: int, value: float) -> bool:
        """Record one epoch; True means stop now"""
        if self.best_value is None or value < self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.counter = 0
            return False

        self.counter += 1
        return self.enabled and self.counter >= self.patience


@dataclass
class FitResult:
    records: List[EpochRecord]
    checkpoints: List[ModelState]
    best_epoch: int
    specs: List[LayerSpec]
    metadata: ModelMetadata
    frozen_flags: List[bool] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.records)

    @property
    def best_record(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    def model_at(self, epoch: int) -> LayeredModel:
        """Rebuild the snapshot taken at the end of `epoch` (1-based)"""
        if not 1 <= epoch <= len(self.checkpoints):
            raise ContractError(f"epoch {epoch} outside 1..{len(self.checkpoints)}")
        state = self.checkpoints[epoch - 1]
        flags = self.frozen_flags or [False] * len(self.specs)
        layers = [
            Layer(spec, {k: v.copy() for k, v in params.items()}, frozen)
            for spec, params, frozen in zip(self.specs, state, flags)
        ]
        metadata = self.metadata.model_copy(
            update={
                "trained_epochs": self.metadata.trained_epochs - self.best_epoch + epoch,
                "best_dev_error": self.records[epoch - 1].dev_error,
            }
        )
        return LayeredModel(layers, metadata)


class Evaluation(NamedTuple):
    loss: float
    value: float


def resolve_metric(model: LayeredModel, metric: Optional[Metric]) -> Metric:
    if metric is not None:
        return Metric(metric)
    return Metric.PERPLEXITY if model.metadata.task == TaskKind.CHAR_LM else Metric.ERROR_RATE


def evaluate_split(model: LayeredModel, dataset: SequenceDataset, metric: Optional[Metric] = None) -> Evaluation:
    """Mean cross-entropy and the task metric in eval mode"""
    metric = resolve_metric(model, metric)
    if metric == Metric.CER and model.metadata.task != TaskKind.CHAR_LM:
        raise ConfigurationError("cer is only defined for char_lm models")
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")

    token_losses = []
    predictions = []
    for inputs, targets in dataset.batches(settings.EVAL_BATCH_SIZE):
        logits = forward(model, inputs, Mode.EVAL)
        flat = flat_targets(targets)
        token_losses.append(ops.token_cross_entropy(logits, flat))
        predictions.append(np.argmax(logits, axis=-1))
    losses = np.concatenate(token_losses)
    predicted = np.concatenate(predictions)
    loss = float(np.mean(losses))

    if metric == Metric.PERPLEXITY:
        value = perplexity(losses)
    elif metric == Metric.ERROR_RATE:
        value = error_rate(flat_targets(dataset.targets), predicted)
    else:
        hyps = predicted.reshape(dataset.targets.shape)
        value = character_error_rate(list(dataset.targets), list(hyps))
    return Evaluation(loss, value)


def evaluate(model: LayeredModel, dataset: SequenceDataset, metric: Optional[Metric] = None) -> float:
    return evaluate_split(model, dataset, metric).value


def _train_epoch(
    model: LayeredModel,
    train_set: SequenceDataset,
    config: TrainConfig,
    epoch: int,
    epoch_rng: Rng,
    opt_state: OptimizerState,
) -> Tuple[float, OptimizerState]:
    shuffle = epoch_rng.generator(Purpose.SHUFFLE) if config.shuffle else None
    dropout = epoch_rng.generator(Purpose.DROPOUT)
    total, count = 0.0, 0

    for batch_index, (inputs, targets) in enumerate(train_set.batches(config.batch_size, shuffle), start=1):
        with Tape() as tape:
            logits = forward(model, inputs, Mode.TRAIN, dropout, tape)
            loss = ops.softmax_cross_entropy(logits, flat_targets(targets))
        value = loss.item()
        if not math.isfinite(value):
            raise DivergedTrainingError(epoch, batch_index, value)

        rows = targets.size
        total += value * rows
        count += rows

        trainable = model.trainable_parameters()
        if not trainable:
            continue
        grads = backward(tape, loss)
        if config.clip_norm is not None:
            grads = clip_global_norm(grads, config.clip_norm)
        updated, opt_state = optimizer_step(trainable, grads, opt_state, config.optimizer)
        for key, array in updated.items():
            model.set_parameter(key, array)

    return total / count, opt_state


def fit(
    model: LayeredModel,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Optional[Rng] = None,
) -> FitResult:
    """Train unfrozen parameters; the model is left at its best-dev epoch.

    Shuffle and dropout streams for epoch p come from rng.child(p), with
    rng defaulting to Rng(config.seed). Optimizer state starts fresh.
    """
    model.validate()
    if len(train_set) == 0:
        raise ContractError("cannot fit on an empty training set")
    metric = resolve_metric(model, config.metric)
    rng = rng or Rng(config.seed)
    stopper = EarlyStopping(config.patience, enabled=config.early_stopping)
    opt_state = OptimizerState()
    records: List[EpochRecord] = []
    checkpoints: List[ModelState] = []

    for epoch in range(1, config.max_epochs + 1):
        train_loss, opt_state = _train_epoch(model, train_set, config, epoch, rng.child(epoch), opt_state)
        dev = evaluate_split(model, dev_set, metric)
        record = EpochRecord(epoch=epoch, train_loss=train_loss, dev_loss=dev.loss, dev_error=dev.value)
        records.append(record)
        checkpoints.append(model.state())
        logger.info(
            "epoch_completed",
            epoch=epoch,
            train_loss=train_loss,
            dev_loss=dev.loss,
            dev_error=dev.value,
            metric=metric.value,
        )
        if stopper.check(epoch, dev.value):
            logger.info("early_stopping_triggered", epoch=epoch, best_epoch=stopper.best_epoch, patience=config.patience)
            break

    best = stopper.best_epoch
    model.load_state(checkpoints[best - 1])
    model.metadata.trained_epochs += best
    model.metadata.best_dev_error = records[best - 1].dev_error
    model.metadata.metric = metric.value
    logger.info("best_epoch_restored", best_epoch=best, dev_error=records[best - 1].dev_error)

    return FitResult(
        records=records,
        checkpoints=checkpoints,
        best_epoch=best,
        specs=model.specs,
        metadata=model.metadata.model_copy(),
        frozen_flags=model.frozen_flags,
    )
