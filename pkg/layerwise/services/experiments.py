"""
Experiment drivers: transferability sweeps, classifier quality curves,
the freeze-bottom control and method comparisons

Every driver fills an ExperimentReport whose grid of (config, seed, metric,
epoch) cells is declared up front. Grid cells are independent jobs; results
are collected by one writer in grid order so reports do not depend on
scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import pandas as pd
from structlog.contextvars import bound_contextvars

from layerwise.core.config import settings
from layerwise.core.errors import ContractError, MissingCellError
from layerwise.core.logging import LoggerMixin, run_context
from layerwise.models.layers import LayerKind, LayerSpec
from layerwise.models.network import LayeredModel, build_model
from layerwise.models.rng import Rng
from layerwise.schemas.common import ReportRecord
from layerwise.schemas.training import TrainConfig
from layerwise.services.datasets import SequenceDataset, SubsetSplit, TaskData
from layerwise.services.topdown import (
    epoch_search,
    freeze_bottom,
    freeze_top,
    greedy_topdown,
    reinit_bottom,
    reinit_layers,
    retrain,
    unfreeze_all,
)
from layerwise.services.training import FitResult, evaluate, fit

Cell = Tuple[str, int, str, Optional[int]]
Measurement = Tuple[str, str, float, Optional[int]]  # (config, metric, value, epoch)


@dataclass
class ExperimentReport:
    experiment: str
    records: List[ReportRecord] = field(default_factory=list)
    grid: Set[Cell] = field(default_factory=set)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def declare(
        self,
        configs: Iterable[str],
        seeds: Iterable[int],
        metrics: Iterable[str],
        epochs: Iterable[Optional[int]] = (None,),
    ) -> None:
        seeds, metrics, epochs = list(seeds), list(metrics), list(epochs)
        for config in configs:
            for seed in seeds:
                for metric in metrics:
                    for epoch in epochs:
                        self.grid.add((config, seed, metric, epoch))

    def add(self, config: str, seed: int, metric: str, value: float, epoch: Optional[int] = None) -> None:
        self.records.append(
            ReportRecord(experiment=self.experiment, config=config, seed=seed, metric=metric, value=value, epoch=epoch)
        )

    def validate(self) -> None:
        """Records must cover the declared grid exactly once"""
        cells = [r.cell for r in self.records]
        duplicates = sorted({c for c in cells if cells.count(c) > 1}, key=str)
        missing = sorted(self.grid - set(cells), key=str)
        undeclared = sorted(set(cells) - self.grid, key=str)
        if missing or undeclared or duplicates:
            raise MissingCellError(
                f"{self.experiment}: {len(missing)} missing, {len(undeclared)} undeclared, "
                f"{len(duplicates)} duplicated cells",
                details={
                    "missing": [list(c) for c in missing[:10]],
                    "undeclared": [list(c) for c in undeclared[:10]],
                    "duplicated": [list(c) for c in duplicates[:10]],
                },
            )

    def to_frame(self) -> pd.DataFrame:
        columns = ["experiment", "config", "seed", "metric", "value", "epoch"]
        return pd.DataFrame([r.model_dump() for r in self.records], columns=columns)

    def summary(self) -> pd.DataFrame:
        """mean/std/count per (experiment, config, metric)"""
        frame = self.to_frame()
        if frame.empty:
            return pd.DataFrame(columns=["experiment", "config", "metric", "mean", "std", "count"])
        grouped = frame.groupby(["experiment", "config", "metric"], sort=False)["value"]
        return grouped.agg(["mean", "std", "count"]).reset_index()

    def mean(self, config: str, metric: str) -> float:
        frame = self.to_frame()
        selected = frame[(frame.config == config) & (frame.metric == metric)]
        if selected.empty:
            raise MissingCellError(f"no records for config={config} metric={metric}")
        return float(selected.value.mean())

    def trend(self, metric: str) -> float:
        """Spearman rank correlation between each config's numeric value and its mean"""
        values = self.metadata.get("config_values")
        if not values:
            raise ContractError(f"{self.experiment}: configs carry no numeric values to correlate")
        frame = self.to_frame()
        means = frame[frame.metric == metric].groupby("config")["value"].mean()
        if len(means) < 2:
            raise ContractError(f"trend needs at least two configs with {metric} records")
        x = pd.Series({config: values[config] for config in means.index})
        return float(x.rank().corr(means.rank()))


class GridRunner(LoggerMixin):
    """Runs independent (config, seed) jobs, optionally on a thread pool"""

    def __init__(self, experiment: str, max_workers: Optional[int] = None):
        self.experiment = experiment
        self.max_workers = max_workers or settings.MAX_WORKERS

    def run(
        self,
        cells: Sequence[Tuple[str, int]],
        job: Callable[[str, int], List[Measurement]],
        report: ExperimentReport,
    ) -> ExperimentReport:
        context = run_context()

        def wrapped(cell: Tuple[str, int]) -> List[Measurement]:
            config, seed = cell
            # pool threads start with an empty context
            with bound_contextvars(**context):
                self.log_info("cell_started", experiment=self.experiment, config=config, seed=seed)
                measurements = job(config, seed)
                self.log_info("cell_completed", experiment=self.experiment, config=config, seed=seed)
            return measurements

        if self.max_workers <= 1:
            results = [wrapped(cell) for cell in cells]
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                results = list(pool.map(wrapped, cells))

        for (_, seed), measurements in zip(cells, results):
            for config, metric, value, epoch in measurements:
                report.add(config, seed, metric, value, epoch)
        report.validate()
        return report


def _seeded(config: TrainConfig, seed: int) -> TrainConfig:
    return config.model_copy(update={"seed": seed})


def _transfer(model: LayeredModel, k: int, train_set: SequenceDataset, dev_set: SequenceDataset, config: TrainConfig, rng: Rng) -> LayeredModel:
    transferred = model.copy()
    unfreeze_all(transferred)
    freeze_top(transferred, k)
    reinit_bottom(transferred, transferred.n_layers - k, rng)
    retrain(transferred, train_set, dev_set, config, rng)
    return transferred


TRANSFER_METRICS = ["source_dev", "source_test", "transferred_dev", "transferred_test"]


def transferability_sweep(
    split: SubsetSplit,
    specs: Sequence[LayerSpec],
    k: int,
    config: TrainConfig,
    seeds: Sequence[int],
    max_workers: Optional[int] = None,
) -> ExperimentReport:
    """Train on each nested subset, then transfer its top-k classifier to the unseen pool"""
    task = split.dev.task
    labels = {f"{fraction:g}": fraction for fraction in sorted(split.subsets)}
    report = ExperimentReport(
        "transfer",
        metadata={"k": k, "seeds": list(seeds), "config_values": labels, "train": config.model_dump(mode="json")},
    )
    report.declare(labels, seeds, TRANSFER_METRICS)

    def job(label: str, seed: int) -> List[Measurement]:
        cfg = _seeded(config, seed)
        model = build_model(specs, seed, task, split.vocab_size)
        fit(model, split.subsets[labels[label]], split.dev, cfg)
        transferred = _transfer(model, k, split.unseen, split.dev, cfg, Rng(seed).child(1))
        return [
            (label, "source_dev", evaluate(model, split.dev, cfg.metric), None),
            (label, "source_test", evaluate(model, split.test, cfg.metric), None),
            (label, "transferred_dev", evaluate(transferred, split.dev, cfg.metric), None),
            (label, "transferred_test", evaluate(transferred, split.test, cfg.metric), None),
        ]

    cells = [(label, seed) for label in labels for seed in seeds]
    return GridRunner("transfer", max_workers).run(cells, job, report)


def classifier_quality_curve(
    fit_result: FitResult,
    k: int,
    unseen: SequenceDataset,
    dev: SequenceDataset,
    config: TrainConfig,
    seeds: Sequence[int],
    max_workers: Optional[int] = None,
) -> ExperimentReport:
    """Transferred dev error of the classifier from every source epoch, plus the source curves"""
    epochs = list(range(1, fit_result.epochs + 1))
    source_seed = fit_result.metadata.seed
    report = ExperimentReport("curve", metadata={"k": k, "seeds": list(seeds), "source_seed": source_seed})
    report.declare(["transferred"], seeds, ["transferred_dev"], epochs)
    report.declare(["source"], [source_seed], ["train_loss", "dev_loss", "dev_error"], epochs)

    for record in fit_result.records:
        report.add("source", source_seed, "train_loss", record.train_loss, record.epoch)
        report.add("source", source_seed, "dev_loss", record.dev_loss, record.epoch)
        report.add("source", source_seed, "dev_error", record.dev_error, record.epoch)

    best_epochs: Dict[int, int] = {}

    def job(config_label: str, seed: int) -> List[Measurement]:
        result = epoch_search(fit_result, k, unseen, dev, _seeded(config, seed), Rng(seed))
        best_epochs[seed] = result.best_epoch
        return [(config_label, "transferred_dev", value, epoch) for epoch, value in zip(epochs, result.curve)]

    GridRunner("curve", max_workers).run([("transferred", seed) for seed in seeds], job, report)
    report.metadata["best_epochs"] = {str(seed): best_epochs[seed] for seed in seeds}
    return report


def interior_minimum_count(report: ExperimentReport, metric: str = "transferred_dev") -> int:
    """Seeds whose curve minimum is neither the first nor the last epoch"""
    frame = report.to_frame()
    frame = frame[frame.metric == metric]
    count = 0
    for _, curve in frame.groupby("seed"):
        curve = curve.sort_values("epoch")
        best = curve.value.to_numpy().argmin()
        if 0 < best < len(curve) - 1:
            count += 1
    return count


def freeze_bottom_control(
    model: LayeredModel,
    train_set: SequenceDataset,
    dev_set: SequenceDataset,
    config: TrainConfig,
    rng: Rng,
) -> Tuple[LayeredModel, float]:
    """Mirror of top-down training: keep layer 0, redraw and retrain everything above it"""
    control = model.copy()
    unfreeze_all(control)
    freeze_bottom(control, 1)
    reinit_layers(control, range(1, control.n_layers), rng)
    fit(control, train_set, dev_set, config, rng)
    return control, evaluate(control, dev_set, config.metric)


HIDDEN_KINDS = {LayerKind.DENSE, LayerKind.TANH_RNN, LayerKind.LSTM}


def with_dropout(specs: Sequence[LayerSpec], rate: float) -> List[LayerSpec]:
    """Insert a dropout layer after every hidden layer"""
    if rate == 0.0:
        return list(specs)
    result: List[LayerSpec] = []
    for spec in specs:
        result.append(spec)
        if spec.kind in HIDDEN_KINDS:
            result.append(LayerSpec(kind=LayerKind.DROPOUT, input_dim=spec.output_dim, output_dim=spec.output_dim, rate=rate))
    return result


def dropout_topdown_recipe(
    data: TaskData,
    specs: Sequence[LayerSpec],
    rate: float,
    config: TrainConfig,
    seed: int,
) -> ExperimentReport:
    """Dropout-regularized joint baseline followed by the greedy cascade"""
    specs = with_dropout(specs, rate)
    cfg = _seeded(config, seed)
    report = ExperimentReport("dropout_topdown", metadata={"rate": rate, "layers": len(specs)})
    report.declare(["baseline", "topdown"], [seed], ["dev", "test"])

    model = build_model(specs, seed, data.dev.task, data.vocab_size)
    fit(model, data.pool, data.dev, cfg)
    report.add("baseline", seed, "dev", evaluate(model, data.dev, cfg.metric))
    report.add("baseline", seed, "test", evaluate(model, data.test, cfg.metric))

    final, trace = greedy_topdown(model, data.pool, data.dev, cfg, Rng(seed))
    report.add("topdown", seed, "dev", evaluate(final, data.dev, cfg.metric))
    report.add("topdown", seed, "test", evaluate(final, data.test, cfg.metric))
    report.metadata["accepted_stages"] = len(trace.accepted)
    report.validate()
    return report


METHODS = ["baseline", "topdown", "freeze_bottom"]


def compare_methods(
    data: TaskData,
    specs: Sequence[LayerSpec],
    config: TrainConfig,
    seeds: Sequence[int],
    max_workers: Optional[int] = None,
) -> ExperimentReport:
    """Joint baseline against greedy top-down and the freeze-bottom control, per seed"""
    report = ExperimentReport("compare", metadata={"seeds": list(seeds)})
    report.declare(METHODS, seeds, ["dev", "test"])

    def run_seed(_: str, seed: int) -> List[Measurement]:
        cfg = _seeded(config, seed)
        baseline = build_model(specs, seed, data.dev.task, data.vocab_size)
        fit(baseline, data.pool, data.dev, cfg)
        topdown, _trace = greedy_topdown(baseline, data.pool, data.dev, cfg, Rng(seed).child(1))
        control, _error = freeze_bottom_control(baseline, data.pool, data.dev, cfg, Rng(seed).child(2))
        models = {"baseline": baseline, "topdown": topdown, "freeze_bottom": control}
        return [
            (method, split, evaluate(models[method], dataset, cfg.metric), None)
            for method in METHODS
            for split, dataset in (("dev", data.dev), ("test", data.test))
        ]

    return GridRunner("compare", max_workers).run([("all", seed) for seed in seeds], run_seed, report)
