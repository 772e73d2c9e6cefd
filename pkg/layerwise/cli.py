"""Command-line entry point.

Usage:
  python -m layerwise train    --config configs/toy_seq_classify.json --out runs/base
  python -m layerwise topdown  --config configs/toy_seq_classify.json --model runs/base/best.ckpt --out runs/td
  python -m layerwise search   --config ... --model runs/base/best.ckpt --out runs/search [--partition 1,2,1]
  python -m layerwise transfer --config ... --out runs/transfer
  python -m layerwise curve    --config ... --out runs/curve
  python -m layerwise control  --config ... --model runs/base/best.ckpt --out runs/control
  python -m layerwise eval     --config ... --model runs/base/best.ckpt [--split dev|test] [--metric cer]
  python -m layerwise graft    --config ... --source a.ckpt --target b.ckpt --out runs/graft [-k 2]
  python -m layerwise compare  --config ... --out runs/compare

Every run-level flag (--seed, --max-epochs, --patience, --lr, --set key=value)
overrides the config file. Commands that read a checkpoint never train a
fresh baseline on their own.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from layerwise.core.config import settings
from layerwise.core.errors import ConfigurationError, UsageError, error_handler
from layerwise.core.logging import bind_run_context, get_struct_logger, setup_logging
from layerwise.models.network import LayeredModel, build_model
from layerwise.models.rng import Rng
from layerwise.schemas.common import Metric
from layerwise.services.datasets import TaskData, make_split, prepare_task
from layerwise.services.experiments import (
    ExperimentReport,
    classifier_quality_curve,
    compare_methods,
    dropout_topdown_recipe,
    freeze_bottom_control,
    interior_minimum_count,
    transferability_sweep,
)
from layerwise.services.topdown import (
    Partition,
    enumerate_compositions,
    graft_classifier,
    greedy_topdown,
    run_partitions,
)
from layerwise.services.training import evaluate, fit
from layerwise.storage.checkpoint import load_checkpoint, save_checkpoint
from layerwise.storage.reports import emit_report
from layerwise.storage.run_config import RunConfig, echo_config, load_run_config

logger = get_struct_logger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _run_flags(parser: argparse.ArgumentParser, out: bool = True) -> None:
    parser.add_argument("--config", required=True, help="run configuration (JSON)")
    if out:
        parser.add_argument("--out", default=None, help="output directory (default: OUTPUT_DIR/<experiment>/<command>)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--max-epochs", type=int, dest="max_epochs")
    parser.add_argument("--patience", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--set", action="append", default=[], dest="assignments", metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layerwise", description="Top-down layer-wise training toolkit")
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    parser.add_argument("--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="joint training with per-epoch checkpoints")
    _run_flags(p)

    p = sub.add_parser("topdown", help="greedy top-down cascade from a trained checkpoint")
    _run_flags(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("search", help="run freeze schedules (compositions of the layer count)")
    _run_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--partition", action="append", default=[], help="e.g. 1,2,1 (repeatable)")

    p = sub.add_parser("transfer", help="classifier transferability sweep over nested subsets")
    _run_flags(p)

    p = sub.add_parser("curve", help="transferred error of the classifier from every source epoch")
    _run_flags(p)

    p = sub.add_parser("control", help="freeze the lowest layer and retrain the rest")
    _run_flags(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("eval", help="print a metric for a checkpoint")
    _run_flags(p, out=False)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["dev", "test"], default="dev")
    p.add_argument("--metric", choices=[m.value for m in Metric], default=None)

    p = sub.add_parser("graft", help="freeze a source model's classifier onto a target and retrain")
    _run_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("-k", type=int, default=None, help="classifier depth (default: topdown.k)")

    p = sub.add_parser("compare", help="joint baseline vs top-down vs freeze-bottom over seeds")
    _run_flags(p)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(
        args.config,
        args.assignments,
        seed=args.seed,
        max_epochs=args.max_epochs,
        patience=args.patience,
        lr=args.lr,
    )
    bind_run_context(experiment=config.experiment, seed=config.seed)
    return config


def _out_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(settings.OUTPUT_DIR) / config.experiment / args.command
    echo_config(config, out)
    return out


def _check_fits(specs_top_dim: int, data: TaskData) -> None:
    if specs_top_dim != data.num_classes:
        raise ConfigurationError(
            f"output head has {specs_top_dim} classes, the dataset has {data.num_classes}"
        )


def _load_model(path: str, data: TaskData) -> LayeredModel:
    model, _ = load_checkpoint(path)
    if model.metadata.vocab_size is not None and model.metadata.vocab_size != data.vocab_size:
        raise ConfigurationError(
            f"{path} was trained with vocabulary {model.metadata.vocab_size}, dataset has {data.vocab_size}"
        )
    _check_fits(model.specs[-1].output_dim, data)
    return model


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    _check_fits(config.model[-1].output_dim, data)
    out = _out_dir(args, config)

    model = build_model(config.model, config.seed, config.dataset.kind, data.vocab_size)
    result = fit(model, data.pool, data.dev, config.train_config())
    for epoch in range(1, result.epochs + 1):
        save_checkpoint(result.model_at(epoch), None, out / f"epoch_{epoch:03d}.ckpt")
    save_checkpoint(model, None, out / "best.ckpt")
    emit_report(result, out / "records.jsonl")
    print(f"best_epoch={result.best_epoch} dev_error={result.best_record.dev_error!r}")
    return 0


def cmd_topdown(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    model = _load_model(args.model, data)
    out = _out_dir(args, config)

    final, trace = greedy_topdown(
        model, data.pool, data.dev, config.train_config(), Rng(config.seed), config.topdown.reinit
    )
    save_checkpoint(final, None, out / "final.ckpt")
    emit_report(trace, out / "trace.jsonl")
    print(
        f"baseline={trace.baseline_error!r} final={trace.final_error!r} "
        f"accepted_stages={len(trace.accepted)}"
    )
    return 0


def _partitions(args: argparse.Namespace, config: RunConfig, n: int) -> List[Partition]:
    if args.partition:
        try:
            raw = [[int(p) for p in text.split(",")] for text in args.partition]
        except ValueError as exc:
            raise UsageError(f"--partition expects comma-separated integers: {exc}") from exc
    elif config.topdown.partitions:
        raw = config.topdown.partitions
    else:
        return enumerate_compositions(n)
    return [Partition(parts=tuple(parts)) for parts in raw]


def cmd_search(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    model = _load_model(args.model, data)
    out = _out_dir(args, config)
    cfg = config.train_config()

    partitions = _partitions(args, config, model.n_layers)
    results = run_partitions(
        model, partitions, data.pool, data.dev, cfg, Rng(config.seed), config.topdown.reinit
    )
    report = ExperimentReport("search", metadata={"partitions": [list(p.parts) for p in partitions]})
    report.declare(["baseline"], [config.seed], ["final_dev"])
    report.add("baseline", config.seed, "final_dev", evaluate(model, data.dev, cfg.metric))
    for partition, (_, errors) in zip(partitions, results):
        metrics = [f"stage_{s}_dev" for s in range(1, len(errors) + 1)] + ["final_dev"]
        report.declare([partition.label()], [config.seed], metrics)
        for metric, value in zip(metrics, errors + [errors[-1]]):
            report.add(partition.label(), config.seed, metric, value)
    report.validate()
    emit_report(report, out / "search.jsonl")
    for partition, (_, errors) in zip(partitions, results):
        print(f"{partition.label()}\t{errors[-1]!r}")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    config = _config(args)
    split = make_split(config.dataset, config.train.batch_size)
    out = _out_dir(args, config)
    report = transferability_sweep(split, config.model, config.grid.k, config.train_config(), config.grid.seeds)
    emit_report(report, out / "transfer.jsonl")
    print(f"spearman_transferred_dev={report.trend('transferred_dev')!r}")
    return 0


def cmd_curve(args: argparse.Namespace) -> int:
    config = _config(args)
    split = make_split(config.dataset, config.train.batch_size)
    out = _out_dir(args, config)

    fraction = config.grid.fraction or max(split.subsets)
    if fraction not in split.subsets:
        raise ConfigurationError(f"grid.fraction {fraction} is not one of {sorted(split.subsets)}")
    # the source run is deliberately over-long: early stopping off
    source_cfg = config.train_config().model_copy(update={"early_stopping": False})
    source = build_model(config.model, config.seed, config.dataset.kind, split.vocab_size)
    result = fit(source, split.subsets[fraction], split.dev, source_cfg)

    report = classifier_quality_curve(
        result, config.grid.k, split.unseen, split.dev, config.train_config(), config.grid.seeds
    )
    emit_report(report, out / "curve.jsonl")
    print(f"interior_minima={interior_minimum_count(report)}/{len(config.grid.seeds)}")
    return 0


def cmd_control(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    model = _load_model(args.model, data)
    out = _out_dir(args, config)
    cfg = config.train_config()

    baseline_error = evaluate(model, data.dev, cfg.metric)
    control, error = freeze_bottom_control(model, data.pool, data.dev, cfg, Rng(config.seed))
    save_checkpoint(control, None, out / "control.ckpt")
    report = ExperimentReport("control")
    report.declare(["baseline", "freeze_bottom"], [config.seed], ["dev"])
    report.add("baseline", config.seed, "dev", baseline_error)
    report.add("freeze_bottom", config.seed, "dev", error)
    report.validate()
    emit_report(report, out / "control.jsonl")
    print(repr(error))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    model = _load_model(args.model, data)
    dataset = data.dev if args.split == "dev" else data.test
    metric = Metric(args.metric) if args.metric else config.train.metric
    print(repr(evaluate(model, dataset, metric)))
    return 0


def cmd_graft(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    source = _load_model(args.source, data)
    target = _load_model(args.target, data)
    out = _out_dir(args, config)
    k = args.k or config.topdown.k

    grafted, result = graft_classifier(source, target, k, data.pool, data.dev, config.train_config(), Rng(config.seed))
    save_checkpoint(grafted, None, out / "grafted.ckpt")
    emit_report(result, out / "records.jsonl")
    print(repr(result.best_record.dev_error))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _config(args)
    data = prepare_task(config.dataset)
    _check_fits(config.model[-1].output_dim, data)
    out = _out_dir(args, config)
    cfg = config.train_config()

    report = compare_methods(data, config.model, cfg, config.grid.seeds)
    emit_report(report, out / "compare.jsonl")
    if config.dropout_rate > 0:
        recipe = dropout_topdown_recipe(data, config.model, config.dropout_rate, cfg, config.seed)
        emit_report(recipe, out / "dropout_topdown.jsonl")
    for method in ("baseline", "topdown", "freeze_bottom"):
        print(f"{method}\t{report.mean(method, 'dev')!r}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "topdown": cmd_topdown,
    "search": cmd_search,
    "transfer": cmd_transfer,
    "curve": cmd_curve,
    "control": cmd_control,
    "eval": cmd_eval,
    "graft": cmd_graft,
    "compare": cmd_compare,
}


def run_command(argv: Sequence[str]) -> int:
    """Run one subcommand; returns the process exit code"""
    command: Optional[str] = None
    try:
        args = build_parser().parse_args(list(argv))
        command = args.command
        setup_logging(args.log_level, command=command)
        logger.info("command_started", command=command, environment=settings.ENVIRONMENT)
        return COMMANDS[command](args)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except Exception as exc:
        code, message = error_handler.handle_exception(exc, command)
        print(message, file=sys.stderr)
        return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)
