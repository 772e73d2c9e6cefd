"""
Report files: newline-delimited JSON records plus a summary CSV

The first line is a header naming the format, version, kind and record
fields; every following line is one ReportRecord. `<stem>.summary.csv`
beside it holds mean/std/count per (experiment, config, metric).
"""

import json
from pathlib import Path
from typing import List, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from layerwise.core.errors import ConfigurationError, ReportWriteError
from layerwise.core.logging import get_struct_logger
from layerwise.schemas.common import REPORT_FORMAT, ReportHeader, ReportRecord
from layerwise.services.experiments import ExperimentReport
from layerwise.services.topdown import SearchTrace
from layerwise.services.training import FitResult

logger = get_struct_logger(__name__)

Reportable = Union[ExperimentReport, SearchTrace, FitResult]
PathLike = Union[str, Path]


def trace_report(trace: SearchTrace, seed: int = 0) -> ExperimentReport:
    report = ExperimentReport(
        "topdown",
        metadata={
            "metric": trace.metric,
            "stages": [stage.model_dump(mode="json") for stage in trace.stages],
        },
    )
    report.add("baseline", seed, "dev_error", trace.baseline_error)
    for stage in trace.stages:
        config = f"stage_{stage.stage}"
        report.add(config, seed, "frozen_top", float(stage.frozen_top))
        report.add(config, seed, "dev_error_before", stage.dev_error_before)
        report.add(config, seed, "dev_error_after", stage.dev_error_after)
        report.add(config, seed, "accepted", 1.0 if stage.accepted else 0.0)
        report.add(config, seed, "epochs_trained", float(stage.epochs_trained))
        report.add(config, seed, "best_epoch", float(stage.best_epoch))
    report.add("final", seed, "dev_error", trace.final_error)
    return report


def fit_report(result: FitResult) -> ExperimentReport:
    seed = result.metadata.seed
    report = ExperimentReport(
        "train",
        metadata={"best_epoch": result.best_epoch, "metric": result.metadata.metric},
    )
    for record in result.records:
        report.add("joint", seed, "train_loss", record.train_loss, record.epoch)
        report.add("joint", seed, "dev_loss", record.dev_loss, record.epoch)
        report.add("joint", seed, "dev_error", record.dev_error, record.epoch)
    return report


def _as_report(item: Reportable) -> Tuple[str, ExperimentReport]:
    if isinstance(item, ExperimentReport):
        return "experiment", item
    if isinstance(item, SearchTrace):
        return "search_trace", trace_report(item, item.model.metadata.seed)
    if isinstance(item, FitResult):
        return "fit_records", fit_report(item)
    raise TypeError(f"cannot report {type(item).__name__}")


def summary_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.summary.csv")


def emit_report(item: Reportable, path: PathLike) -> Path:
    """Write records and the summary table; returns the records path"""
    kind, report = _as_report(item)
    path = Path(path)
    header = ReportHeader(kind=kind, experiment=report.experiment, metadata=report.metadata)
    lines = [json.dumps(header.model_dump(mode="json"), sort_keys=True)]
    lines.extend(json.dumps(record.model_dump(mode="json"), sort_keys=True) for record in report.records)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        report.summary().to_csv(summary_path(path), index=False)
    except OSError as exc:
        raise ReportWriteError(f"cannot write report {path}: {exc}", details={"path": str(path)}) from exc
    logger.info("report_written", path=str(path), kind=kind, records=len(report.records))
    return path


def read_report(path: PathLike) -> Tuple[ReportHeader, List[ReportRecord]]:
    path = Path(path)
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise ConfigurationError(f"{path}: empty report file")
    try:
        header = ReportHeader.model_validate(json.loads(lines[0]))
        records = [ReportRecord.model_validate(json.loads(line)) for line in lines[1:]]
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ConfigurationError(f"{path}: malformed report ({exc})") from exc
    if header.format != REPORT_FORMAT:
        raise ConfigurationError(f"{path}: unexpected report format {header.format!r}")
    return header, records


def read_summary(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(summary_path(path))
