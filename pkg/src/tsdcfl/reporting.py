"""Serialization of run reports: JSON, epoch CSV, slot trace CSV, plot data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict

import numpy as np

from .simulator import EpochReport, RunReport

EPOCH_COLUMNS = (
    "epoch", "scheme", "iteration_time", "decoded", "T_comp", "Mc", "Kc", "s", "predicted_s",
    "census", "copies", "stage1_workers", "injected", "observed", "loss", "accuracy",
    "grad_norm_sq", "zeta_sq", "recovery_error", "C1", "C2", "admitted", "mean_Q", "mean_H", "mean_E",
)
TRACE_COLUMNS = ("t", "worker", "Q", "H", "E", "R", "y", "d", "v", "c", "e_store", "bound_rhs", "drift_lhs")
COMPARE_COLUMNS = ("scheme", "rep", "seed", "epoch", "loss", "iteration_time")
SUMMARY_COLUMNS = ("scheme", "reps", "mean_iteration_time", "std_iteration_time", "failed_epochs")
PLOT_COLUMNS = ("scheme", "epoch", "wall_time", "metric", "value")
PLOT_METRICS = ("loss", "accuracy", "iteration_time")


def _clean(x):
    """JSON-safe copy: numpy scalars become Python ones, NaN becomes None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else x
    return x


def report_to_json(report: RunReport, include_trace: bool = False) -> str:
    d = report.to_dict()
    if not include_trace:
        d.pop("slot_trace", None)
    return json.dumps(_clean(d), indent=2, sort_keys=True, allow_nan=False)


def report_from_json(text: str) -> RunReport:
    d = json.loads(text)
    epochs = [EpochReport(**{k: (math.nan if v is None and k == "recovery_error" else v) for k, v in e.items()})
              for e in d["epochs"]]
    return RunReport(d["scheme"], d["seed"], d["T_comp"], d["config"], epochs, d.get("slot_trace", []), d.get("summary", {}))


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def write_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
        fh.write("\n")


def write_epoch_csv(report: RunReport, path) -> None:
    _write_rows(path, EPOCH_COLUMNS, (asdict(e) for e in report.epochs))


def write_trace_csv(report: RunReport, path) -> None:
    _write_rows(path, TRACE_COLUMNS, report.slot_trace)


def compare_rows(reports):
    """Long comparison rows from ``{scheme: [report, ...]}``, one per epoch and repetition."""
    for scheme, reps in reports.items():
        for i, rep in enumerate(reps):
            for e in rep.epochs:
                yield {"scheme": scheme, "rep": i, "seed": rep.seed, "epoch": e.epoch,
                       "loss": e.loss, "iteration_time": e.iteration_time}


def summary_rows(reports):
    for scheme, reps in reports.items():
        means = np.array([rep.iteration_times().mean() for rep in reps])
        yield {
            "scheme": scheme, "reps": len(reps),
            "mean_iteration_time": float(means.mean()),
            "std_iteration_time": float(means.std(ddof=1)) if len(means) > 1 else 0.0,
            "failed_epochs": int(sum(not e.decoded for rep in reps for e in rep.epochs)),
        }


def write_compare(reports, compare_path, summary_path) -> list:
    _write_rows(compare_path, COMPARE_COLUMNS, compare_rows(reports))
    rows = list(summary_rows(reports))
    _write_rows(summary_path, SUMMARY_COLUMNS, rows)
    return rows


def plot_rows(reports):
    """Tidy rows; ``wall_time`` is the cumulative iteration time."""
    for rep in reports:
        wall = 0
        for e in rep.epochs:
            wall += e.iteration_time
            for metric in PLOT_METRICS:
                yield {"scheme": rep.scheme, "epoch": e.epoch, "wall_time": wall, "metric": metric,
                       "value": float(getattr(e, metric))}


def write_plot_data(reports, path) -> int:
    rows = list(plot_rows(reports))
    _write_rows(path, PLOT_COLUMNS, rows)
    return len(rows)
