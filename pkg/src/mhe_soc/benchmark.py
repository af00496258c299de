"""Benchmark matrix: accuracy and per-step optimizer time across estimator layouts."""
from __future__ import annotations

import csv
import json
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy

from . import ecm, parallel
from .mhe import MheConfig, MovingHorizonEstimator
from .plant import TruthLog
from .record import RunRecord, run_estimator
from .window import Schedule, dirty_derivative, pseudo_integrator

SUITES = ("paper-tables",)
REPORT_COLUMNS = ("label", "N", "schedule", "theta_arity", "estimation_steps", "mean_wall_time_s",
                  "median_wall_time_s", "max_wall_time_s", "rmse_Z", "rmse_Vb", "barrier_events",
                  "nonfinite_events")


@dataclass(frozen=True)
class Row:
    label: str
    config: MheConfig | parallel.ParallelConfig


def paper_tables() -> list[Row]:
    """Standard, multi-rate, filtered and parallel layouts, all with K=1."""
    full = ecm.FULL
    return [
        Row("standard-nts1", MheConfig(Schedule.uniform(30, 1), full)),
        Row("standard-nts20", MheConfig(Schedule.uniform(30, 20), full)),
        Row("multi-rate", MheConfig(Schedule.multi_rate(((5, 1), (25, 20))), full)),
        Row("filtered-N20", MheConfig(Schedule.filtered(20, 20, [dirty_derivative()]), full)),
        Row("filtered-N10", MheConfig(Schedule.filtered(10, 20, [dirty_derivative(), pseudo_integrator()]), full)),
        Row("parallel", parallel.ParallelConfig()),
    ]


def suite(name: str) -> list[Row]:
    if name == "paper-tables":
        return paper_tables()
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


def thread_cap() -> int:
    raw = os.environ.get("MHE_SOC_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"MHE_SOC_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def _run_row(row: Row, truth: TruthLog, guess: ecm.EcmParameters, z0: float) -> list[RunRecord]:
    if isinstance(row.config, parallel.ParallelConfig):
        res = parallel.run(truth, guess, row.config, z0=z0)
        res.fast.label, res.slow.label = f"{row.label}-fast", f"{row.label}-slow"
        return [res.fast, res.slow]
    est = MovingHorizonEstimator(guess, row.config, z0=z0)
    return [run_estimator(truth, est, label=row.label)]


def machine_profile() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def run_suite(rows: list[Row], truth: TruthLog, guess: ecm.EcmParameters, z0: float = 0.85,
              timing: bool = True) -> list[RunRecord]:
    """Run every row; serial and in listed order when timing is recorded."""
    if timing or thread_cap() == 1:
        groups = [_run_row(row, truth, guess, z0) for row in rows]
    else:
        with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
            groups = list(pool.map(lambda row: _run_row(row, truth, guess, z0), rows))
    return [rec for group in groups for rec in group]


def report_rows(records: list[RunRecord], timing: bool = True) -> list[dict]:
    rows = []
    for rec in records:
        s = rec.summary(timing)
        rows.append({
            "label": rec.label,
            "N": s["N"],
            "schedule": s["schedule"],
            "theta_arity": len(rec.theta_labels),
            **{k: s[k] for k in REPORT_COLUMNS[4:]},
        })
    return rows


def write_report(rows: list[dict], csv_path, json_path, meta: dict) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in REPORT_COLUMNS])
    with open(json_path, "w") as fh:
        json.dump({**meta, "rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
