"""Per-step run logs for estimators driven over a truth log."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import ecm
from .metrics import rmse
from .plant import TruthLog

BASE_COLUMNS = ("t", "Z_true", "Z_hat", "V1_hat", "Vb_true", "Vb_hat", "cost", "barrier_active", "wall_time_s")


@dataclass
class RunRecord:
    label: str
    t: np.ndarray
    Z_true: np.ndarray
    Z_hat: np.ndarray
    V1_hat: np.ndarray
    Vb_true: np.ndarray
    Vb_hat: np.ndarray
    cost: np.ndarray
    barrier_active: np.ndarray
    nonfinite: np.ndarray
    updated: np.ndarray
    wall_time_s: np.ndarray
    theta: np.ndarray                  # (n_steps, arity)
    theta_labels: list
    fill_time: float
    meta: dict = field(default_factory=dict)

    @property
    def update_mask(self) -> np.ndarray:
        return self.updated.astype(bool)

    def step_times(self) -> np.ndarray:
        """Wall time of every optimization call made after the window filled."""
        return self.wall_time_s[self.update_mask]

    def summary(self, timing: bool = True) -> dict:
        walls = self.step_times()
        out = {
            "label": self.label,
            "fill_time_s": self.fill_time,
            "estimation_steps": int(self.update_mask.sum()),
            "rmse_Z": rmse(self.Z_hat, self.Z_true, self.t, self.fill_time),
            "rmse_Vb": rmse(self.Vb_hat, self.Vb_true, self.t, self.fill_time),
            "barrier_events": int(self.barrier_active.sum()),
            "nonfinite_events": int(self.nonfinite.sum()),
            "final_theta": dict(zip(self.theta_labels, self.theta[-1].tolist())) if len(self.theta_labels) else {},
        }
        if timing and len(walls):
            out.update(mean_wall_time_s=float(walls.mean()), median_wall_time_s=float(np.median(walls)),
                       max_wall_time_s=float(walls.max()))
        else:
            out.update(mean_wall_time_s=None, median_wall_time_s=None, max_wall_time_s=None)
        out.update(self.meta)
        return out

    def to_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(BASE_COLUMNS) + list(self.theta_labels))
            for k in range(len(self.t)):
                wall = repr(float(self.wall_time_s[k])) if timing else "0.0"
                row = [repr(float(self.t[k])), repr(float(self.Z_true[k])), repr(float(self.Z_hat[k])),
                       repr(float(self.V1_hat[k])), repr(float(self.Vb_true[k])), repr(float(self.Vb_hat[k])),
                       repr(float(self.cost[k])), str(int(self.barrier_active[k])), wall]
                row += [repr(float(v)) for v in self.theta[k]]
                writer.writerow(row)


class Recorder:
    """Accumulates step outcomes of one estimator against a truth log."""

    def __init__(self, label: str, truth: TruthLog, theta_labels, fill_time: float):
        n = len(truth)
        self.label = label
        self.truth = truth
        self.theta_labels = list(theta_labels)
        self.fill_time = fill_time
        self.cols = {name: np.zeros(n) for name in ("Z_hat", "V1_hat", "Vb_hat", "wall")}
        self.cost = np.full(n, np.nan)
        self.flags = {name: np.zeros(n, dtype=bool) for name in ("barrier", "nonfinite", "updated")}
        self.theta = np.zeros((n, len(self.theta_labels)))

    def add(self, k: int, outcome, params: ecm.EcmParameters, theta_full=None) -> None:
        xi = outcome.xi_now
        self.cols["Z_hat"][k] = xi.Z
        self.cols["V1_hat"][k] = xi.V1
        try:
            self.cols["Vb_hat"][k] = ecm.output(params, xi, self.truth.I[k])
        except OverflowError:
            self.cols["Vb_hat"][k] = np.nan
        self.cols["wall"][k] = outcome.wall_time_s
        self.cost[k] = outcome.cost
        self.flags["barrier"][k] = outcome.barrier_active
        self.flags["nonfinite"][k] = outcome.nonfinite
        self.flags["updated"][k] = outcome.updated
        if self.theta_labels:
            self.theta[k] = outcome.theta if theta_full is None else theta_full

    def record(self, **meta) -> RunRecord:
        tr = self.truth
        return RunRecord(self.label, tr.t.copy(), tr.Z.copy(), self.cols["Z_hat"], self.cols["V1_hat"],
                         tr.Vb_clean.copy(), self.cols["Vb_hat"], self.cost, self.flags["barrier"],
                         self.flags["nonfinite"], self.flags["updated"], self.cols["wall"], self.theta,
                         self.theta_labels, self.fill_time, dict(meta))


def run_estimator(truth: TruthLog, estimator, label: str = "mhe") -> RunRecord:
    """Feed every measurement of ``truth`` to ``estimator`` and log the outcomes."""
    labels = ecm.theta_labels(estimator.cfg.theta_selection)
    fill_time = float(truth.t[0] + estimator.fill_index * estimator.params.Ts)
    rec = Recorder(label, truth, labels, fill_time)
    for k in range(len(truth)):
        outcome = estimator.step(truth.t[k], truth.Vb_noisy[k], truth.I[k])
        rec.add(k, outcome, estimator.params)
    return rec.record(schedule=estimator.cfg.schedule.summary(), theta_selection=estimator.cfg.theta_selection,
                      N=estimator.cfg.schedule.N, simplex_resets=estimator.simplex_resets)
