"""Slow parameter estimator feeding a fast state estimator.

The slow estimator runs a long multi-rate window and re-estimates the model
coefficients; the fast one runs a short window with coefficients frozen and
receives the slow estimator's model every ``handoff_period_s`` seconds.
Hand-offs happen at logical sample indices, between fast steps, so the
threaded mode gives the same numbers as the sequential one.
"""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field

from . import ecm
from .mhe import MheConfig, MovingHorizonEstimator
from .plant import TruthLog
from .record import Recorder, RunRecord
from .window import Schedule


def _default_slow() -> MheConfig:
    return MheConfig(Schedule.multi_rate(((5, 1), (25, 20))), ecm.FULL)


def _default_fast() -> MheConfig:
    return MheConfig(Schedule.uniform(30, 2), ecm.FROZEN)


@dataclass(frozen=True)
class ParallelConfig:
    slow: MheConfig = field(default_factory=_default_slow)
    fast: MheConfig = field(default_factory=_default_fast)
    handoff_period_s: float = 20.0

    def __post_init__(self):
        if self.fast.theta_selection != ecm.FROZEN:
            raise ValueError("the fast estimator must keep its coefficients frozen")
        if not self.handoff_period_s > 0:
            raise ValueError("handoff_period_s must be > 0")

    def handoff_steps(self, Ts: float) -> int:
        steps = self.handoff_period_s / Ts
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError(f"handoff period {self.handoff_period_s} s is not a whole number of {Ts} s samples")
        return int(round(steps))


@dataclass
class ParallelResult:
    fast: RunRecord
    slow: RunRecord
    handoff_indices: list

    def summary(self, timing: bool = True) -> dict:
        return {"fast": self.fast.summary(timing), "slow": self.slow.summary(timing),
                "handoffs": len(self.handoff_indices)}


def _is_handoff(k: int, period: int) -> bool:
    return k > 0 and k % period == 0


def _estimators(params, cfg, z0, v1_0):
    slow = MovingHorizonEstimator(params, cfg.slow, z0=z0, v1_0=v1_0)
    fast = MovingHorizonEstimator(params, cfg.fast, z0=z0, v1_0=v1_0)
    return slow, fast


def _recorders(truth, slow, fast):
    Ts = slow.params.Ts
    t0 = float(truth.t[0])
    slow_rec = Recorder("parallel-slow", truth, ecm.theta_labels(slow.cfg.theta_selection),
                        t0 + slow.fill_index * Ts)
    fast_rec = Recorder("parallel-fast", truth, [], t0 + fast.fill_index * Ts)
    return slow_rec, fast_rec


def _finish(slow, fast, slow_rec, fast_rec, handoffs) -> ParallelResult:
    meta = lambda est: dict(schedule=est.cfg.schedule.summary(), theta_selection=est.cfg.theta_selection,
                            N=est.cfg.schedule.N, simplex_resets=est.simplex_resets)
    return ParallelResult(fast_rec.record(**meta(fast)), slow_rec.record(**meta(slow)), handoffs)


def run(truth: TruthLog, params: ecm.EcmParameters, cfg: ParallelConfig | None = None,
        z0: float = 0.85, v1_0: float = 0.0, threaded: bool = False) -> ParallelResult:
    """Drive both estimators over ``truth``; ``params`` is the shared initial model."""
    cfg = cfg or ParallelConfig()
    if len(truth) <= cfg.slow.schedule.span_steps:
        raise ValueError("truth log is shorter than the slow estimator's window")
    if threaded:
        return _run_threaded(truth, params, cfg, z0, v1_0)
    slow, fast = _estimators(params, cfg, z0, v1_0)
    slow_rec, fast_rec = _recorders(truth, slow, fast)
    period = cfg.handoff_steps(params.Ts)
    handoffs = []
    for k in range(len(truth)):
        t, y, i_k = truth.t[k], truth.Vb_noisy[k], truth.I[k]
        slow_rec.add(k, slow.step(t, y, i_k), slow.params)
        if _is_handoff(k, period):
            fast.set_params(slow.params)
            handoffs.append(k)
        fast_rec.add(k, fast.step(t, y, i_k), fast.params)
    return _finish(slow, fast, slow_rec, fast_rec, handoffs)


def _run_threaded(truth, params, cfg, z0, v1_0) -> ParallelResult:
    """Two workers; the slow one posts an immutable model snapshot at every hand-off index."""
    slow, fast = _estimators(params, cfg, z0, v1_0)
    slow_rec, fast_rec = _recorders(truth, slow, fast)
    period = cfg.handoff_steps(params.Ts)
    mailbox: queue.Queue = queue.Queue()
    errors = []
    handoffs = []

    def slow_worker():
        try:
            for k in range(len(truth)):
                slow_rec.add(k, slow.step(truth.t[k], truth.Vb_noisy[k], truth.I[k]), slow.params)
                if _is_handoff(k, period):
                    mailbox.put((k, slow.params))
        except BaseException as exc:  # surfaced in the caller's thread
            errors.append(exc)
            mailbox.put((None, None))

    def fast_worker():
        try:
            for k in range(len(truth)):
                if _is_handoff(k, period):
                    index, snapshot = mailbox.get()
                    if index is None:
                        return
                    if index != k:
                        raise RuntimeError(f"hand-off for sample {index} arrived at sample {k}")
                    fast.set_params(snapshot)
                    handoffs.append(k)
                fast_rec.add(k, fast.step(truth.t[k], truth.Vb_noisy[k], truth.I[k]), fast.params)
        except BaseException as exc:
            errors.append(exc)

    workers = [threading.Thread(target=slow_worker, name="mhe-slow"),
               threading.Thread(target=fast_worker, name="mhe-fast")]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if errors:
        raise errors[0]
    return _finish(slow, fast, slow_rec, fast_rec, handoffs)
