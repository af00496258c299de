"""Single-shooting moving horizon estimator for the battery model.

The decision vector is ``(Z, V1)`` at the oldest buffered sample, followed by
the estimated polynomial coefficients.  Each call to :meth:`MovingHorizonEstimator.step`
consumes one base-rate measurement; an optimization runs every
``schedule.stride`` samples once the buffer is full.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import ecm
from .exceptions import NonFiniteObjective, NonFiniteState
from .optim import OptimResult, SimplexOptions, minimize
from .window import MeasurementWindow, Schedule, WindowView

# Output-mismatch value substituted for a prediction that blew up.
NONFINITE_SENTINEL = 1e3


@dataclass(frozen=True)
class MheConfig:
    schedule: Schedule
    theta_selection: str = ecm.FULL
    w_output: tuple | float | None = None   # per channel; None -> 1/sqrt(N)
    w_state: float = 0.1
    state_scales: tuple = (1.0, 0.1)
    w_theta: float = 0.1
    theta_scales: tuple | None = None        # None -> |initial guess|, floored
    theta_scale_floor: float = 1e-6
    barrier_M: float = 1e5
    optimizer: SimplexOptions = SimplexOptions(max_iterations=1)
    # How the starting simplex of each step is built: "restart" (axis steps
    # from the warm start every time), "persistent" (carry the previous final
    # simplex), or "adaptive" (axis steps whose length grows after an improving
    # step and shrinks after a non-improving one).
    simplex_mode: str = "persistent"
    # Rebuild the simplex once its extent along a coordinate falls below this
    # fraction of the initial step along it.
    simplex_reset_fraction: float = 1e-3

    def __post_init__(self):
        ecm.theta_arity(self.theta_selection)
        if self.barrier_M < 1e5:
            raise ValueError("barrier_M must be >= 1e5")
        if self.w_state < 0 or self.w_theta < 0:
            raise ValueError("weights must be >= 0")

    def output_weights(self) -> np.ndarray:
        n_ch = self.schedule.n_channels
        if self.w_output is None:
            return np.full(n_ch, 1.0 / math.sqrt(self.schedule.N))
        w = np.broadcast_to(np.asarray(self.w_output, dtype=float), (n_ch,)).copy()
        if np.any(w < 0):
            raise ValueError("output weights must be >= 0")
        return w


@dataclass
class Prediction:
    """Result of integrating one candidate over the window."""

    outputs: np.ndarray        # (n_channels, N)
    end_state: ecm.PlantState
    min_r0: float
    min_r1: float
    finite: bool


@dataclass
class StepOutcome:
    t: float
    xi_now: ecm.PlantState
    theta: np.ndarray
    cost: float = float("nan")
    barrier_active: bool = False
    nonfinite: bool = False
    updated: bool = False
    wall_time_s: float = 0.0
    evaluations: int = 0


def _cubic(coeffs):
    """Coefficients padded to exactly four entries, or None if the degree exceeds 3."""
    if len(coeffs) > 4:
        return None
    return tuple(coeffs) + (0.0,) * (4 - len(coeffs))


def _first_order(filters, filter_states):
    """``(b0, b1, a1)`` taps and scalar states if every filter has order <= 1, else None."""
    taps, states = [], []
    for filt, state in zip(filters, filter_states):
        if filt.order > 1:
            return None
        if filt.order == 0:
            taps.append((filt.b[0], 0.0, 0.0))
            states.append(0.0)
        else:
            taps.append((filt.b[0], filt.b[1], filt.a[1]))
            states.append(float(state[0]))
    return taps, states


def _integrate(ocv, r0c, r1c, c1c, kz, ts, z, v, currents, mask, taps, fstates):
    """Dispatch to the filtered loop when it applies, else the general one."""
    if 1 <= len(taps) <= 2 and len(ocv) == 7:
        return _integrate_filtered(ocv, r0c, r1c, c1c, kz, ts, z, v, currents, mask, taps, fstates)
    return _integrate_general(ocv, r0c, r1c, c1c, kz, ts, z, v, currents, mask, taps, fstates)


def _integrate_filtered(ocv, r0c, r1c, c1c, kz, ts, z, v, currents, mask, taps, fstates):
    """Same contract as the general loop, for one or two filters and a degree-6 OCV.

    Filters need an output at every step, so this loop is output-bound; the
    OCV polynomial and filter states live in locals instead of lists.
    """
    a0, a1, a2, a3 = r0c
    b0, b1, b2, b3 = r1c
    c0, c1, c2, c3 = c1c
    o0, o1, o2, o3, o4, o5, o6 = ocv
    n_f = len(taps)
    f0, f1, g1 = taps[0]
    h0, h1, e1 = taps[1] if n_f == 2 else (0.0, 0.0, 0.0)
    s0 = fstates[0]
    s1 = fstates[1] if n_f == 2 else 0.0
    exp = math.exp
    neg_ts = -ts
    n = len(currents)
    raw, ch0, ch1 = [], [], []
    min_r0 = min_r1 = math.inf
    try:
        for k in range(n):
            i_k = currents[k]
            r0 = ((a3 * z + a2) * z + a1) * z + a0
            if r0 < min_r0:
                min_r0 = r0
            yk = (((((o6 * z + o5) * z + o4) * z + o3) * z + o2) * z + o1) * z + o0 - i_k * r0 - v
            y0 = f0 * yk + s0
            s0 = f1 * yk - g1 * y0
            y1 = h0 * yk + s1
            s1 = h1 * yk - e1 * y1
            if mask[k]:
                raw.append(yk)
                ch0.append(y0)
                ch1.append(y1)
            if k == n - 1:
                break
            r1 = ((b3 * z + b2) * z + b1) * z + b0
            if r1 < min_r1:
                min_r1 = r1
            decay = exp(neg_ts / (r1 * (((c3 * z + c2) * z + c1) * z + c0)))
            v = decay * v + (1.0 - decay) * r1 * i_k
            z -= kz * i_k
    except (ZeroDivisionError, OverflowError):
        return None, z, v, min_r0, min_r1, False
    r1 = ((b3 * z + b2) * z + b1) * z + b0
    if r1 < min_r1:
        min_r1 = r1
    chans = [raw, ch0, ch1] if n_f == 2 else [raw, ch0]
    return chans, z, v, min_r0, min_r1, True


def _integrate_general(ocv, r0c, r1c, c1c, kz, ts, z, v, currents, mask, taps, fstates):
    """Inner loop shared by every prediction.

    ``mask[k]`` marks the steps whose outputs are kept; with filter taps the
    output is computed at every step because the filters need it.  Returns
    ``(channels, z, v, min_r0, min_r1, ok)`` where ``ok`` is False if the
    arithmetic overflowed or divided by zero.
    """
    a0, a1, a2, a3 = r0c
    b0, b1, b2, b3 = r1c
    c0, c1, c2, c3 = c1c
    ocv_desc = ocv[::-1]
    exp = math.exp
    neg_ts = -ts
    n = len(currents)
    n_f = len(taps)
    raw = []
    chans = [[] for _ in range(n_f)]
    fstates = list(fstates)
    min_r0 = min_r1 = math.inf
    try:
        for k in range(n):
            i_k = currents[k]
            r0 = ((a3 * z + a2) * z + a1) * z + a0
            if r0 < min_r0:
                min_r0 = r0
            if n_f or mask[k]:
                acc = 0.0
                for c in ocv_desc:
                    acc = acc * z + c
                yk = acc - i_k * r0 - v
                keep = mask[k]
                if keep:
                    raw.append(yk)
                for j in range(n_f):
                    f0, f1, g1 = taps[j]
                    fy = f0 * yk + fstates[j]
                    fstates[j] = f1 * yk - g1 * fy
                    if keep:
                        chans[j].append(fy)
            if k == n - 1:
                break
            r1 = ((b3 * z + b2) * z + b1) * z + b0
            if r1 < min_r1:
                min_r1 = r1
            decay = exp(neg_ts / (r1 * (((c3 * z + c2) * z + c1) * z + c0)))
            v = decay * v + (1.0 - decay) * r1 * i_k
            z -= kz * i_k
    except (ZeroDivisionError, OverflowError):
        return None, z, v, min_r0, min_r1, False
    # r1 at the final sample still belongs to the visited trajectory
    r1 = ((b3 * z + b2) * z + b1) * z + b0
    if r1 < min_r1:
        min_r1 = r1
    return [raw] + chans, z, v, min_r0, min_r1, True


def _step_mask(n, sample_steps):
    mask = [False] * n
    for i in sample_steps:
        mask[i] = True
    return mask


def rollout(params: ecm.EcmParameters, xi0, currents, sample_steps, filters=(), filter_states=()):
    """Integrate from ``xi0`` over ``currents`` and sample outputs.

    ``currents[k]`` is the current held from step ``k`` to ``k+1``, and also the
    current present when the output at step ``k`` is measured, so it has one
    entry per base-rate sample in the window.  ``sample_steps`` are step
    indices (ascending) at which outputs are returned.  Filters, if any, are
    run over the predicted output at every step starting from
    ``filter_states``.
    """
    r0c, r1c, c1c = _cubic(params.alpha_r0), _cubic(params.alpha_r1), _cubic(params.alpha_c1)
    fast = _first_order(filters, filter_states)
    if r0c is None or r1c is None or c1c is None or fast is None:
        return _rollout_generic(params, xi0, currents, sample_steps, filters, filter_states)
    taps, fstates = fast
    kz = params.eta * params.Ts / params.capacity_Cn
    chans, z, v, min_r0, min_r1, ok = _integrate(
        params.alpha_ocv, r0c, r1c, c1c, kz, params.Ts, float(xi0[0]), float(xi0[1]),
        currents, _step_mask(len(currents), sample_steps), taps, fstates)
    if not ok:
        return Prediction(np.empty((1 + len(filters), 0)), ecm.PlantState(z, v), min_r0, min_r1, False)
    outputs = np.array(chans)
    finite = math.isfinite(v) and bool(np.all(np.isfinite(outputs)))
    return Prediction(outputs, ecm.PlantState(z, v), min_r0, min_r1, finite)


def _rollout_generic(params, xi0, currents, sample_steps, filters, filter_states):
    state = ecm.PlantState(float(xi0[0]), float(xi0[1]))
    wanted = set(sample_steps)
    n_f = len(filters)
    states = list(filter_states)
    out = [[] for _ in range(1 + n_f)]
    min_r0 = min_r1 = math.inf
    n = len(currents)
    try:
        for k in range(n):
            i_k = currents[k]
            min_r0 = min(min_r0, params.r0(state.Z))
            min_r1 = min(min_r1, params.r1(state.Z))
            yk = ecm.output(params, state, i_k)
            filtered = []
            for j in range(n_f):
                fy, states[j] = filters[j].step(states[j], yk)
                filtered.append(fy)
            if k in wanted:
                out[0].append(yk)
                for j in range(n_f):
                    out[j + 1].append(filtered[j])
            if k < n - 1:
                state = ecm.step(params, state, i_k)
    except (NonFiniteState, OverflowError):
        return Prediction(np.empty((1 + n_f, 0)), state, min_r0, min_r1, False)
    outputs = np.array(out)
    finite = bool(np.all(np.isfinite(outputs))) and math.isfinite(state.V1)
    return Prediction(outputs, state, min_r0, min_r1, finite)


def lift(params: ecm.EcmParameters, xi0, view: WindowView, currents, filters=()) -> np.ndarray:
    """Predicted buffer ``(n_channels, N)`` for a candidate model and window-start state.

    ``currents`` covers every base-rate step from the oldest exposed sample to
    the newest one, inclusive.
    """
    steps = [int(i) - view.start_index for i in view.indices]
    if len(currents) != steps[-1] + 1:
        raise ValueError(f"need {steps[-1] + 1} currents for this window, got {len(currents)}")
    pred = rollout(params, xi0, currents, steps, filters, view.filter_states)
    if not pred.finite:
        raise NonFiniteState("prediction over the window is not finite")
    return pred.outputs


def split_decision(x, selection):
    """Decision vector -> ``(xi0, theta)``; the state always comes first."""
    x = np.asarray(x, dtype=float)
    return x[:2], x[2:2 + ecm.theta_arity(selection)]


@dataclass
class CostTerms:
    total: float
    output: float
    state: float
    theta: float
    barrier: float
    prediction: Prediction
    nonfinite: bool = False       # prediction or its residual overflowed


def evaluate_cost(x, base: ecm.EcmParameters, view: WindowView, currents, cfg: MheConfig,
                  prior_xi, prior_theta, theta_scales, filters=()) -> CostTerms:
    xi0, theta = split_decision(x, cfg.theta_selection)
    params = ecm.unpack_theta(base, theta, cfg.theta_selection) if len(theta) else base
    steps = [int(i) - view.start_index for i in view.indices]
    pred = rollout(params, xi0, currents, steps, filters, view.filter_states)
    barrier = 0.0
    if not pred.min_r0 >= 0.0:
        barrier += cfg.barrier_M
    if not pred.min_r1 >= 0.0:
        barrier += cfg.barrier_M
    w_out = cfg.output_weights()
    out_term = math.inf
    if pred.finite:
        with np.errstate(over="ignore", invalid="ignore"):
            resid = (view.values - pred.outputs) * w_out[:, None]
            out_term = float(np.linalg.norm(resid))
    nonfinite = not math.isfinite(out_term)
    if nonfinite:
        out_term = float(np.max(w_out)) * NONFINITE_SENTINEL
        barrier = max(barrier, cfg.barrier_M)
    state_term = cfg.w_state * float(np.linalg.norm((xi0 - prior_xi) / np.asarray(cfg.state_scales)))
    theta_term = 0.0
    if cfg.theta_selection != ecm.FROZEN:
        theta_term = cfg.w_theta * float(np.linalg.norm((theta - prior_theta) / theta_scales))
    total = out_term + state_term + theta_term + barrier
    return CostTerms(total, out_term, state_term, theta_term, barrier, pred, nonfinite)


def cost(x, base: ecm.EcmParameters, view: WindowView, currents, cfg: MheConfig,
         prior_xi, prior_theta, theta_scales=None, filters=()) -> float:
    """Scaled MHE cost with arrival terms and resistance-sign barriers."""
    if theta_scales is None:
        theta_scales = np.maximum(np.abs(np.asarray(prior_theta, dtype=float)), cfg.theta_scale_floor)
    return evaluate_cost(x, base, view, currents, cfg, np.asarray(prior_xi, dtype=float),
                         np.asarray(prior_theta, dtype=float), theta_scales, filters).total


class WindowProblem:
    """The cost of one estimation step as a callable on the decision vector.

    Everything that does not depend on the candidate is prepared once, so an
    evaluation is the window integration plus a few sums.  Agrees with
    :func:`evaluate_cost`, which stays as the plain reference.
    """

    def __init__(self, base: ecm.EcmParameters, view: WindowView, currents, cfg: MheConfig,
                 prior_xi, prior_theta, theta_scales, filters=()):
        self.base, self.view, self.cfg, self.filters = base, view, cfg, filters
        self.currents = [float(c) for c in currents]
        self.prior_xi = np.asarray(prior_xi, dtype=float)
        self.prior_theta = np.asarray(prior_theta, dtype=float)
        self.theta_scales = np.asarray(theta_scales, dtype=float)
        steps = [int(i) - view.start_index for i in view.indices]
        if len(self.currents) != steps[-1] + 1:
            raise ValueError(f"need {steps[-1] + 1} currents for this window, got {len(self.currents)}")
        self.selection = cfg.theta_selection
        self.n_theta = ecm.theta_arity(self.selection)
        cubic = [_cubic(base.alpha_r0), _cubic(base.alpha_r1), _cubic(base.alpha_c1)]
        fast = _first_order(filters, view.filter_states)
        self._fast = fast is not None and None not in cubic
        if not self._fast:
            return
        self._cubic = cubic
        self._taps, self._fstates = fast
        self._mask = _step_mask(len(self.currents), steps)
        w_out = cfg.output_weights()
        self._measured = view.values.ravel().tolist()
        self._weights = np.repeat(w_out, view.values.shape[1]).tolist()
        self._sentinel = float(np.max(w_out)) * NONFINITE_SENTINEL
        self._kz = base.eta * base.Ts / base.capacity_Cn
        self._inv_state = [1.0 / s for s in cfg.state_scales]
        self._inv_theta = (1.0 / self.theta_scales).tolist()
        self._prior = self.prior_xi.tolist() + self.prior_theta.tolist()

    def _coefficients(self, theta):
        if self.selection == ecm.FULL:
            return theta[0:4], theta[4:8], theta[8:12]
        r0c, r1c, c1c = self._cubic
        if self.selection == ecm.ORDER0:
            return (theta[0],) + r0c[1:], (theta[1],) + r1c[1:], (theta[2],) + c1c[1:]
        return r0c, r1c, c1c

    def __call__(self, x) -> float:
        if not self._fast:
            return self.terms(x).total
        cfg = self.cfg
        xs = x.tolist() if isinstance(x, np.ndarray) else [float(v) for v in x]
        theta = xs[2:2 + self.n_theta]
        r0c, r1c, c1c = self._coefficients(theta)
        chans, _, v, min_r0, min_r1, ok = _integrate(
            self.base.alpha_ocv, r0c, r1c, c1c, self._kz, self.base.Ts, xs[0], xs[1],
            self.currents, self._mask, self._taps, self._fstates)
        barrier = 0.0
        if not min_r0 >= 0.0:
            barrier += cfg.barrier_M
        if not min_r1 >= 0.0:
            barrier += cfg.barrier_M
        out_term = math.inf
        if ok and math.isfinite(v):
            predicted = chans[0] if len(chans) == 1 else [y for ch in chans for y in ch]
            acc = 0.0
            for w, y, yhat in zip(self._weights, self._measured, predicted):
                r = w * (y - yhat)
                acc += r * r
            out_term = math.sqrt(acc)
        if not math.isfinite(out_term):
            out_term = self._sentinel
            barrier = max(barrier, cfg.barrier_M)
        prior = self._prior
        dz = (xs[0] - prior[0]) * self._inv_state[0]
        dv = (xs[1] - prior[1]) * self._inv_state[1]
        total = out_term + cfg.w_state * math.sqrt(dz * dz + dv * dv) + barrier
        if self.n_theta:
            acc = 0.0
            for t, t0, inv in zip(theta, prior[2:], self._inv_theta):
                d = (t - t0) * inv
                acc += d * d
            total += cfg.w_theta * math.sqrt(acc)
        return total

    def terms(self, x) -> CostTerms:
        return evaluate_cost(x, self.base, self.view, self.currents, self.cfg, self.prior_xi,
                             self.prior_theta, self.theta_scales, self.filters)


def propagate(params: ecm.EcmParameters, xi, currents) -> ecm.PlantState:
    """Open-loop propagation through ``len(currents)`` steps."""
    state = ecm.PlantState(float(xi[0]), float(xi[1]))
    for i_k in currents:
        try:
            state = ecm.step(params, state, i_k)
        except NonFiniteState:
            return state
    return state


class MovingHorizonEstimator:
    """Streaming joint SOC / parameter estimator.

    ``params`` is the model used for prediction; the coefficients selected by
    ``cfg.theta_selection`` start from their values in ``params`` and are
    re-estimated, the rest stay fixed.
    """

    def __init__(self, params: ecm.EcmParameters, cfg: MheConfig, z0: float = 0.85, v1_0: float = 0.0):
        self.cfg = cfg
        self.params = params
        self.window = MeasurementWindow(cfg.schedule, params.Ts)
        self.filters = self.window.filters
        self.theta = ecm.pack_theta(params, cfg.theta_selection)
        if cfg.theta_scales is not None:
            self.theta_scales = np.asarray(cfg.theta_scales, dtype=float)
        else:
            self.theta_scales = np.maximum(np.abs(self.theta), cfg.theta_scale_floor)
        span = cfg.schedule.span_steps
        self._currents = deque(maxlen=span + cfg.schedule.stride + 1)
        self._k = -1
        self.xi_now = ecm.PlantState(float(z0), float(v1_0))
        # (base index, window-start state) of the most recent accepted estimate
        self._anchor = (0, self.xi_now)
        self.fill_index = span
        self.last_result: OptimResult | None = None
        self._offsets = None          # simplex vertices relative to the best one
        self._step_scale = 1.0
        self.simplex_resets = 0

    def set_theta(self, theta) -> None:
        """Replace the estimated coefficients (used for parameter hand-off)."""
        theta = np.asarray(theta, dtype=float)
        self.params = ecm.unpack_theta(self.params, theta, self.cfg.theta_selection)
        self.theta = theta.copy()

    def set_params(self, params: ecm.EcmParameters) -> None:
        self.params = params
        self.theta = ecm.pack_theta(params, self.cfg.theta_selection)

    def initial_steps(self, x0) -> np.ndarray:
        """Starting simplex edge along each coordinate.

        A relative step of the coordinate itself, or of its arrival-cost scale
        when the coordinate is zero.
        """
        x0 = np.asarray(x0, dtype=float)
        scales = np.concatenate([np.asarray(self.cfg.state_scales, dtype=float), self.theta_scales])
        rel = self.cfg.optimizer.relative_step
        if self.cfg.optimizer.initial_step is not None:
            return np.asarray(self.cfg.optimizer.initial_step, dtype=float)
        return np.where(x0 != 0.0, rel * np.abs(x0), rel * scales[:len(x0)])

    def _starting_simplex(self, x0) -> np.ndarray:
        steps = self.initial_steps(x0) * self._step_scale
        if self._offsets is not None:
            extent = self._offsets.max(axis=0) - self._offsets.min(axis=0)
            if np.all(extent >= self.cfg.simplex_reset_fraction * steps):
                return x0 + self._offsets
            self.simplex_resets += 1
        simplex = np.tile(x0, (len(x0) + 1, 1))
        simplex[1:] += np.diag(steps)
        return simplex

    def _currents_since(self, index: int) -> list:
        offset = self._k - len(self._currents) + 1
        return list(self._currents)[index - offset:]

    def step(self, t: float, y: float, current: float) -> StepOutcome:
        if self._k >= 0:
            self.xi_now = propagate(self.params, self.xi_now, [self._currents[-1]])
        self._k += 1
        self.window.push(t, y)
        self._currents.append(float(current))
        outcome = StepOutcome(t, self.xi_now, self.theta.copy())
        k = self._k
        if not self.window.full or (k - self.fill_index) % self.cfg.schedule.stride:
            return outcome
        return self._optimize(t, k)

    def _optimize(self, t: float, k: int) -> StepOutcome:
        cfg = self.cfg
        view = self.window.view()
        start = view.start_index
        anchor_index, anchor_xi = self._anchor
        prior_xi = propagate(self.params, anchor_xi, self._currents_since(anchor_index)[:start - anchor_index])
        prior_xi = np.array(prior_xi)
        prior_theta = self.theta.copy()
        currents = self._currents_since(start)
        base = self.params
        filters = self.filters
        theta_scales = self.theta_scales

        objective = WindowProblem(base, view, currents, cfg, prior_xi, prior_theta, theta_scales, filters)

        x0 = np.concatenate([prior_xi, prior_theta])
        try:
            result = minimize(objective, x0, cfg.optimizer, simplex=self._starting_simplex(x0))
        except NonFiniteObjective:
            return StepOutcome(t, self.xi_now, self.theta.copy(), nonfinite=True)
        self.last_result = result
        if cfg.simplex_mode == "persistent":
            self._offsets = result.simplex - result.simplex[0]
        elif cfg.simplex_mode == "adaptive":
            moved = result.f_best < objective(x0)
            self._step_scale = min(1.0, self._step_scale * 2.0) if moved else \
                max(cfg.simplex_reset_fraction, self._step_scale * 0.5)
        terms = objective.terms(result.x_best)
        xi0, theta = split_decision(result.x_best, cfg.theta_selection)
        nonfinite = terms.nonfinite
        if cfg.theta_selection != ecm.FROZEN:
            self.set_theta(theta)
        self._anchor = (start, ecm.PlantState(float(xi0[0]), float(xi0[1])))
        if nonfinite:
            self.xi_now = propagate(self.params, xi0, currents[:-1])
        else:
            self.xi_now = terms.prediction.end_state
        return StepOutcome(t, self.xi_now, self.theta.copy(), cost=terms.total,
                           barrier_active=terms.total >= cfg.barrier_M, nonfinite=nonfinite,
                           updated=True, wall_time_s=result.wall_time_s, evaluations=result.evaluations)
