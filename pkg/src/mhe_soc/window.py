"""Measurement buffering under uniform, multi-rate and filter-augmented schedules.

Raw samples are retained at the base rate; the buffer exposed to an estimator
is a newest-anchored selection of them.  Filter channels are advanced on every
base-rate sample so that a filtered value at time ``t`` only depends on raw
samples up to ``t``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .exceptions import InsufficientHistory, NonMonotonicTime, UnstablePole

UNIFORM = "uniform"
MULTI_RATE = "multi_rate"
FILTERED = "filtered"


@dataclass(frozen=True)
class FilterSpec:
    """Continuous transfer function ``b(s)/a(s)``, coefficients highest power first."""

    b_continuous: tuple
    a_continuous: tuple
    label: str = ""

    def __post_init__(self):
        b = tuple(float(v) for v in self.b_continuous)
        a = tuple(float(v) for v in self.a_continuous)
        b = _strip_leading_zeros(b)
        a = _strip_leading_zeros(a)
        if not a:
            raise ValueError("denominator must be non-zero")
        if len(b) > len(a):
            raise ValueError(f"filter {self.label!r} is improper (deg b > deg a)")
        object.__setattr__(self, "b_continuous", b)
        object.__setattr__(self, "a_continuous", a)


def _strip_leading_zeros(coeffs):
    i = 0
    while i < len(coeffs) - 1 and coeffs[i] == 0.0:
        i += 1
    return coeffs[i:]


def dirty_derivative(tau: float = 0.1) -> FilterSpec:
    return FilterSpec((1.0, 0.0), (tau, 1.0), label="dirty_derivative")


def pseudo_integrator(tau: float = 100.0) -> FilterSpec:
    return FilterSpec((1.0,), (tau, 1.0), label="pseudo_integrator")


@dataclass(frozen=True)
class DiscreteFilter:
    """Difference equation ``a[0] y_k + a[1] y_{k-1} + ... = b[0] x_k + ...`` with ``a[0] == 1``."""

    b: tuple
    a: tuple
    label: str = ""

    @property
    def order(self) -> int:
        return len(self.a) - 1

    def initial_state(self, x0: float) -> list:
        """Transposed direct-form II state for a steady input ``x0``."""
        if self.order == 0:
            return []
        return [float(v) * x0 for v in signal.lfilter_zi(self.b, self.a)]

    def step(self, state: list, x: float):
        """Advance one sample; returns ``(y, new_state)`` without mutating ``state``."""
        b, a = self.b, self.a
        if not state:
            return b[0] * x, state
        y = b[0] * x + state[0]
        n = len(state)
        new = [0.0] * n
        for i in range(n - 1):
            new[i] = b[i + 1] * x - a[i + 1] * y + state[i + 1]
        new[n - 1] = b[n] * x - a[n] * y
        return y, new

    def run(self, xs: Sequence[float], state=None) -> np.ndarray:
        xs = list(xs)
        if state is None:
            state = self.initial_state(xs[0]) if xs else []
        out = []
        for x in xs:
            y, state = self.step(state, x)
            out.append(y)
        return np.array(out)


def discretize_filter(spec: FilterSpec, Ts: float) -> DiscreteFilter:
    """Bilinear (Tustin) discretization of ``spec`` at sampling period ``Ts``."""
    if not Ts > 0:
        raise ValueError("Ts must be > 0")
    b = np.array(spec.b_continuous)
    a = np.array(spec.a_continuous)
    if len(a) == 1:
        return DiscreteFilter((float(b[0] / a[0]),), (1.0,), spec.label)
    bz, az = signal.bilinear(b, a, fs=1.0 / Ts)
    bz = np.atleast_1d(bz)
    az = np.atleast_1d(az)
    order = len(az) - 1
    bz = np.concatenate([np.zeros(order + 1 - len(bz)), bz])
    bz, az = bz / az[0], az / az[0]
    poles = np.roots(az)
    if np.any(np.abs(poles) >= 1.0):
        raise UnstablePole(f"filter {spec.label!r} has discrete poles {poles} on or outside the unit circle")
    return DiscreteFilter(tuple(float(v) for v in bz), tuple(float(v) for v in az), spec.label)


@dataclass(frozen=True)
class Schedule:
    """Which base-rate samples make up the buffer, and how often the estimator runs.

    ``segments`` lists ``(count, gap)`` pairs from the newest sample backwards.
    The first sample of every segment after the first sits one ``gap`` of that
    segment behind the last sample of the previous one.
    """

    kind: str
    segments: tuple
    filters: tuple = ()
    stride: int | None = None

    def __post_init__(self):
        segs = tuple((int(c), int(g)) for c, g in self.segments)
        if not segs or any(c <= 0 or g <= 0 for c, g in segs):
            raise ValueError("segments need positive counts and gaps")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "filters", tuple(self.filters))
        if self.kind not in (UNIFORM, MULTI_RATE, FILTERED):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind != FILTERED and self.filters:
            raise ValueError("only filtered schedules carry filters")
        if self.stride is None:
            object.__setattr__(self, "stride", max(g for _, g in segs))
        elif self.stride <= 0:
            raise ValueError("stride must be positive")

    @classmethod
    def uniform(cls, N: int, n_ts: int = 1, stride: int | None = None) -> "Schedule":
        return cls(UNIFORM, ((N, n_ts),), stride=stride)

    @classmethod
    def multi_rate(cls, segments=((5, 1), (25, 20)), stride: int | None = None) -> "Schedule":
        return cls(MULTI_RATE, tuple(segments), stride=stride)

    @classmethod
    def filtered(cls, N: int, n_ts: int, filters: Sequence[FilterSpec], stride: int | None = None) -> "Schedule":
        return cls(FILTERED, ((N, n_ts),), filters=tuple(filters), stride=stride)

    @property
    def N(self) -> int:
        return sum(c for c, _ in self.segments)

    @property
    def n_ts(self) -> int:
        """Down-sampling factor of a single-segment schedule (slowest gap otherwise)."""
        return max(g for _, g in self.segments)

    @property
    def n_channels(self) -> int:
        return 1 + len(self.filters)

    def offsets(self) -> list[int]:
        """Sample ages in base-rate steps, newest first."""
        out = []
        age = None
        for count, gap in self.segments:
            for _ in range(count):
                age = 0 if age is None else age + gap
                out.append(age)
        return out

    @property
    def span_steps(self) -> int:
        return self.offsets()[-1]

    def span_s(self, Ts: float) -> float:
        return self.span_steps * Ts

    def summary(self) -> str:
        segs = "+".join(f"{c}x{g}" for c, g in self.segments)
        if self.filters:
            segs += "|" + ",".join(f.label or "filter" for f in self.filters)
        return f"{self.kind}[{segs}]"


@dataclass
class WindowView:
    """Snapshot of the exposed buffer, oldest sample first."""

    timestamps: np.ndarray
    values: np.ndarray          # shape (n_channels, N)
    indices: np.ndarray         # base-rate indices into the retained history
    start_index: int            # base-rate index of the oldest exposed sample
    filter_states: list         # per filter, state just before the oldest exposed sample


@dataclass
class MeasurementWindow:
    schedule: Schedule
    Ts: float = 1.0
    _filters: list = field(init=False, repr=False)
    _raw: deque = field(init=False, repr=False)
    _count: int = field(init=False, default=0)

    def __post_init__(self):
        self._filters = [discretize_filter(f, self.Ts) for f in self.schedule.filters]
        self._states = [None] * len(self._filters)
        # entries: (index, t, y, filtered_values, states_before)
        self._raw = deque(maxlen=self.schedule.span_steps + 1)
        self._offsets = self.schedule.offsets()

    @property
    def filters(self) -> list:
        return list(self._filters)

    @property
    def count(self) -> int:
        return self._count

    @property
    def full(self) -> bool:
        return self._count >= self.schedule.span_steps + 1

    @property
    def last_time(self):
        return self._raw[-1][1] if self._raw else None

    def push(self, t: float, y: float) -> "MeasurementWindow":
        last = self.last_time
        if last is not None:
            if not t > last:
                raise NonMonotonicTime(f"t={t} does not exceed last stored timestamp {last}")
            if not math.isclose(t - last, self.Ts, rel_tol=1e-9, abs_tol=1e-9):
                raise NonMonotonicTime(f"gap {t - last} differs from the base period {self.Ts}")
        before = []
        filtered = []
        for j, filt in enumerate(self._filters):
            state = self._states[j]
            if state is None:
                state = filt.initial_state(y)
            before.append(state)
            out, self._states[j] = filt.step(state, y)
            filtered.append(out)
        self._raw.append((self._count, float(t), float(y), tuple(filtered), before))
        self._count += 1
        return self

    def view(self) -> WindowView:
        if not self.full:
            raise InsufficientHistory("window is not full yet")
        newest = len(self._raw) - 1
        rows = [self._raw[newest - age] for age in reversed(self._offsets)]
        timestamps = np.array([r[1] for r in rows])
        values = np.empty((self.schedule.n_channels, len(rows)))
        values[0] = [r[2] for r in rows]
        for j in range(len(self._filters)):
            values[j + 1] = [r[3][j] for r in rows]
        indices = np.array([r[0] for r in rows])
        return WindowView(timestamps, values, indices, int(indices[0]), list(rows[0][4]))


def variability(y: Sequence[float], k: int, N: int, n_ts: int, q: int = 0) -> float:
    """Signal variability over the buffer ending at base index ``k``.

    Sums absolute differences between consecutive buffered samples
    ``y[k - i*n_ts]`` for ``i = 1..N``, plus the jump from ``y[k - n_ts]`` to
    the sample ``q`` steps after ``k``.
    """
    if not 0 <= q <= n_ts - 1:
        raise ValueError(f"q={q} outside [0, {n_ts - 1}]")
    if k - N * n_ts < 0 or k + q >= len(y):
        raise InsufficientHistory(f"need indices {k - N * n_ts}..{k + q}, have 0..{len(y) - 1}")
    total = 0.0
    for i in range(1, N):
        total += abs(y[k - i * n_ts] - y[k - (i + 1) * n_ts])
    return total + abs(y[k + q] - y[k - n_ts])


def variability_series(y: Sequence[float], N: int, n_ts: int, start: int | None = None) -> np.ndarray:
    """Variability at every base index from ``start`` on (NaN before it).

    The aligned grid is every ``n_ts``-th sample from index 0; the current
    sample sits ``q`` steps after the most recent aligned one.
    """
    y = np.asarray(y, dtype=float)
    first = N * n_ts
    start = first if start is None else max(start, first)
    out = np.full(len(y), np.nan)
    d = np.abs(np.diff(y[::n_ts]))     # d[m] = |y[(m+1)n] - y[m n]|
    csum = np.concatenate([[0.0], np.cumsum(d)])
    for j in range(start, len(y)):
        q = j % n_ts
        k = j - q
        m = k // n_ts                  # y[k] = y[m*n_ts]
        # sum_{i=1}^{N-1} |y[(m-i)n] - y[(m-i-1)n]| = d[m-N] + ... + d[m-2]
        body = csum[m - 1] - csum[m - N]
        out[j] = body + abs(y[j] - y[k - n_ts])
    return out
