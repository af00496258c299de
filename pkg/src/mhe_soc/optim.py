"""Nelder-Mead simplex minimizer with a hard iteration budget.

Iteration accounting and the initial simplex follow MATLAB's ``fminsearch``
(Lagarias et al. variant): one iteration is one reflect / expand / contract /
shrink decision, and the starting simplex perturbs each coordinate by 5 %
(or by 0.00025 when the coordinate is zero).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NonFiniteObjective


@dataclass(frozen=True)
class SimplexOptions:
    max_iterations: int = 1
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    relative_step: float = 0.05
    zero_step: float = 0.00025
    initial_step: tuple | None = None  # absolute per-coordinate steps; overrides the relative rule
    f_tol: float | None = None
    x_tol: float | None = None

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.reflection > 0:
            raise ValueError("reflection must be > 0")
        if not self.expansion > self.reflection:
            raise ValueError("expansion must exceed reflection")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class OptimResult:
    x_best: np.ndarray
    f_best: float
    iterations_used: int
    evaluations: int
    wall_time_s: float
    # Final simplex, best vertex first; not evaluated if the last move was a shrink.
    simplex: np.ndarray | None = None


def initial_simplex(x0: np.ndarray, opts: SimplexOptions) -> np.ndarray:
    n = len(x0)
    simplex = np.tile(x0, (n + 1, 1))
    if opts.initial_step is not None:
        steps = np.asarray(opts.initial_step, dtype=float)
        if steps.shape != (n,):
            raise ValueError(f"initial_step has shape {steps.shape}, expected ({n},)")
        for i in range(n):
            simplex[i + 1, i] += steps[i]
        return simplex
    for i in range(n):
        if x0[i] != 0.0:
            simplex[i + 1, i] *= 1.0 + opts.relative_step
        else:
            simplex[i + 1, i] = opts.zero_step
    return simplex


def minimize(f: Callable[[np.ndarray], float], x0, opts: SimplexOptions = SimplexOptions(),
             simplex=None) -> OptimResult:
    """Run at most ``opts.max_iterations`` Nelder-Mead iterations from ``x0``.

    Returns the best point seen over all evaluations.  A shrink on the final
    permitted iteration is not evaluated, since no later iteration would use it.
    ``simplex`` (``n+1`` vertices, ``x0`` first) replaces the default starting
    simplex, e.g. to continue from the shape left by an earlier call.
    """
    started = time.perf_counter()
    x0 = np.array(x0, dtype=float).ravel()
    n = len(x0)
    evaluations = 0

    def fun(x):
        nonlocal evaluations
        evaluations += 1
        value = float(f(x))
        if not math.isfinite(value):
            raise NonFiniteObjective(f"objective returned {value} at {x}")
        return value

    if simplex is None:
        simplex = initial_simplex(x0, opts)
    else:
        simplex = np.array(simplex, dtype=float)
        if simplex.shape != (n + 1, n):
            raise ValueError(f"simplex has shape {simplex.shape}, expected {(n + 1, n)}")
    fvals = np.array([fun(v) for v in simplex])
    # stable sort keeps x0 first on ties, so flat landscapes return x0
    order = np.argsort(fvals, kind="stable")
    simplex, fvals = simplex[order], fvals[order]
    best_x, best_f = simplex[0].copy(), fvals[0]

    rho, chi, psi, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    iterations = 0
    while iterations < opts.max_iterations and n > 0:
        if opts.f_tol is not None and opts.x_tol is not None:
            if (np.max(np.abs(fvals[0] - fvals[1:])) <= opts.f_tol
                    and np.max(np.abs(simplex[1:] - simplex[0])) <= opts.x_tol):
                break
        iterations += 1
        xbar = simplex[:n].mean(axis=0)
        worst = simplex[n]
        xr = (1 + rho) * xbar - rho * worst
        fr = fun(xr)
        shrink = False
        if fr < fvals[0]:
            xe = (1 + rho * chi) * xbar - rho * chi * worst
            fe = fun(xe)
            if fe < fr:
                simplex[n], fvals[n] = xe, fe
            else:
                simplex[n], fvals[n] = xr, fr
        elif fr < fvals[n - 1]:
            simplex[n], fvals[n] = xr, fr
        elif fr < fvals[n]:
            xc = (1 + psi * rho) * xbar - psi * rho * worst
            fc = fun(xc)
            if fc <= fr:
                simplex[n], fvals[n] = xc, fc
            else:
                shrink = True
        else:
            xcc = (1 - psi) * xbar + psi * worst
            fcc = fun(xcc)
            if fcc < fvals[n]:
                simplex[n], fvals[n] = xcc, fcc
            else:
                shrink = True
        if shrink:
            simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
            if iterations == opts.max_iterations:
                break
            fvals[1:] = [fun(v) for v in simplex[1:]]
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if fvals[0] < best_f:
            best_x, best_f = simplex[0].copy(), fvals[0]

    return OptimResult(best_x, float(best_f), iterations, evaluations,
                       time.perf_counter() - started, simplex.copy())
