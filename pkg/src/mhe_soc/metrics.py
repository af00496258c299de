"""Accuracy metrics."""
from __future__ import annotations

import numpy as np

from .exceptions import EmptyRange


def rmse(estimates, truth, t=None, from_t: float | None = None) -> float:
    """Root-mean-square difference, optionally restricted to ``t >= from_t``."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    if from_t is not None:
        if t is None:
            raise ValueError("from_t needs timestamps")
        mask = np.asarray(t, dtype=float) >= from_t
        est, ref = est[mask], ref[mask]
    if est.size == 0:
        raise EmptyRange("no samples in the requested range")
    return float(np.sqrt(np.mean((est - ref) ** 2)))
