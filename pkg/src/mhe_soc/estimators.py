"""scikit-learn style front-end to the streaming estimator.

``X`` holds one row per base-rate sample with columns ``[t, current]`` and
``y`` the measured terminal voltage.  ``fit`` streams the whole record
through a :class:`~mhe_soc.mhe.MovingHorizonEstimator`; ``predict`` returns
the SOC estimate at the requested timestamps.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import ecm
from .mhe import MheConfig, MovingHorizonEstimator
from .optim import SimplexOptions
from .window import Schedule, dirty_derivative, pseudo_integrator


def _schedule(layout: str, N: int, n_ts: int) -> Schedule:
    if layout == "standard":
        return Schedule.uniform(N, n_ts)
    if layout == "multi_rate":
        return Schedule.multi_rate()
    if layout == "filtered":
        return Schedule.filtered(N, n_ts, [dirty_derivative(), pseudo_integrator()])
    raise ValueError(f"unknown layout {layout!r}")


class SocEstimator(BaseEstimator):
    """Batch wrapper: fit on a recorded drive cycle, predict SOC at its timestamps.

    ``initial_params=None`` starts from the reference cell with its resistive
    and capacitive coefficients perturbed (the usual unknown-model setting).
    """

    def __init__(self, layout="standard", N=30, n_ts=20, theta_selection=ecm.FULL, z0=0.85,
                 max_iterations=1, simplex_mode="persistent", initial_params=None):
        self.layout = layout
        self.N = N
        self.n_ts = n_ts
        self.theta_selection = theta_selection
        self.z0 = z0
        self.max_iterations = max_iterations
        self.simplex_mode = simplex_mode
        self.initial_params = initial_params

    def _config(self) -> MheConfig:
        return MheConfig(_schedule(self.layout, self.N, self.n_ts), self.theta_selection,
                         optimizer=SimplexOptions(max_iterations=self.max_iterations),
                         simplex_mode=self.simplex_mode)

    def _check_time(self, t: np.ndarray, Ts: float) -> None:
        if len(t) > 1 and not np.allclose(np.diff(t), Ts, rtol=0, atol=1e-9 * max(1.0, Ts)):
            raise ValueError(f"timestamps must be evenly spaced by Ts={Ts}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError(f"X must have columns [t, current]; got {X.shape[1]} columns")
        params = self.initial_params or ecm.perturbed_guess(ecm.default_parameters())
        self._check_time(X[:, 0], params.Ts)
        est = MovingHorizonEstimator(params, self._config(), z0=self.z0)
        n = len(y)
        soc, v1 = np.empty(n), np.empty(n)
        theta = np.empty((n, len(est.theta)))
        updated = np.zeros(n, dtype=bool)
        for k in range(n):
            out = est.step(X[k, 0], y[k], X[k, 1])
            soc[k], v1[k] = out.xi_now
            theta[k] = out.theta
            updated[k] = out.updated
        self.t_ = X[:, 0].copy()
        self.soc_ = soc
        self.v1_ = v1
        self.theta_path_ = theta
        self.theta_ = theta[-1].copy()
        self.params_ = est.params
        self.updated_ = updated
        self.fill_time_ = float(X[0, 0] + est.fill_index * params.Ts)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """SOC estimate at each row's timestamp (must be one of the fitted timestamps)."""
        check_is_fitted(self, "soc_")
        X = check_array(X, dtype=float)
        if X.shape[1] not in (1, 2):
            raise ValueError("X must have the timestamp in its first column")
        t = X[:, 0]
        idx = np.searchsorted(self.t_, t)
        idx = np.clip(idx, 0, len(self.t_) - 1)
        if not np.allclose(self.t_[idx], t, rtol=0, atol=1e-9):
            raise ValueError("predict only covers timestamps seen in fit")
        return self.soc_[idx]

    def score(self, X, y):
        """Negative RMSE between predicted and reference SOC over post-fill rows."""
        pred = self.predict(X)
        mask = np.asarray(X, dtype=float)[:, 0] >= self.fill_time_
        if not mask.any():
            raise ValueError("no rows after the window filled")
        return -float(np.sqrt(np.mean((pred[mask] - np.asarray(y, dtype=float)[mask]) ** 2)))
