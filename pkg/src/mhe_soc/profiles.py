"""Modified HPPC current profile and the Gaussian measurement-noise stream."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RNG_NAME = f"numpy.random.PCG64 (numpy {np.__version__})"


@dataclass(frozen=True)
class HppcProfile:
    """Periodic discharge / rest / charge pulse train.

    Discharge current is positive.  ``i_1c`` is the 1C current in amperes,
    i.e. ``Cn / 3600`` for a capacity expressed in ampere-seconds.
    """

    i_1c: float
    discharge_s: float = 20.0
    rest_s: float = 30.0
    charge_s: float = 10.0
    c_rate_discharge: float = 1.0
    c_rate_charge: float = 0.5

    @classmethod
    def for_capacity(cls, capacity_Cn: float, **kwargs) -> "HppcProfile":
        return cls(i_1c=capacity_Cn / 3600.0, **kwargs)

    @property
    def period(self) -> float:
        return self.discharge_s + self.rest_s + self.charge_s

    @property
    def mean_current(self) -> float:
        charge = self.c_rate_discharge * self.discharge_s - self.c_rate_charge * self.charge_s
        return charge * self.i_1c / self.period


@dataclass(frozen=True)
class NoiseSpec:
    mean: float = 0.0
    std_dev: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.std_dev < 0:
            raise ValueError("std_dev must be >= 0")


def current_at(profile: HppcProfile, t: float) -> float:
    """Piecewise-constant profile current at time ``t`` (periodic)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    phase = t % profile.period
    if phase < profile.discharge_s:
        return profile.c_rate_discharge * profile.i_1c
    if phase < profile.discharge_s + profile.rest_s:
        return 0.0
    return -profile.c_rate_charge * profile.i_1c


def noise_stream(spec: NoiseSpec, n: int) -> np.ndarray:
    """``n`` i.i.d. normal draws, fully determined by ``spec.seed``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if spec.std_dev == 0:
        return np.full(n, float(spec.mean))
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    return rng.normal(spec.mean, spec.std_dev, size=n)
