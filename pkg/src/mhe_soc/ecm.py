"""First-order equivalent-circuit battery model with SOC-dependent parameters.

State is ``(Z, V1)``: state of charge and the polarization voltage across the
RC pair.  Every circuit element is a polynomial in ``Z`` whose coefficients
are stored low-order-first.  Positive current means discharge.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import LengthMismatch, NonFiniteState

ORDER0 = "order0-only"
FULL = "order0-3-full"
FROZEN = "frozen"
THETA_SELECTIONS = (ORDER0, FULL, FROZEN)

# Names of the coefficient vectors that can be estimated, in packing order.
_THETA_FIELDS = ("alpha_r0", "alpha_r1", "alpha_c1")


def _as_tuple(values) -> tuple:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class EcmParameters:
    alpha_ocv: tuple
    alpha_r0: tuple
    alpha_r1: tuple
    alpha_c1: tuple
    capacity_Cn: float = 7200.0
    eta: float = 1.0
    Ts: float = 1.0

    def __post_init__(self):
        for name in ("alpha_ocv",) + _THETA_FIELDS:
            coeffs = _as_tuple(getattr(self, name))
            if not coeffs:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, coeffs)
        if not self.capacity_Cn > 0:
            raise ValueError("capacity_Cn must be > 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.Ts > 0:
            raise ValueError("Ts must be > 0")

    def ocv(self, z: float) -> float:
        return eval_poly(self.alpha_ocv, z)

    def r0(self, z: float) -> float:
        return eval_poly(self.alpha_r0, z)

    def r1(self, z: float) -> float:
        return eval_poly(self.alpha_r1, z)

    def c1(self, z: float) -> float:
        return eval_poly(self.alpha_c1, z)

    def to_dict(self) -> dict:
        return {
            "alpha_ocv": list(self.alpha_ocv),
            "alpha_r0": list(self.alpha_r0),
            "alpha_r1": list(self.alpha_r1),
            "alpha_c1": list(self.alpha_c1),
            "capacity_Cn": self.capacity_Cn,
            "eta": self.eta,
            "Ts": self.Ts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EcmParameters":
        expected = set(cls.__dataclass_fields__)
        unknown = set(data) - expected
        missing = expected - set(data)
        if unknown or missing:
            raise ValueError(
                f"parameter document keys mismatch: unknown={sorted(unknown)}, missing={sorted(missing)}"
            )
        return cls(**data)


class PlantState(NamedTuple):
    Z: float
    V1: float


def default_parameters() -> EcmParameters:
    """Synthetic reference cell.

    2 Ah, OCV 3.0 V to 4.15 V, ohmic resistance 30-48 mOhm, polarization
    resistance 17-25 mOhm, polarization capacitance 1.65-2.75 kF.
    """
    return EcmParameters(
        alpha_ocv=(3.0043, 4.2634, -15.6641, 35.8101, -45.6639, 30.7841, -8.3862),
        alpha_r0=(0.048, -0.064, 0.072, -0.024),
        alpha_r1=(0.025, -0.030, 0.035, -0.012),
        alpha_c1=(1650.0, 1650.0, -1100.0, 550.0),
        capacity_Cn=7200.0,
        eta=1.0,
        Ts=1.0,
    )


def load_parameters(path) -> EcmParameters:
    with open(path) as fh:
        return EcmParameters.from_dict(json.load(fh))


def save_parameters(params: EcmParameters, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


def eval_poly(coeffs: Sequence[float], z: float) -> float:
    """Evaluate ``sum(coeffs[i] * z**i)`` with Horner's scheme."""
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def _time_constant_decay(params: EcmParameters, z: float):
    r1 = params.r1(z)
    tau = r1 * params.c1(z)
    try:
        decay = math.exp(-params.Ts / tau)
    except (ZeroDivisionError, OverflowError) as exc:
        raise NonFiniteState(f"R1*C1 = {tau!r} gives a non-finite decay factor") from exc
    return r1, decay


def step(params: EcmParameters, state: PlantState, current: float) -> PlantState:
    """Advance one sampling period; R1 and C1 are evaluated at the pre-step SOC."""
    z, v1 = state
    r1, decay = _time_constant_decay(params, z)
    z_next = z - params.eta * params.Ts * current / params.capacity_Cn
    v1_next = decay * v1 + (1.0 - decay) * r1 * current
    if not (math.isfinite(z_next) and math.isfinite(v1_next)):
        raise NonFiniteState(f"non-finite state after step: Z={z_next}, V1={v1_next}")
    return PlantState(z_next, v1_next)


def output(params: EcmParameters, state: PlantState, current: float) -> float:
    """Terminal voltage ``V_OCV(Z) - I*R0(Z) - V1``."""
    z, v1 = state
    return params.ocv(z) - current * params.r0(z) - v1


def theta_arity(selection: str) -> int:
    if selection == ORDER0:
        return len(_THETA_FIELDS)
    if selection == FULL:
        return 4 * len(_THETA_FIELDS)
    if selection == FROZEN:
        return 0
    raise ValueError(f"unknown theta selection {selection!r}; expected one of {THETA_SELECTIONS}")


def theta_labels(selection: str) -> list[str]:
    theta_arity(selection)
    if selection == FROZEN:
        return []
    orders = [0] if selection == ORDER0 else [0, 1, 2, 3]
    return [f"{name}_{i}" for name in _THETA_FIELDS for i in orders]


def pack_theta(params: EcmParameters, selection: str) -> np.ndarray:
    """Flatten the estimated coefficient subset into a vector."""
    theta_arity(selection)
    if selection == FROZEN:
        return np.empty(0)
    if selection == ORDER0:
        return np.array([getattr(params, name)[0] for name in _THETA_FIELDS])
    out = []
    for name in _THETA_FIELDS:
        coeffs = getattr(params, name)
        if len(coeffs) != 4:
            raise LengthMismatch(f"{name} has {len(coeffs)} coefficients; full selection needs 4")
        out.extend(coeffs)
    return np.array(out)


def unpack_theta(base: EcmParameters, theta, selection: str) -> EcmParameters:
    """Return ``base`` with the selected coefficients overwritten by ``theta``."""
    n = theta_arity(selection)
    theta = [float(v) for v in np.asarray(theta, dtype=float).ravel()]
    if len(theta) != n:
        raise LengthMismatch(f"theta has length {len(theta)}, selection {selection!r} needs {n}")
    if selection == FROZEN:
        return base
    updates = {}
    for j, name in enumerate(_THETA_FIELDS):
        coeffs = list(getattr(base, name))
        if selection == ORDER0:
            coeffs[0] = theta[j]
        else:
            if len(coeffs) != 4:
                raise LengthMismatch(f"{name} has {len(coeffs)} coefficients; full selection needs 4")
            coeffs = theta[4 * j : 4 * j + 4]
        updates[name] = tuple(coeffs)
    return replace(base, **updates)


def perturbed_guess(params: EcmParameters, order0_scale: float = 1.2, higher_scale: float = 0.8) -> EcmParameters:
    """Scale order-0 coefficients and higher-order ones separately (initial guess helper)."""
    updates = {}
    for name in _THETA_FIELDS:
        coeffs = getattr(params, name)
        updates[name] = (coeffs[0] * order0_scale,) + tuple(c * higher_scale for c in coeffs[1:])
    return replace(params, **updates)
