"""Run configuration: JSON document, schema validation, and object builders."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from . import ecm
from .exceptions import ConfigError
from .mhe import MheConfig
from .optim import SimplexOptions
from .parallel import ParallelConfig
from .profiles import HppcProfile, NoiseSpec
from .window import FilterSpec, Schedule, dirty_derivative, pseudo_integrator

MODES = ("standard", "multi_rate", "parallel", "filtered")
FILTER_KINDS = {"dirty_derivative": dirty_derivative, "pseudo_integrator": pseudo_integrator}

_positive_int = {"type": "integer", "minimum": 1}
_segment = {"type": "array", "items": _positive_int, "minItems": 2, "maxItems": 2}
_filter = {
    "oneOf": [
        {"type": "string", "enum": sorted(FILTER_KINDS)},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {"kind": {"enum": sorted(FILTER_KINDS)}, "tau": {"type": "number", "exclusiveMinimum": 0}},
        },
    ]
}
_estimator_core = {
    "N": _positive_int,
    "n_ts": _positive_int,
    "segments": {"type": "array", "items": _segment, "minItems": 1},
    "filters": {"type": "array", "items": _filter},
    "stride": _positive_int,
    "theta_selection": {"enum": [ecm.ORDER0, ecm.FULL, ecm.FROZEN]},
    "max_iterations": {"type": "integer", "minimum": 0},
    "w_output": {"type": "number", "minimum": 0},
    "w_state": {"type": "number", "minimum": 0},
    "w_theta": {"type": "number", "minimum": 0},
    "barrier_M": {"type": "number", "minimum": 1e5},
    "simplex_mode": {"enum": ["restart", "persistent", "adaptive"]},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "params": {"type": ["string", "null"]},
                "z0": {"type": "number", "minimum": 0, "maximum": 1},
                "horizon_s": {"type": "number", "exclusiveMinimum": 0},
                "profile": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "number", "minimum": 0} for k in ("discharge_s", "rest_s", "charge_s")},
                },
                "noise": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mean": {"type": "number"},
                        "std_dev": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(MODES)},
                "z0_guess": {"type": "number", "minimum": 0, "maximum": 1},
                "guess": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "params": {"type": ["string", "null"]},
                        "order0_scale": {"type": "number"},
                        "higher_scale": {"type": "number"},
                    },
                },
                **_estimator_core,
                "fast": {"type": "object", "additionalProperties": False, "properties": dict(_estimator_core)},
                "handoff_period_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "record_timing": {"type": "boolean"}},
        },
    },
}

DEFAULTS = {
    "plant": {
        "params": None,
        "z0": 0.9,
        "horizon_s": 8000.0,
        "profile": {"discharge_s": 20.0, "rest_s": 30.0, "charge_s": 10.0},
        "noise": {"mean": 0.0, "std_dev": 0.05, "seed": 0},
    },
    "estimator": {
        "mode": "standard",
        "z0_guess": 0.85,
        "guess": {"params": None, "order0_scale": 1.2, "higher_scale": 0.8},
        "theta_selection": ecm.FULL,
        "max_iterations": 1,
        "simplex_mode": "persistent",
        "handoff_period_s": 20.0,
    },
    "output": {"dir": ".", "record_timing": True},
}

# Schedule defaults that depend on the mode.
MODE_DEFAULTS = {
    "standard": {"N": 30, "n_ts": 20},
    "multi_rate": {"segments": [[5, 1], [25, 20]]},
    "filtered": {"N": 10, "n_ts": 20, "filters": ["dirty_derivative", "pseudo_integrator"]},
    "parallel": {"segments": [[5, 1], [25, 20]]},
}
FAST_DEFAULTS = {"N": 30, "n_ts": 2, "theta_selection": ecm.FROZEN}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(document: dict) -> None:
    """Raise ConfigError naming the offending key path on any schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            path = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"{path}: {err.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


class RunConfig:
    """Validated configuration with every default filled in."""

    def __init__(self, document: dict | None = None, base_dir: Path | None = None):
        document = {} if document is None else document
        validate(document)
        resolved = _merge(DEFAULTS, document)
        est = resolved["estimator"]
        given = document.get("estimator", {})
        for key, value in MODE_DEFAULTS[est["mode"]].items():
            est.setdefault(key, value)
        if est["mode"] == "parallel":
            est["fast"] = _merge(FAST_DEFAULTS, given.get("fast", {}))
            if est["fast"]["theta_selection"] != ecm.FROZEN:
                raise ConfigError("estimator/fast/theta_selection: the fast estimator must be frozen")
        elif "fast" in given or "handoff_period_s" in given:
            raise ConfigError("estimator/fast, estimator/handoff_period_s: only valid in parallel mode")
        if est["mode"] in ("standard", "filtered") and "segments" in given:
            raise ConfigError(f"estimator/segments: not used in {est['mode']} mode")
        if est["mode"] in ("multi_rate", "parallel") and ("N" in given or "n_ts" in given):
            raise ConfigError(f"estimator/N, estimator/n_ts: {est['mode']} mode takes segments")
        if est["mode"] != "filtered" and "filters" in given:
            raise ConfigError("estimator/filters: only valid in filtered mode")
        self.data = resolved
        self.base_dir = Path(base_dir) if base_dir is not None else Path(".")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls(document, base_dir=path.parent)

    # -- identity -------------------------------------------------------------
    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def record_timing(self) -> bool:
        return bool(self.data["output"]["record_timing"])

    # -- builders -------------------------------------------------------------
    def _path(self, value) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def plant_params(self) -> ecm.EcmParameters:
        path = self.data["plant"]["params"]
        if path is None:
            return ecm.default_parameters()
        full = self._path(path)
        if not full.is_file():
            raise ConfigError(f"plant/params: file not found: {full}")
        return ecm.load_parameters(full)

    def profile(self, params: ecm.EcmParameters) -> HppcProfile:
        prof = self.data["plant"]["profile"]
        return HppcProfile(i_1c=params.capacity_Cn / 3600.0, **prof)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(**self.data["plant"]["noise"])

    def guess_params(self, truth_params: ecm.EcmParameters) -> ecm.EcmParameters:
        guess = self.data["estimator"]["guess"]
        if guess["params"] is not None:
            full = self._path(guess["params"])
            if not full.is_file():
                raise ConfigError(f"estimator/guess/params: file not found: {full}")
            return ecm.load_parameters(full)
        return ecm.perturbed_guess(truth_params, guess["order0_scale"], guess["higher_scale"])

    @staticmethod
    def _schedule(section: dict, mode: str) -> Schedule:
        stride = section.get("stride")
        if mode in ("multi_rate", "parallel"):
            return Schedule.multi_rate(tuple(tuple(s) for s in section["segments"]), stride=stride)
        if mode == "filtered":
            specs = []
            for item in section["filters"]:
                if isinstance(item, str):
                    specs.append(FILTER_KINDS[item]())
                else:
                    maker = FILTER_KINDS[item["kind"]]
                    specs.append(maker(item["tau"]) if "tau" in item else maker())
            return Schedule.filtered(section["N"], section["n_ts"], specs, stride=stride)
        return Schedule.uniform(section["N"], section["n_ts"], stride=stride)

    @staticmethod
    def _mhe_config(section: dict, schedule: Schedule, defaults: dict) -> MheConfig:
        get = lambda key: section.get(key, defaults.get(key))
        kwargs = dict(
            schedule=schedule,
            theta_selection=get("theta_selection"),
            optimizer=SimplexOptions(max_iterations=get("max_iterations")),
            simplex_mode=get("simplex_mode"),
        )
        for key in ("w_output", "w_state", "w_theta", "barrier_M"):
            if section.get(key) is not None:
                kwargs[key] = section[key]
        try:
            return MheConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"estimator: {exc}") from exc

    def mhe_config(self) -> MheConfig:
        est = self.data["estimator"]
        if est["mode"] == "parallel":
            raise ConfigError("parallel mode has two estimator configurations; use parallel_config()")
        return self._mhe_config(est, self._schedule(est, est["mode"]), est)

    def parallel_config(self) -> ParallelConfig:
        est = self.data["estimator"]
        slow = self._mhe_config(est, self._schedule(est, "parallel"), est)
        fast_section = est["fast"]
        fast = self._mhe_config(fast_section, self._schedule(fast_section, "standard"), est)
        return ParallelConfig(slow=slow, fast=fast, handoff_period_s=est["handoff_period_s"])


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)
