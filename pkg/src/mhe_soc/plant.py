"""Ground-truth plant: rolls the model forward under the HPPC profile."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ecm
from .profiles import RNG_NAME, HppcProfile, NoiseSpec, current_at, noise_stream

CSV_COLUMNS = ("t", "I", "Z", "V1", "Vb_clean", "Vb_noisy")


@dataclass
class TruthLog:
    t: np.ndarray
    I: np.ndarray
    Z: np.ndarray
    V1: np.ndarray
    Vb_clean: np.ndarray
    Vb_noisy: np.ndarray
    clamped: bool = False
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def Ts(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            cols = [getattr(self, name) for name in CSV_COLUMNS]
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "TruthLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}")
            rows = [[float(v) for v in row] for row in reader]
        data = np.array(rows, dtype=float).reshape(-1, len(CSV_COLUMNS))
        meta_path = Path(path).with_suffix(".json")
        metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(*(data[:, j].copy() for j in range(len(CSV_COLUMNS))),
                   clamped=bool(metadata.get("clamped", False)), metadata=metadata)

    def write(self, csv_path) -> None:
        """CSV plus a JSON metadata sidecar next to it."""
        self.to_csv(csv_path)
        meta = dict(self.metadata, clamped=self.clamped)
        Path(csv_path).with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def params_hash(params: ecm.EcmParameters) -> str:
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def simulate(params: ecm.EcmParameters, profile: HppcProfile, noise: NoiseSpec,
             z0: float = 0.9, horizon_s: float = 8000.0, v1_0: float = 0.0) -> TruthLog:
    """Simulate ``horizon_s`` seconds, logging samples at ``t = 0, Ts, ..., horizon_s``.

    Current is held over each period (zero-order hold).  SOC is clamped to
    ``[0, 1]``; a clamp ends the run early and sets ``clamped``.
    """
    if not 0.0 <= z0 <= 1.0:
        raise ValueError("z0 must lie in [0, 1]")
    if horizon_s < params.Ts:
        raise ValueError("horizon_s must be >= Ts")
    n = int(math.floor(horizon_s / params.Ts + 1e-9)) + 1
    draws = noise_stream(noise, n)

    t = np.arange(n) * params.Ts
    cur = np.empty(n)
    z = np.empty(n)
    v1 = np.empty(n)
    vb = np.empty(n)
    state = ecm.PlantState(float(z0), float(v1_0))
    clamped = False
    last = n
    for k in range(n):
        i_k = current_at(profile, t[k])
        cur[k] = i_k
        z[k], v1[k] = state
        vb[k] = ecm.output(params, state, i_k)
        if k == n - 1:
            break
        nxt = ecm.step(params, state, i_k)
        if not 0.0 <= nxt.Z <= 1.0:
            clamped = True
            last = k + 2
            nxt = ecm.PlantState(min(max(nxt.Z, 0.0), 1.0), nxt.V1)
            state = nxt
            t_k1 = t[k + 1]
            cur[k + 1] = current_at(profile, t_k1)
            z[k + 1], v1[k + 1] = state
            vb[k + 1] = ecm.output(params, state, cur[k + 1])
            break
        state = nxt

    sl = slice(0, last)
    metadata = {
        "seed": noise.seed,
        "noise_mean": noise.mean,
        "noise_std": noise.std_dev,
        "rng": RNG_NAME,
        "params_sha256": params_hash(params),
        "params": params.to_dict(),
        "z0": z0,
        "horizon_s": horizon_s,
    }
    return TruthLog(t[sl].copy(), cur[sl].copy(), z[sl].copy(), v1[sl].copy(), vb[sl].copy(),
                    vb[sl] + draws[sl], clamped=clamped, metadata=metadata)
