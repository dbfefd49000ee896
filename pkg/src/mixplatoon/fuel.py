"""VT-Micro instantaneous fuel-rate model.

The coefficient table lives in a unit-tagged JSON file. Speeds and
accelerations arrive in ft/s and ft/s^2, are clamped to the admissible
range, converted to the table's native units, and pushed through::

    rate = exp( sum_{i,j=0..3} K[i][j] * v**i * a**j )

with ``K_pos`` for ``a >= 0`` and ``K_neg`` otherwise. Rates are returned in ml/s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

FT = 0.3048

# factor that turns a value in ft/s (or ft/s^2) into the named unit
SPEED_UNITS = {
    "ft/s": 1.0,
    "m/s": FT,
    "km/h": FT * 3.6,
    "mph": 3600.0 / 5280.0,
}
ACCEL_UNITS = {
    "ft/s2": 1.0,
    "ft/s^2": 1.0,
    "m/s2": FT,
    "m/s^2": FT,
    "km/h/s": FT * 3.6,
    "mph/s": 3600.0 / 5280.0,
}
RATE_UNITS = {"ml/s": 1.0, "L/s": 1000.0}


@dataclass(frozen=True)
class VtMicroTable:
    k_pos: np.ndarray
    k_neg: np.ndarray
    speed_unit: str = "km/h"
    accel_unit: str = "km/h/s"
    rate_unit: str = "L/s"

    def __post_init__(self):
        for name in ("k_pos", "k_neg"):
            k = np.asarray(getattr(self, name), dtype=float)
            if k.shape != (4, 4) or not np.all(np.isfinite(k)):
                raise ConfigError(f"VT-Micro {name} must be a finite 4x4 table")
            k.setflags(write=False)
            object.__setattr__(self, name, k)
        if self.speed_unit not in SPEED_UNITS:
            raise ConfigError(f"unknown speed unit {self.speed_unit!r}")
        if self.accel_unit not in ACCEL_UNITS:
            raise ConfigError(f"unknown accel unit {self.accel_unit!r}")
        if self.rate_unit not in RATE_UNITS:
            raise ConfigError(f"unknown rate unit {self.rate_unit!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "VtMicroTable":
        try:
            return cls(
                k_pos=np.array(d["K_pos"], dtype=float),
                k_neg=np.array(d["K_neg"], dtype=float),
                speed_unit=d["speed_unit"],
                accel_unit=d["accel_unit"],
                rate_unit=d.get("rate_unit", "ml/s"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed VT-Micro table: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "speed_unit": self.speed_unit,
            "accel_unit": self.accel_unit,
            "rate_unit": self.rate_unit,
            "K_pos": self.k_pos.tolist(),
            "K_neg": self.k_neg.tolist(),
        }

    @classmethod
    def load(cls, path) -> "VtMicroTable":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read VT-Micro table {path}: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def constant(cls, rate_ml_s: float) -> "VtMicroTable":
        """Degenerate table whose rate is ``rate_ml_s`` for every input."""
        k = np.zeros((4, 4))
        k[0, 0] = np.log(rate_ml_s)
        return cls(k, k.copy(), "ft/s", "ft/s2", "ml/s")


def default_table() -> VtMicroTable:
    text = resources.files("mixplatoon").joinpath("data/vtmicro_default.json").read_text()
    return VtMicroTable.from_dict(json.loads(text))


def vt_micro_fuel(v, a, table: VtMicroTable, v_f: float = 124.0,
                  a_min: float = -13.0, a_max: float = 13.0):
    """Fuel rate in ml/s for speed ``v`` (ft/s) and acceleration ``a`` (ft/s^2).

    Accepts scalars or arrays; returns the same shape.
    """
    v = np.clip(np.asarray(v, dtype=float), 0.0, v_f) * SPEED_UNITS[table.speed_unit]
    a_ft = np.clip(np.asarray(a, dtype=float), a_min, a_max)
    a = a_ft * ACCEL_UNITS[table.accel_unit]
    vp = np.stack(np.broadcast_arrays(np.ones_like(v), v, v * v, v * v * v))
    ap = np.stack(np.broadcast_arrays(np.ones_like(a), a, a * a, a * a * a))
    pos = np.einsum("ij,i...,j...->...", table.k_pos, vp, ap)
    neg = np.einsum("ij,i...,j...->...", table.k_neg, vp, ap)
    out = np.exp(np.where(a_ft >= 0, pos, neg)) * RATE_UNITS[table.rate_unit]
    return float(out) if out.ndim == 0 else out
