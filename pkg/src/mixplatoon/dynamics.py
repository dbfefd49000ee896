"""Longitudinal point-mass kinematics shared by every vehicle type.

Units throughout the package: feet, seconds, ft/s, ft/s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericAbort

DT = 0.1


@dataclass(frozen=True)
class VehicleParams:
    length: float = 15.0
    standstill_spacing: float = 21.0
    accel_min: float = -13.0
    accel_max: float = 13.0
    desired_time_gap: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise InvalidInputError("vehicle length must be positive")
        if not self.accel_min < 0 < self.accel_max:
            raise InvalidInputError("need accel_min < 0 < accel_max")
        if not self.desired_time_gap > 0:
            raise InvalidInputError("desired_time_gap must be positive")
        if self.standstill_spacing < 0:
            raise InvalidInputError("standstill_spacing must be non-negative")

    def equilibrium_spacing(self, v):
        """Constant-time-gap target spacing ``v * tau + l_i`` (front bumper to front bumper)."""
        return v * self.desired_time_gap + self.standstill_spacing


@dataclass(frozen=True)
class VehicleState:
    position: float
    speed: float
    accel: float = 0.0


def step_kinematics(state: VehicleState, accel_cmd: float, dt: float = DT,
                    params: VehicleParams = VehicleParams()) -> VehicleState:
    """Advance one vehicle by ``dt`` with semi-implicit Euler.

    The command is clamped to the actuation limits and the speed is floored at
    zero; the returned ``accel`` is the acceleration actually realised.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if not all(math.isfinite(x) for x in (state.position, state.speed, accel_cmd, dt)):
        raise NumericAbort("non-finite input to step_kinematics")
    x, v, a = integrate(np.array([state.position]), np.array([state.speed]),
                        np.array([accel_cmd], dtype=float), dt, params)
    return VehicleState(float(x[0]), float(v[0]), float(a[0]))


def integrate(positions: np.ndarray, speeds: np.ndarray, accel_cmds: np.ndarray,
              dt: float, params: VehicleParams):
    """Vectorised form of :func:`step_kinematics`; returns new ``(x, v, a)`` arrays."""
    a = np.clip(accel_cmds, params.accel_min, params.accel_max)
    v_new = np.maximum(0.0, speeds + a * dt)
    x_new = positions + v_new * dt
    a_eff = np.where(v_new == speeds + a * dt, a, (v_new - speeds) / dt)
    return x_new, v_new, a_eff


def spacing_and_gap(leader: VehicleState, follower: VehicleState,
                    params: VehicleParams = VehicleParams()) -> tuple[float, float]:
    """Front-to-front spacing ``d`` and bumper-to-bumper gap ``g = d - length``.

    Overlap is reported as a non-positive gap rather than raised.
    """
    d = leader.position - follower.position
    return d, d - params.length
