"""Non-CAV behaviour: leader playback, IDM human drivers, synthetic stop-and-go leaders."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DT
from .errors import ConfigError, InvalidInputError, RangeError

SPACING_TOL = 1e-9


@dataclass(frozen=True)
class IdmParams:
    """Intelligent driver model parameters in feet and seconds.

    Defaults are common calibration values converted from SI (v0 matched to
    the 124 ft/s free-flow speed).
    """

    desired_speed: float = 124.0
    time_headway: float = 1.5
    min_gap: float = 6.6
    max_accel: float = 3.3
    comfortable_decel: float = 5.5
    exponent: float = 4.0

    def __post_init__(self):
        for name in ("desired_speed", "time_headway", "min_gap", "max_accel",
                     "comfortable_decel", "exponent"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"IDM parameter {name} must be positive")


def idm_accel(v: float, delta_v: float, gap: float, p: IdmParams = IdmParams()) -> float:
    """IDM acceleration.

    ``delta_v`` is leader speed minus follower speed, so an approaching
    follower has ``delta_v < 0``. The dynamic part of the desired gap is
    floored at zero.
    """
    if not gap > 0:
        raise InvalidInputError(f"IDM needs a positive gap, got {gap}")
    s_star = p.min_gap + max(0.0, v * p.time_headway
                             - v * delta_v / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    return p.max_accel * (1.0 - (v / p.desired_speed) ** p.exponent - (s_star / gap) ** 2)


def idm_accel_array(v: np.ndarray, delta_v: np.ndarray, gap: np.ndarray,
                    p: IdmParams = IdmParams()) -> np.ndarray:
    gap = np.asarray(gap, dtype=float)
    if np.any(gap <= 0):
        raise InvalidInputError("IDM needs positive gaps")
    s_star = p.min_gap + np.maximum(
        0.0, v * p.time_headway - v * delta_v / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    return p.max_accel * (1.0 - (v / p.desired_speed) ** p.exponent - (s_star / gap) ** 2)


def idm_equilibrium_gap(v: float, p: IdmParams = IdmParams()) -> float:
    """Gap at which a follower at steady speed ``v`` has zero IDM acceleration."""
    if not 0 <= v < p.desired_speed:
        raise InvalidInputError("equilibrium gap only exists for 0 <= v < desired_speed")
    return (p.min_gap + v * p.time_headway) / math.sqrt(1.0 - (v / p.desired_speed) ** p.exponent)


@dataclass(frozen=True)
class LeaderTrajectory:
    """Uniformly sampled leader speed profile."""

    times: np.ndarray
    speeds: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise InvalidInputError("times and speeds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InvalidInputError("trajectory contains non-finite values")
        if np.any(v < 0):
            raise InvalidInputError("trajectory speeds must be non-negative")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise InvalidInputError("trajectory times must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > SPACING_TOL:
                raise InvalidInputError("trajectory must be uniformly sampled")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "speeds", v)
        if self.positions is not None:
            x = np.asarray(self.positions, dtype=float)
            if x.shape != t.shape:
                raise InvalidInputError("positions must match times")
            x.setflags(write=False)
            object.__setattr__(self, "positions", x)

    def __len__(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else DT

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


def playback_speed(traj: LeaderTrajectory, t: float) -> float:
    """Linearly interpolated leader speed at time ``t``."""
    t0, t1 = traj.times[0], traj.times[-1]
    if t < t0 - SPACING_TOL or t > t1 + SPACING_TOL:
        raise RangeError(f"t={t} outside trajectory [{t0}, {t1}]")
    return float(np.interp(t, traj.times, traj.speeds))


def synth_stop_and_go(duration: float, base_speed: float, n_waves: int, amplitude: float,
                      standstill: bool = False, seed: int = 0, dt: float = DT) -> LeaderTrajectory:
    """Seeded synthetic leader with smooth deceleration/acceleration waves.

    Each wave is a raised-cosine speed dip placed at a random position inside
    its own slot of the timeline, with cruising segments in between. With
    ``standstill=True`` the dips overshoot zero and are clipped, producing
    stopped plateaus.
    """
    n = int(round(duration / dt))
    if n < 1:
        raise InvalidInputError("duration shorter than one sample")
    t = np.arange(n) * dt
    rng = np.random.default_rng(seed)
    dip = np.zeros(n)
    if n_waves > 0 and amplitude > 0:
        slot = t[-1] / n_waves if n > 1 else 0.0
        for w in range(n_waves):
            width = rng.uniform(0.6, 0.9) * slot
            start = w * slot + rng.uniform(0.0, slot - width)
            phase = (t - start) / width
            inside = (phase >= 0) & (phase <= 1)
            bump = np.where(inside, 0.5 * (1.0 - np.cos(2.0 * np.pi * phase)), 0.0)
            dip = np.maximum(dip, bump * rng.uniform(0.8, 1.0))
    depth = amplitude
    if standstill:
        depth = max(amplitude, base_speed * 1.25)
    v = np.maximum(0.0, base_speed - depth * dip)
    return LeaderTrajectory(t, v)


def read_trajectory_csv(path) -> LeaderTrajectory:
    """Read a ``t,v`` CSV (seconds, ft/s)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"trajectory file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "v"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected header 't,v'")
        rows = [(float(r["t"]), float(r["v"])) for r in reader]
    if not rows:
        raise ConfigError(f"{path}: no samples")
    times, speeds = zip(*rows)
    try:
        return LeaderTrajectory(np.array(times), np.array(speeds))
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_trajectory_csv(traj: LeaderTrajectory, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "v"])
    for t, v in zip(traj.times, traj.speeds):
        w.writerow([repr(float(t)), repr(float(v))])
    Path(path).write_text(buf.getvalue())
