"""Evaluation indexes over logged platoon trajectories.

Per-vehicle means are taken over the simulated steps (row 0 of a log is the
initial state and carries no applied acceleration). Dampening ratios use
full-episode L2 norms relative to vehicle 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import VehicleParams
from .env import EPS_NORM, RewardWeights, dampening_ratio
from .errors import InvalidInputError
from .fuel import VtMicroTable, default_table, vt_micro_fuel

LABELS = ("leader", "CAV", "HDV")


@dataclass
class TrajectoryLog:
    """Aligned time series, arrays shaped ``(T, n_vehicles)``."""

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    labels: list[str]
    collision_step: int | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        shape = (self.times.size, len(self.labels))
        for name in ("x", "v", "a"):
            if getattr(self, name).shape != shape:
                raise InvalidInputError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")
        if any(lab not in LABELS for lab in self.labels):
            raise InvalidInputError(f"labels must be drawn from {LABELS}")
        if np.any(self.v < 0):
            raise InvalidInputError("speeds must be non-negative")

    @property
    def n_vehicles(self) -> int:
        return len(self.labels)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def to_csv(self) -> str:
        """Long-format ``t,vehicle_id,x,v,a`` text with round-trip float formatting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "vehicle_id", "x", "v", "a"])
        for r, t in enumerate(self.times):
            for i in range(self.n_vehicles):
                w.writerow([repr(float(t)), i, repr(float(self.x[r, i])),
                            repr(float(self.v[r, i])), repr(float(self.a[r, i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, labels: list[str]) -> "TrajectoryLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise InvalidInputError("empty trajectory log")
        n = len(labels)
        if len(rows) % n:
            raise InvalidInputError("row count is not a multiple of the vehicle count")
        T = len(rows) // n
        arr = {k: np.empty((T, n)) for k in ("x", "v", "a")}
        times = np.empty(T)
        for j, row in enumerate(rows):
            r, i = divmod(j, n)
            if int(row["vehicle_id"]) != i:
                raise InvalidInputError("rows must be ordered by time then vehicle_id")
            times[r] = float(row["t"])
            for k in arr:
                arr[k][r, i] = float(row[k])
        return cls(times, arr["x"], arr["v"], arr["a"], list(labels))


@dataclass
class VehicleReport:
    vehicle_id: int
    label: str
    dampening_ratio: float | None
    efficiency_cost: float | None
    comfort_cost: float
    running_cost: float | None
    fuel_ml_s: float
    mean_speed: float
    min_speed: float


@dataclass
class PlatoonReport:
    vehicles: list[VehicleReport]
    average_speed: float
    average_fuel: float
    steps: int
    collision_step: int | None = None
    extra: dict = field(default_factory=dict)

    def dampening_ratios(self) -> list[float | None]:
        return [v.dampening_ratio for v in self.vehicles]

    def to_dict(self) -> dict:
        d = {
            "average_speed": self.average_speed,
            "average_fuel": self.average_fuel,
            "steps": self.steps,
            "collision_step": self.collision_step,
            "vehicles": [asdict(v) for v in self.vehicles],
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = list(VehicleReport.__dataclass_fields__)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for v in self.vehicles:
            w.writerow(["" if getattr(v, c) is None else
                        (repr(getattr(v, c)) if isinstance(getattr(v, c), float) else getattr(v, c))
                        for c in cols])
        return buf.getvalue()


def per_vehicle_report(log: TrajectoryLog, weights: RewardWeights = RewardWeights(),
                       params: VehicleParams = VehicleParams(),
                       table: VtMicroTable | None = None) -> PlatoonReport:
    if log.n_vehicles < 2:
        raise InvalidInputError("a report needs at least two vehicles")
    if log.n_steps < 1:
        raise InvalidInputError("a report needs at least one simulated step")
    table = table if table is not None else default_table()
    x, v, a = log.x[1:], log.v[1:], log.a[1:]
    fuel = np.asarray(vt_micro_fuel(v, a, table, weights.free_flow_speed,
                                    params.accel_min, params.accel_max), dtype=float)
    comfort = weights.comfort * np.square(a)
    lead_norm = float(np.linalg.norm(a[:, 0]))

    vehicles = []
    for i in range(log.n_vehicles):
        dp = None if lead_norm < EPS_NORM else dampening_ratio(a[:, i], a[:, 0])
        eff = run = None
        if i > 0:
            spacing = x[:, i - 1] - x[:, i]
            dd = spacing - params.equilibrium_spacing(v[:, i])
            dv = v[:, i - 1] - v[:, i]
            e = weights.alpha1 * dd ** 2 + weights.alpha2 * dv ** 2
            eff = float(np.mean(e))
            run = float(np.mean(e + comfort[:, i]))
        vehicles.append(VehicleReport(
            vehicle_id=i,
            label=log.labels[i],
            dampening_ratio=dp,
            efficiency_cost=eff,
            comfort_cost=float(np.mean(comfort[:, i])),
            running_cost=run,
            fuel_ml_s=float(np.mean(fuel[:, i])),
            mean_speed=float(np.mean(v[:, i])),
            min_speed=float(np.min(v[:, i])),
        ))
    return PlatoonReport(vehicles, float(np.mean(v)), float(np.mean(fuel)), log.n_steps,
                         log.collision_step)


def improvement_vs_baseline(report: PlatoonReport, baseline: PlatoonReport) -> dict:
    """Percent average-speed gain (travel) and fuel reduction (energy) over a baseline.

    A zero baseline average leaves the matching entry as ``None``.
    """
    if len(report.vehicles) != len(baseline.vehicles):
        raise InvalidInputError("report and baseline must describe platoons of equal length")
    travel = energy = None
    if baseline.average_speed != 0:
        travel = (report.average_speed - baseline.average_speed) / baseline.average_speed * 100.0
    if baseline.average_fuel != 0:
        energy = (baseline.average_fuel - report.average_fuel) / baseline.average_fuel * 100.0
    return {"travel": travel, "energy": energy}


def head_to_tail_stability(report_or_ratios) -> tuple[bool, float]:
    """Whether every follower's ratio is at most 1, and ``1 - max ratio``.

    Accepts a report (vehicle 0 is skipped) or a plain list of follower ratios.
    """
    if isinstance(report_or_ratios, PlatoonReport):
        ratios = report_or_ratios.dampening_ratios()[1:]
    else:
        ratios = list(report_or_ratios)
    if any(r is None for r in ratios):
        raise InvalidInputError("dampening ratios are undefined for this log")
    if not ratios:
        return True, 1.0
    worst = max(ratios)
    return worst <= 1.0, 1.0 - worst
