"""Experiment configuration: one JSON document, merged over the shipped defaults profile."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .drivers import IdmParams, LeaderTrajectory, read_trajectory_csv, synth_stop_and_go
from .dynamics import DT, VehicleParams
from .env import EpisodeConfig, RewardWeights
from .errors import ConfigError, InvalidInputError
from .fuel import VtMicroTable, default_table
from .topology import TopologyVector
from .trainer import TrainerConfig

SCENARIOS = ("train", "simulate", "sweep", "combos", "decompose", "report")


def default_profile() -> dict:
    text = resources.files("mixplatoon").joinpath("data/defaults.json").read_text()
    return json.loads(text)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("leader", "training_leader"):
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _build(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {section}: {exc}") from exc


def build_leader(spec: dict, base_dir: Path | None = None) -> LeaderTrajectory:
    """Leader from ``{"source": "synthetic", ...}`` or ``{"source": "file", "path": ...}``."""
    spec = dict(spec)
    source = spec.pop("source", None)
    if source == "file":
        path = Path(spec.get("path", ""))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_trajectory_csv(path)
    if source == "synthetic":
        allowed = {"duration", "base_speed", "n_waves", "amplitude", "standstill", "seed"}
        unknown = set(spec) - allowed
        if unknown:
            raise ConfigError(f"unknown synthetic leader keys {sorted(unknown)}")
        try:
            return synth_stop_and_go(**spec)
        except (TypeError, InvalidInputError) as exc:
            raise ConfigError(f"bad synthetic leader spec: {exc}") from exc
    raise ConfigError(f"leader source must be 'synthetic' or 'file', got {source!r}")


def build_leader_pool(spec: dict, duration: float) -> list[LeaderTrajectory]:
    """Seeded family of synthetic training leaders (empty when ``size`` is 0)."""
    n = int(spec.get("size", 0))
    if n <= 0:
        return []
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    lo_b, hi_b = spec["base_speed"]
    lo_w, hi_w = spec["n_waves"]
    lo_a, hi_a = spec["amplitude"]
    pool = []
    for _ in range(n):
        pool.append(synth_stop_and_go(
            duration,
            float(rng.uniform(lo_b, hi_b)),
            int(rng.integers(lo_w, hi_w + 1)),
            float(rng.uniform(lo_a, hi_a)),
            seed=int(rng.integers(1 << 30)),
        ))
    return pool


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    topology: str = "1," + ",".join(["0"] * 15)
    penetration_rates: list = field(default_factory=lambda: [0, 20, 40, 60, 80, 100])
    combination_rate: int = 47
    leader: dict = field(default_factory=dict)
    training_leader: dict = field(default_factory=dict)
    training_pool: dict = field(default_factory=dict)
    checkpoint_dir: str | None = None
    vtmicro: str | None = None
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    idm: IdmParams = field(default_factory=IdmParams)
    base_dir: str = "."

    def __post_init__(self):
        if not isinstance(self.topology, str):
            self.topology = ",".join(str(int(x)) for x in self.topology)
        try:
            topo = TopologyVector.parse(self.topology)
        except InvalidInputError as exc:
            raise ConfigError(f"bad topology {self.topology!r}: {exc}") from exc
        if len(topo) < 2:
            raise ConfigError("the platoon needs at least one follower")
        for r in self.penetration_rates:
            if not 0 <= r <= 100:
                raise ConfigError(f"penetration rate {r} outside [0, 100]")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        d = _merge(default_profile(), d)
        return cls(
            seed=int(d["seed"]),
            output_dir=d["output_dir"],
            topology=d["topology"],
            penetration_rates=list(d["penetration_rates"]),
            combination_rate=int(d["combination_rate"]),
            leader=dict(d["leader"]),
            training_leader=dict(d["training_leader"]),
            training_pool=dict(d["training_pool"]),
            checkpoint_dir=d["checkpoint_dir"],
            vtmicro=d["vtmicro"],
            trainer=_build(TrainerConfig, d["trainer"], "trainer"),
            reward=_build(RewardWeights, d["reward"], "reward"),
            vehicle=_build(VehicleParams, d["vehicle"], "vehicle"),
            idm=_build(IdmParams, d["idm"], "idm"),
            base_dir=base_dir,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "topology": self.topology,
            "penetration_rates": list(self.penetration_rates),
            "combination_rate": self.combination_rate,
            "leader": dict(self.leader),
            "training_leader": dict(self.training_leader),
            "training_pool": dict(self.training_pool),
            "checkpoint_dir": self.checkpoint_dir,
            "vtmicro": self.vtmicro,
            "trainer": self.trainer.to_dict(),
            "reward": asdict(self.reward),
            "vehicle": asdict(self.vehicle),
            "idm": asdict(self.idm),
        }

    def topology_vector(self) -> TopologyVector:
        return TopologyVector.parse(self.topology)

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def table(self) -> VtMicroTable:
        return default_table() if self.vtmicro is None else VtMicroTable.load(self.resolve(self.vtmicro))

    def simulation_leader(self) -> LeaderTrajectory:
        return build_leader(self.leader, Path(self.base_dir))

    def episode_config(self) -> EpisodeConfig:
        lead = build_leader(self.training_leader, Path(self.base_dir))
        # one sample per step plus the initial one, padded so rounding cannot drop a sample
        pool = build_leader_pool(self.training_pool, (self.trainer.horizon + 1.5) * DT)
        return EpisodeConfig(lead, horizon=self.trainer.horizon, weights=self.reward,
                             params=self.vehicle, vtmicro=self.table(), leader_pool=tuple(pool))


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file (or only the defaults when ``path`` is None)."""
    d: dict = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{p}: top level must be an object")
        base = str(p.parent)
    for key, val in (overrides or {}).items():
        if val is not None:
            d[key] = val
    return ExperimentConfig.from_dict(d, base)
