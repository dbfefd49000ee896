"""Seeded experiment orchestration: training, platoon runs, sweeps and combination studies.

Every runner writes its outputs under an output directory and returns the
in-memory results. Nothing here reads the clock or an unseeded generator,
so a fixed config with one worker reproduces every byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError, NumericAbort
from .metrics import PlatoonReport, TrajectoryLog, improvement_vs_baseline, per_vehicle_report
from .policy import PolicyParameters, load_checkpoint, save_checkpoint
from .simulation import (cav_count, cav_first, full_topology, hdv_first, random_followers,
                         required_modules, simulate_platoon, specific_followers)
from .topology import TopologyVector, decompose
from .trainer import EpisodeLogWriter, ModuleEnvFactory, train_module

log = logging.getLogger(__name__)

MODULE_SIZES = (1, 2, 3, 4, 5)


def checkpoint_name(k: int) -> str:
    return f"m{k}.json"


UNDERTRAINED_NAME = "m1_undertrained.json"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def checkpoint_dir(cfg: ExperimentConfig, out_dir: Path | None = None) -> Path:
    if cfg.checkpoint_dir is not None:
        return cfg.resolve(cfg.checkpoint_dir)
    return Path(out_dir if out_dir is not None else cfg.resolve(cfg.output_dir)) / "checkpoints"


def load_policies(cfg: ExperimentConfig, sizes, out_dir: Path | None = None) -> dict[int, PolicyParameters]:
    """Load ``m{k}.json`` for each requested module size; missing files are a config error."""
    root = checkpoint_dir(cfg, out_dir)
    missing = [k for k in sizes if not (root / checkpoint_name(k)).exists()]
    if missing:
        raise ConfigError(f"missing checkpoints for module sizes {missing} in {root}")
    return {k: load_checkpoint(root / checkpoint_name(k)) for k in sizes}


# -- training ------------------------------------------------------------------

@dataclass
class TrainingSummary:
    trained: list[int]
    skipped: list[int]
    final_smoothed: dict[int, float]

    def to_dict(self) -> dict:
        return {"trained": self.trained, "skipped": self.skipped,
                "final_smoothed": {str(k): v for k, v in self.final_smoothed.items()}}


def run_training(cfg: ExperimentConfig, out_dir=None, modules=MODULE_SIZES,
                 resume: bool = True) -> TrainingSummary:
    """Train modules in order 1..5, writing checkpoints and one JSONL log per module.

    With ``resume`` a module whose checkpoint already exists is skipped, so an
    interrupted run picks up after the last completed module.
    """
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    ckpt = out / "checkpoints"
    tcfg = cfg.trainer
    episode_cfg = cfg.episode_config()
    _write(out / "config.json", _dump_json(cfg.to_dict()))

    trained, skipped, final = [], [], {}
    for k in sorted(set(modules)):
        if k not in MODULE_SIZES:
            raise ConfigError(f"module size {k} outside 1..5")
        target = ckpt / checkpoint_name(k)
        if resume and target.exists() and (k != 1 or (ckpt / UNDERTRAINED_NAME).exists()):
            skipped.append(k)
            continue
        undertrained = None
        if k >= 2 and tcfg.guided_episodes > 0:
            path = ckpt / UNDERTRAINED_NAME
            if not path.exists():
                raise ConfigError(f"module {k} needs {path}; train module 1 first")
            undertrained = load_checkpoint(path)
        writer = EpisodeLogWriter(out / "logs" / f"train_m{k}.jsonl", k)
        snap_at = (tcfg.undertrained_episodes,) if k == 1 else ()
        log.info("training M_%d for %d episodes", k, tcfg.episodes_for(k))
        try:
            result = train_module(k, tcfg, ModuleEnvFactory(k, episode_cfg, tcfg.seed),
                                  undertrained=undertrained, snapshot_at=snap_at, episode_log=writer)
        except NumericAbort as exc:
            raise NumericAbort(f"module {k}: {exc}") from exc
        finally:
            writer.close()
        if k == 1:
            snap = result.snapshots.get(tcfg.undertrained_episodes, result.params)
            save_checkpoint(snap, ckpt / UNDERTRAINED_NAME)
        save_checkpoint(result.params, target)
        trained.append(k)
        if result.smoothed:
            final[k] = result.smoothed[-1]
    summary = TrainingSummary(trained, skipped, final)
    _write(out / "training.json", _dump_json(summary.to_dict()))
    return summary


# -- simulation ----------------------------------------------------------------

def simulate_topology(cfg: ExperimentConfig, topology, leader=None, policies=None,
                      out_dir=None) -> tuple[TrajectoryLog, PlatoonReport]:
    topo = topology if isinstance(topology, TopologyVector) else TopologyVector(tuple(topology))
    leader = leader if leader is not None else cfg.simulation_leader()
    needed = required_modules(topo)
    if policies is None:
        policies = load_policies(cfg, needed, out_dir) if needed else {}
    missing = [k for k in needed if k not in policies]
    if missing:
        raise ConfigError(f"missing checkpoints for module sizes {missing}")
    traj = simulate_platoon(topo, leader, {k: policies[k] for k in needed}, cfg.idm, cfg.vehicle)
    report = per_vehicle_report(traj, cfg.reward, cfg.vehicle, cfg.table())
    report.extra["topology"] = str(topo)
    return traj, report


def run_simulation(cfg: ExperimentConfig, out_dir=None, policies=None):
    """Simulate the configured topology; writes ``trajectory.csv`` and ``report.{json,csv}``."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    traj, report = simulate_topology(cfg, cfg.topology_vector(), policies=policies, out_dir=out)
    _write(out / "trajectory.csv", traj.to_csv())
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    return traj, report


@dataclass
class StudyRow:
    name: str
    topology: str
    n_cav: int
    report: PlatoonReport
    travel: float | None = None
    energy: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "topology": self.topology,
            "n_cav": self.n_cav,
            "average_speed": self.report.average_speed,
            "average_fuel": self.report.average_fuel,
            "travel_improvement_pct": self.travel,
            "energy_improvement_pct": self.energy,
            "collision_step": self.report.collision_step,
            "report": self.report.to_dict(),
        }


_ROW_COLS = ("name", "topology", "n_cav", "average_speed", "average_fuel",
             "travel_improvement_pct", "energy_improvement_pct", "collision_step")


def _rows_csv(rows: list[StudyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_ROW_COLS)
    for r in rows:
        d = r.to_dict()
        w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                    for c in _ROW_COLS])
    return buf.getvalue()


def _followers_str(followers) -> str:
    return str(full_topology(followers))


def run_penetration_sweep(cfg: ExperimentConfig, out_dir=None, policies=None,
                          n_followers: int = 15) -> list[StudyRow]:
    """Random seeded topologies per penetration rate, scored against the 0% platoon."""
    rates = list(cfg.penetration_rates)
    if not rates:
        raise ConfigError("penetration_rates must not be empty")
    if 0 not in rates:
        raise ConfigError("penetration_rates must include 0 (the baseline)")
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    leader = cfg.simulation_leader()
    topologies = {r: full_topology(random_followers(r, cfg.seed, n_followers)) for r in rates}
    needed = sorted({k for t in topologies.values() for k in required_modules(t)})
    if policies is None:
        policies = load_policies(cfg, needed, out) if needed else {}

    reports = {r: simulate_topology(cfg, topologies[r], leader, policies)[1] for r in rates}
    base = reports[0]
    rows = []
    for r in rates:
        imp = improvement_vs_baseline(reports[r], base)
        rows.append(StudyRow(f"{r}%", str(topologies[r]), cav_count(r, n_followers), reports[r],
                             imp["travel"], imp["energy"]))
    _write(out / "sweep.json", _dump_json({"seed": cfg.seed, "rates": rates,
                                           "rows": [row.to_dict() for row in rows]}))
    _write(out / "sweep.csv", _rows_csv(rows))
    return rows


def combination_topologies(rate: int, seed: int, n_followers: int = 15) -> dict[str, tuple]:
    """The four follower orderings compared at one penetration rate."""
    return {
        "random": random_followers(rate, seed, n_followers),
        "specific": specific_followers(rate),
        "cav_first": cav_first(rate, n_followers),
        "hdv_first": hdv_first(rate, n_followers),
    }


def run_combination_study(cfg: ExperimentConfig, out_dir=None, policies=None) -> list[StudyRow]:
    """Random, specific, CAV-first and HDV-first orderings behind one shared leader."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    rate = cfg.combination_rate
    combos = combination_topologies(rate, cfg.seed)
    leader = cfg.simulation_leader()
    needed = sorted({k for f in combos.values() for k in required_modules(full_topology(f))})
    if policies is None:
        policies = load_policies(cfg, needed, out)
    rows = []
    for name, followers in combos.items():
        _, rep = simulate_topology(cfg, full_topology(followers), leader, policies)
        rows.append(StudyRow(name, _followers_str(followers), sum(1 for x in followers if x == 0), rep))
    _write(out / "combos.json", _dump_json({"seed": cfg.seed, "rate": rate,
                                            "rows": [row.to_dict() for row in rows]}))
    _write(out / "combos.csv", _rows_csv(rows))
    return rows


def run_decompose(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    topo = cfg.topology_vector()
    items = [a.to_dict() for a in decompose(topo)]
    _write(out / "decompose.json", _dump_json({"topology": str(topo), "assignments": items}))
    return items


def run_report(cfg: ExperimentConfig, log_path, out_dir=None) -> PlatoonReport:
    """Score an existing ``t,vehicle_id,x,v,a`` log; labels come from the configured topology."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    path = Path(log_path)
    if not path.exists():
        raise ConfigError(f"trajectory log not found: {path}")
    topo = cfg.topology_vector()
    labels = ["leader"] + ["CAV" if x == 0 else "HDV" for x in topo.labels[1:]]
    traj = TrajectoryLog.from_csv(path.read_text(), labels)
    report = per_vehicle_report(traj, cfg.reward, cfg.vehicle, cfg.table())
    report.extra["topology"] = str(topo)
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    return report


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Copy of ``cfg`` whose experiment and trainer seeds are both ``seed``."""
    return replace(cfg, seed=int(seed), trainer=replace(cfg.trainer, seed=int(seed)))
