"""Mixed-platoon simulation: playback leader, IDM human drivers, learned CAV modules."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .drivers import IdmParams, LeaderTrajectory, idm_accel_array, idm_equilibrium_gap
from .dynamics import DT, VehicleParams, integrate
from .env import observe, PlatoonState
from .errors import ConfigError, InvalidInputError
from .metrics import TrajectoryLog
from .policy import PolicyParameters, actor_forward
from .topology import CAV, HDV, TopologyVector, _as_topology, decompose

SPECIFIC_COMBINATIONS = {
    20: (1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0),
    47: (1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1),
    80: (1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0),
}


def cav_count(rate: float, n_followers: int = 15) -> int:
    """CAVs among ``n_followers`` for a penetration rate in percent (round half up)."""
    if not 0 <= rate <= 100:
        raise ConfigError(f"penetration rate {rate} outside [0, 100]")
    return int(np.floor(rate * n_followers / 100.0 + 0.5))


def random_followers(rate: float, seed: int, n_followers: int = 15) -> tuple[int, ...]:
    """Seeded shuffle of exactly ``cav_count(rate)`` CAVs among the followers."""
    n_cav = cav_count(rate, n_followers)
    labels = np.array([CAV] * n_cav + [HDV] * (n_followers - n_cav))
    rng = np.random.default_rng([int(seed), int(round(rate * 1000))])
    rng.shuffle(labels)
    return tuple(int(x) for x in labels)


def cav_first(rate: float, n_followers: int = 15) -> tuple[int, ...]:
    n_cav = cav_count(rate, n_followers)
    return (CAV,) * n_cav + (HDV,) * (n_followers - n_cav)


def hdv_first(rate: float, n_followers: int = 15) -> tuple[int, ...]:
    n_cav = cav_count(rate, n_followers)
    return (HDV,) * (n_followers - n_cav) + (CAV,) * n_cav


def specific_followers(rate: int) -> tuple[int, ...]:
    if rate not in SPECIFIC_COMBINATIONS:
        raise ConfigError(f"no specific combination for {rate}% (choose from {sorted(SPECIFIC_COMBINATIONS)})")
    return SPECIFIC_COMBINATIONS[rate]


def full_topology(followers) -> TopologyVector:
    return TopologyVector((HDV, *followers))


def required_modules(topology) -> list[int]:
    return sorted({a.module_size for a in decompose(topology)})


def initial_state(topology: TopologyVector, v0: float, params: VehicleParams,
                  idm: IdmParams) -> PlatoonState:
    """Everyone at speed ``v0``; CAVs at their constant-time-gap spacing, HDVs at IDM equilibrium."""
    n = len(topology)
    x = np.zeros(n)
    for i in range(1, n):
        if topology[i] == CAV:
            spacing = params.equilibrium_spacing(v0)
        else:
            spacing = idm_equilibrium_gap(v0, idm) + params.length
        x[i] = x[i - 1] - spacing
    return PlatoonState(x, np.full(n, float(v0)), np.zeros(n), 0)


def simulate_platoon(topology, leader: LeaderTrajectory, policies: Mapping[int, PolicyParameters],
                     idm: IdmParams = IdmParams(), params: VehicleParams = VehicleParams(),
                     steps: int | None = None, dt: float = DT) -> TrajectoryLog:
    """Run a platoon behind ``leader`` for ``steps`` steps (default: the whole trajectory).

    CAVs act on their module policy's mean action. A non-positive gap ends
    the run early; the log then stops at the collision step.
    """
    topo = _as_topology(topology)
    assignments = decompose(topo)
    missing = sorted({a.module_size for a in assignments} - set(policies))
    if missing:
        raise ConfigError(f"missing checkpoints for module sizes {missing}")
    for a in assignments:
        if policies[a.module_size].k != a.module_size:
            raise ConfigError(f"checkpoint for M_{a.module_size} has k={policies[a.module_size].k}")
    if abs(leader.dt - dt) > 1e-9:
        raise ConfigError(f"leader sampled every {leader.dt} s but the simulation step is {dt} s")
    n_steps = len(leader) - 1 if steps is None else int(steps)
    if n_steps < 1 or n_steps > len(leader) - 1:
        raise ConfigError(f"cannot simulate {n_steps} steps on a {len(leader)}-sample leader")

    n = len(topo)
    hdv_idx = np.array([i for i in range(1, n) if topo[i] == HDV], dtype=int)
    state = initial_state(topo, float(leader.speeds[0]), params, idm)
    xs = np.zeros((n_steps + 1, n))
    vs = np.zeros_like(xs)
    accs = np.zeros_like(xs)
    xs[0], vs[0] = state.x, state.v
    collision = None

    for m in range(1, n_steps + 1):
        cmd = np.zeros(n)
        for a in assignments:
            obs = observe(state, a, params)
            means, _ = actor_forward(policies[a.module_size], obs)
            cmd[list(a.cav_indices)] = means[0]
        if hdv_idx.size:
            gaps = state.x[hdv_idx - 1] - state.x[hdv_idx] - params.length
            cmd[hdv_idx] = idm_accel_array(state.v[hdv_idx], state.v[hdv_idx - 1] - state.v[hdv_idx],
                                           gaps, idm)
        v_lead = float(leader.speeds[m])
        x_f, v_f, a_f = integrate(state.x[1:], state.v[1:], cmd[1:], dt, params)
        state = PlatoonState(
            np.concatenate(([state.x[0] + v_lead * dt], x_f)),
            np.concatenate(([v_lead], v_f)),
            np.concatenate(([(v_lead - state.v[0]) / dt], a_f)),
            m,
        )
        xs[m], vs[m], accs[m] = state.x, state.v, state.a
        if np.any(state.gaps(params) <= 0):
            collision = m
            break

    end = n_steps + 1 if collision is None else collision + 1
    labels = ["leader"] + ["CAV" if topo[i] == CAV else "HDV" for i in range(1, n)]
    return TrajectoryLog(leader.times[:end] - leader.times[0], xs[:end], vs[:end], accs[:end],
                         labels, collision)


def simulate_followers(followers, leader, policies, **kw) -> TrajectoryLog:
    """Convenience wrapper taking follower labels only (vehicle 0 is added)."""
    if len(followers) < 1:
        raise InvalidInputError("need at least one follower")
    return simulate_platoon(full_topology(followers), leader, policies, **kw)
