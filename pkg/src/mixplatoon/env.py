"""Per-subsystem reinforcement-learning environment and the reward terms.

A module environment holds one playback leader followed by ``k`` CAVs. The
observation is a ``(k, 4)`` array; row ``i`` describes CAV ``i + 1`` as
``[v, g, delta_v, delta_d]`` where ``delta_v`` is predecessor speed minus own
speed and ``delta_d`` is spacing minus the constant-time-gap target.

Rewards are evaluated on the state reached by an action together with the
acceleration that produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .drivers import LeaderTrajectory, playback_speed
from .dynamics import DT, VehicleParams, integrate
from .errors import ConfigError, InvalidInputError
from .fuel import VtMicroTable, default_table, vt_micro_fuel
from .topology import SubsystemAssignment

OBS_FIELDS = ("v", "g", "delta_v", "delta_d")
EPS_NORM = 1e-6
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class RewardWeights:
    alpha1: float = 1.0            # weight on delta_d^2
    alpha2: float = 0.5            # weight on delta_v^2
    comfort: float = 0.5           # M
    efficiency: float = 1.0        # C
    energy: float = 2.5            # F
    stability: float = -0.1        # S
    gap: float = -0.05             # G
    speed: float = -0.05           # D
    window: int = 50               # n_d
    safe_time_gap: float = 0.6     # g_t, seconds
    free_flow_speed: float = 124.0  # v_f, ft/s

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise InvalidInputError("alpha1 and alpha2 must be positive")
        if self.stability > 0 or self.gap > 0 or self.speed > 0:
            raise InvalidInputError("penalty weights must be <= 0")
        if self.window < 1:
            raise InvalidInputError("window must be >= 1")
        if not self.safe_time_gap > 0:
            raise InvalidInputError("safe_time_gap must be positive")
        if self.comfort < 0 or self.efficiency < 0 or self.energy < 0:
            raise InvalidInputError("cost weights must be non-negative")

    @property
    def penalty_floor(self) -> float:
        return self.stability + self.gap + self.speed


def equilibrium_spacing(v, params: VehicleParams = VehicleParams()):
    """Target spacing ``v * tau + l_i``."""
    if np.any(np.asarray(v) < 0):
        raise InvalidInputError("speed must be non-negative")
    return params.equilibrium_spacing(v)


def efficiency_cost(delta_d, delta_v, weights: RewardWeights = RewardWeights()):
    return weights.alpha1 * np.square(delta_d) + weights.alpha2 * np.square(delta_v)


def running_cost(eff_cost, accel, comfort_weight: float):
    return eff_cost + comfort_weight * np.square(accel)


def dampening_ratio(follower_accels, leader_accels, eps: float = EPS_NORM):
    """L2-norm ratio of a follower's acceleration signal to its leader's.

    Returns ``None`` when the leader's norm is below ``eps``.
    """
    f = np.asarray(follower_accels, dtype=float)
    l = np.asarray(leader_accels, dtype=float)
    if f.shape != l.shape:
        raise InvalidInputError(f"length mismatch: {f.shape} vs {l.shape}")
    lead = float(np.linalg.norm(l))
    if lead < eps:
        return None
    return float(np.linalg.norm(f)) / lead


def penalty_reward(v, g, weights: RewardWeights = RewardWeights(), window_ratio=None):
    """Soft-constraint penalties for one CAV.

    ``window_ratio`` is the trailing-window dampening ratio, supplied only on
    steps where the stability check runs; ``None`` skips that term.
    """
    r = 0.0
    if window_ratio is not None and window_ratio > 1.0:
        r += weights.stability
    if v > 0 and g / v < weights.safe_time_gap:
        r += weights.gap
    if v > weights.free_flow_speed:
        r += weights.speed
    return r


def original_reward(run_cost, fuel, weights: RewardWeights = RewardWeights()):
    """``exp(-(C*l + F*e))``, floored at the smallest normal float so it never underflows to 0."""
    return np.maximum(np.exp(-(weights.efficiency * run_cost + weights.energy * fuel)), TINY)


def immediate_reward(v, g, delta_v, delta_d, accel, weights: RewardWeights = RewardWeights(),
                     table: VtMicroTable | None = None, params: VehicleParams = VehicleParams(),
                     window_ratio=None) -> float:
    """Total reward of a single CAV for one step (original plus penalties)."""
    table = table if table is not None else default_table()
    eff = efficiency_cost(delta_d, delta_v, weights)
    run = running_cost(eff, accel, weights.comfort)
    fuel = vt_micro_fuel(v, accel, table, weights.free_flow_speed, params.accel_min, params.accel_max)
    return float(original_reward(run, fuel, weights)) + penalty_reward(v, g, weights, window_ratio)


def cav_reward_terms(obs: np.ndarray, accels: np.ndarray, weights: RewardWeights,
                     table: VtMicroTable, params: VehicleParams, window_ratios=None) -> dict:
    """Vectorised reward breakdown for the rows of an observation array."""
    v, g, dv, dd = obs[:, 0], obs[:, 1], obs[:, 2], obs[:, 3]
    eff = efficiency_cost(dd, dv, weights)
    comfort = weights.comfort * np.square(accels)
    run = eff + comfort
    fuel = np.asarray(vt_micro_fuel(v, accels, table, weights.free_flow_speed,
                                    params.accel_min, params.accel_max), dtype=float).reshape(v.shape)
    r_o = original_reward(run, fuel, weights)
    pen = np.array([
        penalty_reward(v[i], g[i], weights, None if window_ratios is None else window_ratios[i])
        for i in range(len(v))
    ])
    return {
        "efficiency": eff,
        "comfort": comfort,
        "running": run,
        "fuel": fuel,
        "original": r_o,
        "penalty": pen,
        "reward": r_o + pen,
    }


@dataclass
class PlatoonState:
    """Positions, speeds and last applied accelerations of a string of vehicles."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    step: int = 0

    def copy(self) -> "PlatoonState":
        return PlatoonState(self.x.copy(), self.v.copy(), self.a.copy(), self.step)

    def gaps(self, params: VehicleParams) -> np.ndarray:
        """Gap of every vehicle behind the first to its predecessor."""
        return self.x[:-1] - self.x[1:] - params.length


def observe(state: PlatoonState, assignment: SubsystemAssignment,
            params: VehicleParams = VehicleParams()) -> np.ndarray:
    idx = np.asarray(assignment.cav_indices)
    pred = idx - 1
    v = state.v[idx]
    d = state.x[pred] - state.x[idx]
    g = d - params.length
    dv = state.v[pred] - v
    dd = d - params.equilibrium_spacing(v)
    return np.stack([v, g, dv, dd], axis=1)


def equilibrium_platoon(n_followers: int, v0: float, params: VehicleParams,
                        spacing=None) -> PlatoonState:
    """Leader at x=0 and ``n_followers`` vehicles behind it at equilibrium spacing."""
    if spacing is None:
        spacing = [params.equilibrium_spacing(v0)] * n_followers
    x = np.zeros(n_followers + 1)
    for i in range(1, n_followers + 1):
        x[i] = x[i - 1] - spacing[i - 1]
    v = np.full(n_followers + 1, float(v0))
    return PlatoonState(x, v, np.zeros(n_followers + 1), 0)


def leader_speed_at(traj: LeaderTrajectory, step: int, dt: float) -> float:
    if abs(traj.dt - dt) < 1e-9 and step < len(traj):
        return float(traj.speeds[step])
    return playback_speed(traj, float(traj.times[0]) + step * dt)


@dataclass
class EpisodeConfig:
    leader: LeaderTrajectory
    horizon: int = 218
    dt: float = DT
    weights: RewardWeights = field(default_factory=RewardWeights)
    params: VehicleParams = field(default_factory=VehicleParams)
    vtmicro: VtMicroTable = field(default_factory=default_table)
    # optional extra leaders; when non-empty each reset draws one of
    # (leader, *leader_pool) with the environment's own rng
    leader_pool: tuple = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        self.leader_pool = tuple(self.leader_pool)
        needed = self.horizon * self.dt
        for lead in (self.leader, *self.leader_pool):
            if lead.duration + 1e-9 < needed:
                raise ConfigError(
                    f"leader trajectory covers {lead.duration:.3f} s but a "
                    f"{self.horizon}-step episode needs {needed:.3f} s")

    @property
    def leaders(self) -> tuple:
        return (self.leader, *self.leader_pool)

    def with_leader(self, leader: LeaderTrajectory) -> "EpisodeConfig":
        return replace(self, leader=leader)


class ModuleEnv:
    """One playback leader followed by ``k`` cooperatively controlled CAVs."""

    def __init__(self, k: int, config: EpisodeConfig, seed=0):
        if k < 1:
            raise InvalidInputError("module size must be >= 1")
        self.k = k
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.leader = config.leader
        self.assignment = SubsystemAssignment(k, 0, tuple(range(1, k + 1)))
        self.state: PlatoonState | None = None
        self.done = True
        self._accel_hist = np.zeros((config.horizon + 1, k + 1))

    @property
    def obs_dim(self) -> int:
        return 4 * self.k

    def reset(self) -> np.ndarray:
        cfg = self.config
        if cfg.leader_pool:
            self.leader = cfg.leaders[int(self.rng.integers(len(cfg.leaders)))]
        v0 = leader_speed_at(self.leader, 0, cfg.dt)
        self.state = equilibrium_platoon(self.k, v0, cfg.params)
        self._accel_hist[:] = 0.0
        self.done = False
        return observe(self.state, self.assignment, cfg.params)

    def step(self, action):
        if self.done or self.state is None:
            raise InvalidInputError("episode is done; call reset()")
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape != (self.k,):
            raise InvalidInputError(f"expected {self.k} accelerations, got {action.shape[0]}")
        cfg = self.config
        s = self.state
        m = s.step + 1

        v_lead = leader_speed_at(self.leader, m, cfg.dt)
        x_lead = s.x[0] + v_lead * cfg.dt
        a_lead = (v_lead - s.v[0]) / cfg.dt

        x_f, v_f, a_f = integrate(s.x[1:], s.v[1:], action, cfg.dt, cfg.params)
        s.x = np.concatenate(([x_lead], x_f))
        s.v = np.concatenate(([v_lead], v_f))
        s.a = np.concatenate(([a_lead], a_f))
        s.step = m
        self._accel_hist[m] = s.a

        obs = observe(s, self.assignment, cfg.params)
        window_ratios = None
        w = cfg.weights.window
        if m % w == 0 and m >= w:
            seg = self._accel_hist[m - w + 1:m + 1]
            window_ratios = [dampening_ratio(seg[:, i], seg[:, 0]) for i in range(1, self.k + 1)]
        terms = cav_reward_terms(obs, s.a[1:], cfg.weights, cfg.vtmicro, cfg.params, window_ratios)
        reward = float(np.sum(terms["reward"]))

        collision = bool(np.any(obs[:, 1] <= 0))
        truncated = m >= cfg.horizon
        self.done = collision or truncated
        info = dict(terms)
        info.update(collision=collision, truncated=truncated and not collision,
                    window_ratios=window_ratios, step=m)
        return obs, reward, self.done, info

    def episode_dampening(self):
        """Full-episode dampening ratio of every CAV relative to the module leader."""
        if self.state is None:
            return [None] * self.k
        m = self.state.step
        seg = self._accel_hist[1:m + 1]
        return [dampening_ratio(seg[:, i], seg[:, 0]) for i in range(1, self.k + 1)]


def env_reset(k: int, config: EpisodeConfig) -> tuple[ModuleEnv, np.ndarray]:
    env = ModuleEnv(k, config)
    return env, env.reset()


def env_step(env: ModuleEnv, action):
    return env.step(action)


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
