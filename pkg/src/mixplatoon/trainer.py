"""Distributed PPO: rollout workers, GAE, clipped surrogate, and the training schedule.

Workers each own an environment and an rng and roll out against an immutable
parameter snapshot. The learner waits for every worker (synchronous barrier),
concatenates their data in worker order, runs the PPO epochs and publishes a
new snapshot. Because of the barrier and the fixed ordering, the result of a
run depends only on the config and seed, not on process scheduling.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import EpisodeConfig, ModuleEnv
from .errors import ConfigError, InvalidInputError, NumericAbort
from .policy import (PolicyParameters, actor_backward, actor_forward, critic_backward,
                     critic_forward, init_policy, log_prob, log_prob_grads, sample_action)

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    batch_size: int = 2048
    epochs: int = 10
    minibatch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    workers: int = 4
    episodes_m1: int = 400
    episodes_other: int = 230
    guided_episodes: int = 80
    undertrained_episodes: int = 30
    horizon: int = 218
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    normalize_advantages: bool = True
    max_grad_norm: float | None = 0.5
    entropy_coef: float = 0.0
    # log-density stored for guided transitions: "current" (module-k policy)
    # or "behavior" (the per-CAV guide that produced the action)
    guided_logprob: str = "current"
    # weight of a squared-error pull of the module means toward the guide's
    # per-CAV means on guided transitions (0 disables it)
    guided_bc_coef: float = 0.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError("gamma and lam must lie in (0, 1]")
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("batch_size, epochs and minibatch_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.guided_logprob not in ("current", "behavior"):
            raise ConfigError("guided_logprob must be 'current' or 'behavior'")

    def episodes_for(self, k: int) -> int:
        return self.episodes_m1 if k == 1 else self.episodes_other

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# -- pure PPO pieces -------------------------------------------------------

def gae_advantages(rewards, values, next_values, dones, gamma: float, lam: float):
    """Truncated generalized advantage estimates and value targets.

    ``next_values[t]`` is the critic's value of the state after step ``t``;
    it is ignored where ``dones[t]`` is set. The recursion runs backward and
    stops at the end of the series and at every episode boundary.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    nv = np.asarray(next_values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    if not (r.shape == v.shape == nv.shape == d.shape) or r.ndim != 1:
        raise InvalidInputError("rewards, values, next_values and dones must be equal-length 1-D")
    not_done = (~d).astype(float)
    delta = r + gamma * nv * not_done - v
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * not_done[t] * acc
        adv[t] = acc
    return adv, adv + v


def clipped_surrogate(ratio, advantage, epsilon: float):
    if not 0 < epsilon < 1:
        raise InvalidInputError("epsilon must lie in (0, 1)")
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1 - epsilon, 1 + epsilon) * advantage)


def clipped_surrogate_grad(ratio, advantage, epsilon: float):
    """d surrogate / d ratio (zero wherever the clipped branch is the minimum)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    unclipped = ratio * advantage <= np.clip(ratio, 1 - epsilon, 1 + epsilon) * advantage
    return np.where(unclipped, advantage, 0.0)


def critic_loss(values, targets) -> float:
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if values.shape != targets.shape:
        raise InvalidInputError("values and targets must have equal length")
    return float(np.mean(np.square(values - targets)))


def critic_loss_grad(values, targets) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return 2.0 * (values - np.asarray(targets, dtype=float)) / values.size


def moving_average_reward(history: Sequence[float], weight: float = 0.9) -> list[float]:
    """Exponentially smoothed episode rewards (first value passes through)."""
    if len(history) == 0:
        raise InvalidInputError("history must be non-empty")
    out = [float(history[0])]
    for r in history[1:]:
        out.append(weight * out[-1] + (1.0 - weight) * float(r))
    return out


class Adam:
    """Adam over a list of arrays updated in place."""

    def __init__(self, arrays: list[np.ndarray], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_by_norm(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        return [g * scale for g in grads]
    return grads


# -- rollouts ----------------------------------------------------------------

@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    value: float
    log_prob: float
    done: bool
    version: int
    next_value: float = 0.0
    guide_mean: np.ndarray | None = None


@dataclass
class EpisodeRecord:
    reward: float
    steps: int
    collision: bool
    dampening: float | None
    guided: bool
    worker: int = 0


@dataclass
class ModuleEnvFactory:
    """Picklable constructor for a module environment."""

    k: int
    config: EpisodeConfig
    seed: int = 0

    def __call__(self, worker_id: int = 0) -> ModuleEnv:
        return ModuleEnv(self.k, self.config, np.random.SeedSequence([self.seed, self.k, worker_id, 1]))


def behavior_action(behavior: PolicyParameters, obs: np.ndarray, rng: np.random.Generator):
    """Apply a single-CAV policy to every row of a module observation independently.

    Returns the joint action and its log-density under that per-CAV policy.
    """
    means, stds = actor_forward(behavior, obs)  # one row per CAV because behavior.k == 1
    action = sample_action(means[:, 0], stds[:, 0], rng)
    return action, float(log_prob(means[:, 0], stds[:, 0], action)), means[:, 0]


class RolloutWorker:
    """Owns one environment and rng; episodes continue across rollout calls."""

    def __init__(self, env: ModuleEnv, seed, worker_id: int = 0, guided_logprob: str = "current"):
        self.env = env
        self.guided_logprob = guided_logprob
        self.worker_id = worker_id
        self.rng = np.random.default_rng(seed)
        self.obs = None
        self._ep_reward = 0.0
        self._ep_steps = 0
        self._ep_guided = False

    def rollout(self, snapshot: PolicyParameters, steps: int, guided: bool = False,
                behavior: PolicyParameters | None = None):
        """Collect exactly ``steps`` transitions. Returns ``(transitions, finished_episodes)``."""
        if guided and behavior is None:
            raise ConfigError("guided rollout needs a behaviour policy")
        if self._ep_guided and self.obs is not None and behavior is None:
            raise ConfigError("a guided episode is in progress but no behaviour policy was given")
        transitions: list[Transition] = []
        finished: list[EpisodeRecord] = []
        next_v = None
        for _ in range(steps):
            if self.obs is None:
                self.obs = self.env.reset()
                self._ep_reward = 0.0
                self._ep_steps = 0
                self._ep_guided = guided
                next_v = None
            obs = self.obs
            means, stds = actor_forward(snapshot, obs)
            means, stds = means[0], stds[0]
            if self._ep_guided:
                action, behavior_lp, guide_mean = behavior_action(behavior, obs, self.rng)
            else:
                action = sample_action(means, stds, self.rng)
                guide_mean = None
            lp = float(log_prob(means, stds, action))
            if self._ep_guided and self.guided_logprob == "behavior":
                lp = behavior_lp
            value = float(critic_forward(snapshot, obs)[0]) if next_v is None else next_v

            new_obs, reward, done, info = self.env.step(action)
            self._ep_reward += reward
            self._ep_steps += 1
            next_v = 0.0 if done else float(critic_forward(snapshot, new_obs)[0])
            transitions.append(Transition(obs, action, reward, value, lp, done,
                                          snapshot.version, next_v, guide_mean))
            if done:
                dps = [d for d in self.env.episode_dampening() if d is not None]
                finished.append(EpisodeRecord(
                    reward=self._ep_reward, steps=self._ep_steps,
                    collision=bool(info["collision"]),
                    dampening=float(np.mean(dps)) if dps else None,
                    guided=self._ep_guided, worker=self.worker_id))
                self.obs = None
            else:
                self.obs = new_obs
        return transitions, finished


def worker_rollout(env: ModuleEnv, snapshot: PolicyParameters, steps: int, seed=0,
                   guided: bool = False, behavior: PolicyParameters | None = None):
    """One-shot rollout from a fresh worker; see :class:`RolloutWorker`."""
    return RolloutWorker(env, seed).rollout(snapshot, steps, guided, behavior)


def _worker_main(conn, queue, worker_id, factory, seed, guided_logprob):
    worker = RolloutWorker(factory(worker_id), seed, worker_id, guided_logprob)
    while True:
        msg = conn.recv()
        if msg is None:
            break
        try:
            queue.put((worker_id, worker.rollout(*msg), None))
        except Exception as exc:  # surfaced in the learner
            queue.put((worker_id, None, repr(exc)))


class InlinePool:
    """Runs every worker in the calling process, one after another."""

    def __init__(self, factory: Callable[[int], ModuleEnv], seeds: list, guided_logprob: str = "current"):
        self.workers = [RolloutWorker(factory(i), s, i, guided_logprob) for i, s in enumerate(seeds)]

    def collect(self, snapshot, steps, guided=False, behavior=None):
        return [w.rollout(snapshot, steps, guided, behavior) for w in self.workers]

    def close(self):
        pass


class ProcessPool:
    """One persistent process per worker feeding a shared result queue."""

    def __init__(self, factory, seeds: list, guided_logprob: str = "current"):
        ctx = mp.get_context("spawn")
        self.queue = ctx.Queue()
        self.conns = []
        self.procs = []
        for i, s in enumerate(seeds):
            parent, child = ctx.Pipe()
            p = ctx.Process(target=_worker_main, args=(child, self.queue, i, factory, s, guided_logprob), daemon=True)
            p.start()
            self.conns.append(parent)
            self.procs.append(p)

    def collect(self, snapshot, steps, guided=False, behavior=None):
        for c in self.conns:
            c.send((snapshot, steps, guided, behavior))
        results = {}
        for _ in self.conns:
            wid, out, err = self.queue.get()
            if err is not None:
                raise RuntimeError(f"rollout worker {wid} failed: {err}")
            results[wid] = out
        return [results[i] for i in range(len(self.conns))]

    def close(self):
        for c in self.conns:
            try:
                c.send(None)
            except (BrokenPipeError, OSError):
                pass
        for p in self.procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()


# -- learner -------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray          # (N, k, 4)
    actions: np.ndarray      # (N, k)
    log_probs: np.ndarray    # (N,)
    values: np.ndarray       # (N,)
    advantages: np.ndarray   # (N,)
    returns: np.ndarray      # (N,)
    versions: np.ndarray     # (N,)
    guide_means: np.ndarray | None = None  # (N, k), NaN rows where no guide acted

    def __len__(self) -> int:
        return self.obs.shape[0]


def build_batch(segments: Sequence[Sequence[Transition]], gamma: float, lam: float) -> Batch:
    """Stack per-worker transition lists; GAE never crosses a segment boundary."""
    parts = []
    for seg in segments:
        if not seg:
            continue
        r = np.array([t.reward for t in seg])
        v = np.array([t.value for t in seg])
        nv = np.array([t.next_value for t in seg])
        d = np.array([t.done for t in seg])
        adv, ret = gae_advantages(r, v, nv, d, gamma, lam)
        parts.append((seg, adv, ret))
    if not parts:
        raise InvalidInputError("empty batch")
    all_t = [t for seg, _, _ in parts for t in seg]
    return Batch(
        obs=np.stack([t.obs for t in all_t]),
        actions=np.stack([t.action for t in all_t]),
        log_probs=np.array([t.log_prob for t in all_t]),
        values=np.array([t.value for t in all_t]),
        advantages=np.concatenate([a for _, a, _ in parts]),
        returns=np.concatenate([r for _, _, r in parts]),
        versions=np.array([t.version for t in all_t]),
        guide_means=np.stack([t.guide_mean if t.guide_mean is not None
                              else np.full(t.action.shape, np.nan) for t in all_t]),
    )


@dataclass
class UpdateStats:
    version: int
    mean_ratio_first: float
    clip_fraction: float
    actor_loss: float
    critic_loss: float
    approx_kl: float


class Learner:
    """Holds the working parameters and optimizer state of the global agent."""

    def __init__(self, params: PolicyParameters, cfg: TrainerConfig, seed=0):
        self.params = params.copy()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.actor_arrays = [a for layer in self.params.actor for a in layer] + [self.params.log_std]
        self.critic_arrays = [a for layer in self.params.critic for a in layer]
        self.actor_opt = Adam(self.actor_arrays, cfg.actor_lr)
        self.critic_opt = Adam(self.critic_arrays, cfg.critic_lr)

    def update(self, batch: Batch) -> tuple[PolicyParameters, UpdateStats]:
        cfg = self.cfg
        p = self.params
        n = len(batch)
        if n < cfg.minibatch_size:
            raise InvalidInputError(f"batch of {n} is smaller than minibatch {cfg.minibatch_size}")
        adv = batch.advantages
        if cfg.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        flat_obs = batch.obs.reshape(n, -1)

        first_ratio = None
        clip_hits = 0
        seen = 0
        a_losses, c_losses, kls = [], [], []
        for _ in range(cfg.epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = perm[start:start + cfg.minibatch_size]
                b = idx.size
                obs = flat_obs[idx]
                act = batch.actions[idx]
                a = adv[idx]

                means, stds, cache = actor_forward(p, obs, return_cache=True)
                lp = log_prob(means, stds, act)
                log_ratio = lp - batch.log_probs[idx]
                ratio = np.exp(log_ratio)
                surr = clipped_surrogate(ratio, a, cfg.clip)
                entropy = float(np.sum(p.log_std)) + 0.5 * p.k * (1.0 + math.log(2 * math.pi))
                a_loss = -float(np.mean(surr)) - cfg.entropy_coef * entropy
                if first_ratio is None:
                    first_ratio = float(np.mean(ratio))
                clip_hits += int(np.sum(np.abs(ratio - 1.0) > cfg.clip))
                seen += b
                kls.append(float(np.mean(-log_ratio)))

                d_lp = -clipped_surrogate_grad(ratio, a, cfg.clip) * ratio / b
                g_mean, g_ls = log_prob_grads(means, stds, act)
                d_means = d_lp[:, None] * g_mean
                if cfg.guided_bc_coef > 0 and batch.guide_means is not None:
                    target = batch.guide_means[idx]
                    rows = ~np.isnan(target[:, 0])
                    if rows.any():
                        diff = np.where(rows[:, None], means - np.nan_to_num(target), 0.0)
                        a_loss += cfg.guided_bc_coef * float(np.sum(diff ** 2)) / b
                        d_means = d_means + 2.0 * cfg.guided_bc_coef * diff / b
                layer_grads, ls_grad = actor_backward(p, cache, d_means, d_lp[:, None] * g_ls)
                ls_grad = ls_grad - cfg.entropy_coef
                grads = [g for layer in layer_grads for g in layer] + [ls_grad]

                values, c_cache = critic_forward(p, obs, return_cache=True)
                c_loss = critic_loss(values, batch.returns[idx])
                c_grads = critic_backward(p, c_cache, critic_loss_grad(values, batch.returns[idx]))
                c_grads = [g for layer in c_grads for g in layer]

                if not (math.isfinite(a_loss) and math.isfinite(c_loss)):
                    raise NumericAbort(
                        f"non-finite loss (actor={a_loss}, critic={c_loss}) at version {p.version}")
                self.actor_opt.step(self.actor_arrays, _clip_by_norm(grads, cfg.max_grad_norm))
                self.critic_opt.step(self.critic_arrays, _clip_by_norm(c_grads, cfg.max_grad_norm))
                a_losses.append(a_loss)
                c_losses.append(c_loss)

        p.version += 1
        stats = UpdateStats(
            version=p.version,
            mean_ratio_first=first_ratio if first_ratio is not None else 1.0,
            clip_fraction=clip_hits / max(seen, 1),
            actor_loss=float(np.mean(a_losses)),
            critic_loss=float(np.mean(c_losses)),
            approx_kl=float(np.mean(kls)),
        )
        return p.snapshot(), stats


def global_update(batch: Batch, params: PolicyParameters, cfg: TrainerConfig, seed=0):
    """Stateless single update (fresh optimizer state); returns ``(new_params, stats)``."""
    return Learner(params, cfg, seed).update(batch)


# -- schedule ------------------------------------------------------------------

@dataclass
class TrainResult:
    params: PolicyParameters
    history: list[EpisodeRecord]
    smoothed: list[float]
    snapshots: dict[int, PolicyParameters] = field(default_factory=dict)
    updates: list[UpdateStats] = field(default_factory=list)

    @property
    def rewards(self) -> list[float]:
        return [e.reward for e in self.history]


def _make_pool(factory, seeds, workers: int, guided_logprob: str = "current"):
    if workers == 1:
        return InlinePool(factory, seeds, guided_logprob)
    return ProcessPool(factory, seeds, guided_logprob)


def train_module(k: int, cfg: TrainerConfig, env_factory: Callable[[int], ModuleEnv],
                 undertrained: PolicyParameters | None = None,
                 snapshot_at: Sequence[int] = (),
                 episode_log: Callable[[int, EpisodeRecord, float], None] | None = None,
                 pool: str = "auto") -> TrainResult:
    """Train control module ``k`` for its scheduled number of episodes.

    For ``k >= 2`` the first ``cfg.guided_episodes`` episodes are driven by
    ``undertrained`` (a single-CAV policy applied to each CAV independently).
    ``snapshot_at`` lists episode counts after which a copy of the parameters
    is kept (used to freeze an undertrained ``M_1``).
    """
    if k >= 2 and cfg.guided_episodes > 0:
        if undertrained is None:
            raise ConfigError(f"module {k} needs an undertrained M_1 checkpoint for guided exploration")
        if undertrained.k != 1:
            raise ConfigError("the guided-exploration policy must be a single-CAV module")
    params = init_policy(k, cfg.hidden, seed=int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0]),
                         init_log_std=cfg.init_log_std)
    n_episodes = cfg.episodes_for(k)
    if n_episodes <= 0:
        return TrainResult(params, [], [], {})

    seeds = [np.random.SeedSequence([cfg.seed, k, w]) for w in range(cfg.workers)]
    steps_per_worker = -(-cfg.batch_size // cfg.workers)
    workers = 1 if pool == "inline" else cfg.workers
    pool_obj = (InlinePool(env_factory, seeds, cfg.guided_logprob) if workers == 1
                else _make_pool(env_factory, seeds, workers, cfg.guided_logprob))
    learner = Learner(params, cfg, np.random.SeedSequence([cfg.seed, k, 10_000]))
    snapshot = learner.params.snapshot()
    history: list[EpisodeRecord] = []
    smoothed: list[float] = []
    snapshots: dict[int, PolicyParameters] = {}
    updates: list[UpdateStats] = []
    try:
        while len(history) < n_episodes:
            guided = k >= 2 and len(history) < cfg.guided_episodes
            results = pool_obj.collect(snapshot, steps_per_worker, guided, undertrained)
            for _, finished in results:
                for ep in finished:
                    if len(history) >= n_episodes:
                        break
                    history.append(ep)
                    prev = smoothed[-1] if smoothed else ep.reward
                    smoothed.append(ep.reward if not smoothed else 0.9 * prev + 0.1 * ep.reward)
                    if episode_log is not None:
                        episode_log(len(history), ep, smoothed[-1])
            batch = build_batch([t for t, _ in results], cfg.gamma, cfg.lam)
            snapshot, stats = learner.update(batch)
            updates.append(stats)
            log.debug("k=%d v=%d episodes=%d ratio0=%.3f clip=%.3f", k, stats.version,
                      len(history), stats.mean_ratio_first, stats.clip_fraction)
            for e in snapshot_at:
                if e not in snapshots and len(history) >= e:
                    snapshots[e] = snapshot
    finally:
        pool_obj.close()
    return TrainResult(snapshot, history, smoothed, snapshots, updates)


class EpisodeLogWriter:
    """Appends one JSON record per episode to a text file."""

    def __init__(self, path, k: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.k = k
        self.fh = self.path.open("w")

    def __call__(self, episode: int, ep: EpisodeRecord, smoothed: float) -> None:
        rec = {
            "module": self.k,
            "episode": episode,
            "reward": ep.reward,
            "smoothed_reward": smoothed,
            "collisions": int(ep.collision),
            "mean_dampening_ratio": ep.dampening,
            "guided": ep.guided,
            "steps": ep.steps,
        }
        self.fh.write(json.dumps(rec) + "\n")

    def close(self):
        self.fh.close()
