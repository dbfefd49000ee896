"""Actor-critic multilayer perceptrons with analytic gradients (numpy only).

The actor maps a flattened module observation (``4k`` features) to the means
of a diagonal Gaussian over ``k`` accelerations; the per-action log standard
deviations are free parameters independent of the state. The critic maps
the same input to a scalar value.

Batched arrays are row-major: ``obs`` is ``(B, 4k)``, weights are
``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError

CHECKPOINT_FORMAT = "mixplatoon-policy/1"
LOG_2PI = math.log(2.0 * math.pi)

# v / v_f, g / 100 ft, delta_v / 10 ft/s, delta_d / 10 ft
DEFAULT_OBS_SCALE = (124.0, 100.0, 10.0, 10.0)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(w) < 1 for w in widths):
            raise InvalidInputError("all layer widths must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


Layers = list  # list of [W, b] pairs


def init_layers(spec: MlpSpec, rng: np.random.Generator, out_scale: float = 1.0) -> Layers:
    layers = []
    widths = spec.widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
        if i == len(widths) - 2:
            w *= out_scale
        layers.append([w, np.zeros(fan_out)])
    return layers


def mlp_forward(layers: Layers, x: np.ndarray):
    """tanh hidden layers, linear output. Returns ``(y, cache)``."""
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        h = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def mlp_backward(layers: Layers, cache, dy: np.ndarray):
    """Reverse pass. Returns ``(grads, dx)`` with grads shaped like ``layers``."""
    grads = [None] * len(layers)
    delta = dy
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = cache[i]
        grads[i] = [h_in.T @ delta, delta.sum(axis=0)]
        delta = delta @ w.T
        if i > 0:
            delta = delta * (1.0 - np.square(cache[i]))
    return grads, delta


@dataclass
class PolicyParameters:
    """Weights of the actor and critic for one module size ``k``."""

    k: int
    actor: Layers
    log_std: np.ndarray
    critic: Layers
    obs_scale: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_OBS_SCALE))
    version: int = 0

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w, _ in self.actor[:-1])

    @property
    def obs_dim(self) -> int:
        return 4 * self.k

    def actor_spec(self) -> MlpSpec:
        return MlpSpec(self.obs_dim, self.hidden, self.k)

    def critic_spec(self) -> MlpSpec:
        return MlpSpec(self.obs_dim, tuple(w.shape[1] for w, _ in self.critic[:-1]), 1)

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(
            self.k,
            [[w.copy(), b.copy()] for w, b in self.actor],
            self.log_std.copy(),
            [[w.copy(), b.copy()] for w, b in self.critic],
            self.obs_scale.copy(),
            self.version,
        )

    def arrays(self) -> list[np.ndarray]:
        """Every trainable array: actor layers, log-stds, critic layers."""
        out = [a for layer in self.actor for a in layer]
        out.append(self.log_std)
        out.extend(a for layer in self.critic for a in layer)
        return out

    def snapshot(self) -> "PolicyParameters":
        """Read-only copy for handing to rollout workers."""
        snap = self.copy()
        for a in snap.arrays():
            a.setflags(write=False)
        return snap


def init_policy(k: int, hidden=(64, 64), seed: int = 0, init_log_std: float = 0.0,
                obs_scale=DEFAULT_OBS_SCALE) -> PolicyParameters:
    rng = np.random.default_rng(seed)
    actor = init_layers(MlpSpec(4 * k, tuple(hidden), k), rng, out_scale=0.01)
    critic = init_layers(MlpSpec(4 * k, tuple(hidden), 1), rng, out_scale=1.0)
    return PolicyParameters(k, actor, np.full(k, float(init_log_std)), critic,
                            np.array(obs_scale, dtype=float))


def normalize_obs(obs, params: PolicyParameters) -> np.ndarray:
    """Flatten ``(k, 4)`` / ``(4k,)`` / ``(B, 4k)`` observations and scale features."""
    x = np.asarray(obs, dtype=float)
    if x.ndim == 2 and x.shape == (params.k, 4):
        x = x.reshape(1, -1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != params.obs_dim:
        raise InvalidInputError(f"observation must have {params.obs_dim} features, got shape {np.shape(obs)}")
    return x / np.tile(params.obs_scale, params.k)


def denormalize_obs(x, params: PolicyParameters) -> np.ndarray:
    return np.asarray(x, dtype=float) * np.tile(params.obs_scale, params.k)


def actor_forward(params: PolicyParameters, obs, return_cache: bool = False):
    """Gaussian means and standard deviations, each ``(B, k)``."""
    x = normalize_obs(obs, params)
    means, cache = mlp_forward(params.actor, x)
    stds = np.broadcast_to(np.exp(params.log_std), means.shape)
    if return_cache:
        return means, stds, cache
    return means, stds


def critic_forward(params: PolicyParameters, obs, return_cache: bool = False):
    """State values, shape ``(B,)``."""
    x = normalize_obs(obs, params)
    v, cache = mlp_forward(params.critic, x)
    if return_cache:
        return v[:, 0], cache
    return v[:, 0]


def log_prob(means, stds, action) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    action = np.asarray(action, dtype=float)
    if means.shape != action.shape or stds.shape != means.shape:
        raise InvalidInputError("means, stds and action must share a shape")
    z = (action - means) / stds
    return np.sum(-0.5 * z * z - np.log(stds) - 0.5 * LOG_2PI, axis=-1)


def log_prob_grads(means, stds, action):
    """Partial derivatives of :func:`log_prob` w.r.t. the means and log-stds."""
    z = (action - means) / stds
    return z / stds, z * z - 1.0


def actor_backward(params: PolicyParameters, cache, d_means: np.ndarray, d_log_std: np.ndarray):
    """Gradients of a scalar loss given its adjoints w.r.t. means and log-stds.

    ``d_log_std`` may be per-sample ``(B, k)``; it is summed over the batch.
    """
    grads, _ = mlp_backward(params.actor, cache, d_means)
    d_ls = np.asarray(d_log_std, dtype=float)
    if d_ls.ndim == 2:
        d_ls = d_ls.sum(axis=0)
    return grads, d_ls


def critic_backward(params: PolicyParameters, cache, d_values: np.ndarray):
    grads, _ = mlp_backward(params.critic, cache, np.asarray(d_values, dtype=float).reshape(-1, 1))
    return grads


def sample_action(means, stds, rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> np.ndarray:
    """Draw an (unclamped) action; ``deterministic`` returns the means."""
    means = np.asarray(means, dtype=float)
    if deterministic:
        return means.copy()
    if rng is None:
        raise InvalidInputError("stochastic sampling needs an rng")
    return means + np.asarray(stds) * rng.standard_normal(means.shape)


def act(params: PolicyParameters, obs, rng=None, deterministic=False):
    """Single-observation convenience: returns ``(action (k,), log_prob)``."""
    means, stds = actor_forward(params, obs)
    a = sample_action(means[0], stds[0], rng, deterministic)
    return a, float(log_prob(means[0], stds[0], a))


# -- checkpoints ---------------------------------------------------------

def _layers_to_json(layers):
    return [{"W": w.tolist(), "b": b.tolist()} for w, b in layers]


def _layers_from_json(items):
    return [[np.array(it["W"], dtype=float), np.array(it["b"], dtype=float)] for it in items]


def to_dict(params: PolicyParameters) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "k": params.k,
        "version": params.version,
        "activation": "tanh",
        "actor_spec": {"input_dim": params.obs_dim, "hidden": list(params.hidden), "output_dim": params.k},
        "critic_spec": {"input_dim": params.obs_dim,
                        "hidden": list(params.critic_spec().hidden), "output_dim": 1},
        "obs_scale": params.obs_scale.tolist(),
        "actor": _layers_to_json(params.actor),
        "log_std": params.log_std.tolist(),
        "critic": _layers_to_json(params.critic),
    }


def from_dict(d: dict) -> PolicyParameters:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {d.get('format')!r}")
    try:
        p = PolicyParameters(
            int(d["k"]),
            _layers_from_json(d["actor"]),
            np.array(d["log_std"], dtype=float),
            _layers_from_json(d["critic"]),
            np.array(d["obs_scale"], dtype=float),
            int(d["version"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from exc
    if p.actor[0][0].shape[0] != p.obs_dim or p.actor[-1][0].shape[1] != p.k:
        raise ConfigError("checkpoint actor shape does not match k")
    return p


def save_checkpoint(params: PolicyParameters, path) -> None:
    """Structured-text dump; floats use shortest round-trip repr, so loading is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(to_dict(params)))
    tmp.replace(path)


def load_checkpoint(path) -> PolicyParameters:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
    return from_dict(d)
