"""
mixflow.sac

Soft Actor-Critic on plain numpy: dense ReLU networks with hand-written
backward passes, Adam, twin critics with Polyak-averaged targets and
automatic entropy-temperature tuning.

Usage:
    from mixflow.sac import SAC
    agent = SAC(obs_dim=60, hyper=hyperparameters(), seed=0)
    action, logp = agent.sample_action(obs, rng)
    info = agent.update(buffer.sample(256, step), rng)
    buffer.update_priorities(batch.indices, info.priorities)

The actor maps an observation to (mean, log-std) of a Gaussian over u; the
action is a_max * tanh(u). Critics read [obs, a / a_max].
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from mixflow.errors import TrainingDivergenceError, ValidationError
from mixflow.replay import Batch
from mixflow.utils import rng_stream

logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# -----------------------------
# Dense networks
# -----------------------------


class MLP:
    """ReLU hidden layers, linear output. Weights are (fan_in, fan_out)."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases):
            raise ValidationError("layers", "weights and biases differ in count")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layers[{i}]", f"bad shapes {w.shape} / {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValidationError(f"layers[{i}]", "input size does not match previous layer")

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "MLP":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MLP":
        return cls(
            [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> List[np.ndarray]:
        """Arrays in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        h = np.atleast_2d(x)
        if h.shape[1] != self.weights[0].shape[0]:
            raise ValidationError("obs", f"expected {self.weights[0].shape[0]} inputs, got {h.shape[1]}")
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            cache.append((h, z))
            h = z if i == last else np.maximum(z, 0.0)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, grad_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Gradients for params() order, plus the gradient w.r.t. the input."""
        grads: List[np.ndarray] = []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h, _ = cache[i]
            grads[:0] = [h.T @ g, g.sum(axis=0)]
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (cache[i - 1][1] > 0)
        return grads, g


# -----------------------------
# Optimizer
# -----------------------------


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def polyak(target: MLP, online: MLP, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, in place."""
    for t, o in zip(target.params(), online.params()):
        t *= 1.0 - tau
        t += tau * o


# -----------------------------
# Policy
# -----------------------------


def actor_heads(actor: MLP, obs: np.ndarray):
    out, cache = actor.forward(obs)
    mean = out[:, 0]
    raw = out[:, 1]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, raw, cache


def squash(mean, log_std, eps, a_max: float):
    """Reparametrized sample: (action, log-prob, tanh(u), std)."""
    std = np.exp(log_std)
    u = mean + std * eps
    t = np.tanh(u)
    logp = -0.5 * eps**2 - log_std - HALF_LOG_2PI - np.log(a_max * (1.0 - t**2) + TANH_EPS)
    return a_max * t, logp, t, std


def sample_action(actor: MLP, obs: np.ndarray, rng: np.random.Generator, a_max: float = 10.0):
    """Stochastic action(s) in [-a_max, a_max] with their log-probabilities."""
    if not actor.is_finite():
        raise TrainingDivergenceError("Actor parameters are not finite")
    mean, log_std, _, _ = actor_heads(actor, obs)
    eps = rng.standard_normal(mean.shape)
    action, logp, _, _ = squash(mean, log_std, eps, a_max)
    return np.clip(action, -a_max, a_max), logp


def deterministic_action(actor: MLP, obs: np.ndarray, a_max: float = 10.0) -> np.ndarray:
    mean, _, _, _ = actor_heads(actor, obs)
    return a_max * np.tanh(mean)


# -----------------------------
# Losses and gradients
# -----------------------------


def critic_input(obs: np.ndarray, act: np.ndarray, a_max: float) -> np.ndarray:
    return np.hstack([np.atleast_2d(obs), (np.asarray(act) / a_max).reshape(-1, 1)])


def critic_loss(critic: MLP, x: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Importance-weighted mean squared residual; returns (loss, grads, residual)."""
    q, cache = critic.forward(x)
    delta = q[:, 0] - y
    loss = float(np.mean(weights * delta**2))
    grad_q = (2.0 * weights * delta / len(y)).reshape(-1, 1)
    grads, _ = critic.backward(cache, grad_q)
    return loss, grads, delta


def actor_loss(
    actor: MLP, critics: Tuple[MLP, MLP], obs: np.ndarray, eps: np.ndarray, alpha: float, a_max: float
):
    """
    mean(alpha * logpi(a|o) - min(Q1, Q2)(o, a)) for a reparametrized with
    the fixed noise eps; returns (loss, grads, logp).
    """
    mean, log_std, raw, cache = actor_heads(actor, obs)
    action, logp, t, std = squash(mean, log_std, eps, a_max)
    x = critic_input(obs, action, a_max)
    q1, c1 = critics[0].forward(x)
    q2, c2 = critics[1].forward(x)
    use_first = q1[:, 0] <= q2[:, 0]
    q = np.where(use_first, q1[:, 0], q2[:, 0])
    loss = float(np.mean(alpha * logp - q))

    n = len(mean)
    ones = np.ones((n, 1))
    _, gi1 = critics[0].backward(c1, ones)
    _, gi2 = critics[1].backward(c2, ones)
    dq_da = np.where(use_first, gi1[:, -1], gi2[:, -1]) / a_max

    sech2 = 1.0 - t**2
    dh_du = 2.0 * a_max * t * sech2 / (a_max * sech2 + TANH_EPS)
    dl_du = alpha * dh_du - dq_da * a_max * sech2
    dl_dmean = dl_du / n
    dl_dlogstd = (-alpha + dl_du * std * eps) / n
    dl_dlogstd = dl_dlogstd * ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX))
    grads, _ = actor.backward(cache, np.column_stack([dl_dmean, dl_dlogstd]))
    return loss, grads, logp


# -----------------------------
# Agent
# -----------------------------


@dataclass
class SacParams:
    actor: MLP
    critic1: MLP
    critic2: MLP
    target1: MLP
    target2: MLP
    log_alpha: float = 0.0

    def networks(self) -> List[MLP]:
        return [self.actor, self.critic1, self.critic2, self.target1, self.target2]

    def is_finite(self) -> bool:
        return math.isfinite(self.log_alpha) and all(n.is_finite() for n in self.networks())

    @classmethod
    def init(cls, obs_dim: int, hidden: Sequence[int], rng: np.random.Generator) -> "SacParams":
        actor = MLP.init([obs_dim, *hidden, 2], rng)
        critic1 = MLP.init([obs_dim + 1, *hidden, 1], rng)
        critic2 = MLP.init([obs_dim + 1, *hidden, 1], rng)
        return cls(actor, critic1, critic2, critic1.copy(), critic2.copy(), 0.0)


@dataclass
class UpdateInfo:
    critic1_loss: float
    critic2_loss: float
    actor_loss: float
    alpha_loss: float
    temperature: float
    priorities: np.ndarray = field(repr=False, default=None)


class SAC:
    """Learner state: parameters plus one Adam optimizer per trainable part."""

    def __init__(self, obs_dim: int, hyper: Mapping, seed: int = 0, params: Optional[SacParams] = None):
        self.obs_dim = obs_dim
        self.hyper = dict(hyper)
        self.a_max = float(hyper["a_max"])
        self.discount = float(hyper["discount"])
        self.tau = float(hyper["tau"])
        self.target_entropy = float(hyper["target_entropy"])
        lr = float(hyper["learning_rate"])
        self.params = params or SacParams.init(obs_dim, hyper["hidden_layers"], rng_stream(seed, "init"))
        self._alpha_box = np.array([self.params.log_alpha])
        self.opt_actor = Adam(self.params.actor.params(), lr)
        self.opt_critic1 = Adam(self.params.critic1.params(), lr)
        self.opt_critic2 = Adam(self.params.critic2.params(), lr)
        self.opt_alpha = Adam([self._alpha_box], lr)
        self.updates = 0

    @property
    def temperature(self) -> float:
        return math.exp(self._alpha_box[0])

    def sample_action(self, obs, rng):
        return sample_action(self.params.actor, obs, rng, self.a_max)

    def _guard(self, info: Dict[str, float]) -> None:
        if not all(math.isfinite(v) for v in info.values()) or not self.params.is_finite():
            raise TrainingDivergenceError(
                f"Non-finite loss or parameter at update {self.updates}: {info}",
                snapshot={"update": self.updates, **info},
            )

    def critic_target(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        next_action, next_logp = sample_action(p.actor, batch.next_obs, rng, self.a_max)
        x = critic_input(batch.next_obs, next_action, self.a_max)
        q_next = np.minimum(p.target1(x)[:, 0], p.target2(x)[:, 0])
        return batch.rew + self.discount * (1.0 - batch.done) * (q_next - self.temperature * next_logp)

    def update(self, batch: Batch, rng: np.random.Generator) -> UpdateInfo:
        """One gradient step on critics, actor and temperature, then Polyak targets."""
        p = self.params
        y = self.critic_target(batch, rng)
        x = critic_input(batch.obs, batch.act, self.a_max)
        l1, g1, d1 = critic_loss(p.critic1, x, y, batch.weights)
        l2, g2, d2 = critic_loss(p.critic2, x, y, batch.weights)
        self._guard({"critic1_loss": l1, "critic2_loss": l2})
        self.opt_critic1.step(g1)
        self.opt_critic2.step(g2)

        alpha = self.temperature
        eps = rng.standard_normal(len(batch))
        la, ga, logp = actor_loss(p.actor, (p.critic1, p.critic2), batch.obs, eps, alpha, self.a_max)
        self._guard({"actor_loss": la})
        self.opt_actor.step(ga)

        log_alpha = float(self._alpha_box[0])
        alpha_loss = float(-log_alpha * np.mean(logp + self.target_entropy))
        self.opt_alpha.step([np.array([-np.mean(logp + self.target_entropy)])])
        p.log_alpha = float(self._alpha_box[0])

        polyak(p.target1, p.critic1, self.tau)
        polyak(p.target2, p.critic2, self.tau)
        self.updates += 1
        self._guard({"alpha_loss": alpha_loss})
        return UpdateInfo(
            critic1_loss=l1,
            critic2_loss=l2,
            actor_loss=la,
            alpha_loss=alpha_loss,
            temperature=self.temperature,
            priorities=(np.abs(d1) + np.abs(d2)) / 2.0,
        )


# -----------------------------
# Parameter publication
# -----------------------------


class ParameterStore:
    """
    Versioned copy-on-publish actor snapshots. The learner publishes, episode
    workers read a snapshot that never changes underneath them.
    """

    def __init__(self, actor: MLP):
        self._lock = threading.Lock()
        self._version = 0
        self._actor = actor.copy()

    def publish(self, actor: MLP) -> int:
        snap = actor.copy()
        with self._lock:
            self._actor = snap
            self._version += 1
            return self._version

    def snapshot(self) -> Tuple[int, MLP]:
        with self._lock:
            return self._version, self._actor
