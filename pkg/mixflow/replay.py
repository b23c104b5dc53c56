"""
mixflow.replay

Proportional prioritized replay on a sum tree.

Usage:
    from mixflow.replay import PrioritizedReplayBuffer
    buf = PrioritizedReplayBuffer(capacity=50000, obs_dim=60, rng=rng)
    buf.add(obs, action, reward, next_obs, done)
    batch = buf.sample(256, step=1200)
    buf.update_priorities(batch.indices, td_errors)

Stored priorities are p_i = (|td_i| + eps) ** alpha; new transitions enter
with the largest priority seen so far. Importance weights use an exponent
annealed linearly from beta0 to 1 and are divided by the batch maximum.
"""
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mixflow.errors import ValidationError

PRIORITY_EPS = 1e-6


class SumTree:
    """Binary tree whose internal nodes hold the sum of their children."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.tree = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity - 1:]

    def update(self, point: int, value: float) -> None:
        idx = point + self.capacity - 1
        self.tree[idx] = value
        # recompute instead of adding deltas so sums never drift
        while idx > 0:
            idx = (idx - 1) // 2
            self.tree[idx] = self.tree[2 * idx + 1] + self.tree[2 * idx + 2]

    def find(self, v: float) -> int:
        """Leaf index whose cumulative range contains v."""
        idx = 0
        while idx < self.capacity - 1:
            left = 2 * idx + 1
            if v < self.tree[left] or self.tree[left + 1] <= 0:
                idx = left
            else:
                v -= self.tree[left]
                idx = left + 1
        return idx - (self.capacity - 1)


@dataclass
class Batch:
    indices: np.ndarray
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.indices)


class PrioritizedReplayBuffer:
    """Ring buffer of transitions; add, sample and update are lock-protected."""

    def __init__(
        self,
        capacity: int,
        obs_dim: int,
        alpha: float = 0.5,
        beta0: float = 0.4,
        beta_steps: int = 100000,
        rng: Optional[np.random.Generator] = None,
    ):
        if capacity < 1:
            raise ValidationError("buffer_capacity", "must be >= 1")
        self.capacity = capacity
        self.alpha = alpha
        self.beta0 = beta0
        self.beta_steps = max(1, beta_steps)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.tree = SumTree(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros(capacity)
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0
        self.max_priority = 1.0
        self._lock = threading.Lock()

    def __len__(self):
        return self.size

    def beta(self, step: int) -> float:
        frac = min(1.0, max(0, step) / self.beta_steps)
        return self.beta0 + (1.0 - self.beta0) * frac

    def add(self, obs, action: float, reward: float, next_obs, done: bool) -> None:
        with self._lock:
            i = self.cursor
            self.obs[i] = obs
            self.next_obs[i] = next_obs
            self.act[i] = action
            self.rew[i] = reward
            self.done[i] = float(done)
            self.tree.update(i, self.max_priority)
            self.cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        """Sampling distribution over stored transitions."""
        with self._lock:
            p = self.tree.leaves()[: self.size]
            return p / p.sum()

    def sample(self, batch_size: int, step: int = 0) -> Batch:
        """Stratified proportional sample of batch_size transitions."""
        with self._lock:
            if self.size < batch_size:
                raise ValidationError(
                    "batch_size", f"buffer holds {self.size} transitions, need {batch_size}"
                )
            total = self.tree.total
            seg = total / batch_size
            picks = np.empty(batch_size, dtype=np.int64)
            for k in range(batch_size):
                v = self.rng.uniform(k * seg, (k + 1) * seg)
                picks[k] = min(self.tree.find(min(v, total)), self.size - 1)
            prob = self.tree.leaves()[picks] / total
            weights = (self.size * prob) ** (-self.beta(step))
            weights = weights / weights.max()
            return Batch(
                indices=picks,
                obs=self.obs[picks].copy(),
                act=self.act[picks].copy(),
                rew=self.rew[picks].copy(),
                next_obs=self.next_obs[picks].copy(),
                done=self.done[picks].copy(),
                weights=weights,
            )

    def update_priorities(self, indices, td_errors) -> None:
        p = (np.abs(np.asarray(td_errors, dtype=np.float64)) + PRIORITY_EPS) ** self.alpha
        with self._lock:
            for i, value in zip(np.asarray(indices).tolist(), p.tolist()):
                self.tree.update(i, value)
            self.max_priority = max(self.max_priority, float(p.max()))
