"""
mixflow.training

Centralized training loop: every RV in every episode feeds one shared
replay buffer, one learner updates the shared policy.

Usage:
    from mixflow.config import hyperparameters
    from mixflow.scenarios import read_manifest
    from mixflow.training import train

    specs = [spec for _, spec in read_manifest('scenarios/manifest.json', split='train')]
    result = train(specs, hyperparameters(), seed=0, episodes=50, out_dir='runs/demo',
                   base_dir='scenarios')
    print(result.log[-1])
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from mixflow.checkpoint import save_checkpoint
from mixflow.decorators import log_exceptions, measure_time
from mixflow.env import MixedTrafficEnv, SpeedTrackingEnv
from mixflow.errors import MixflowError, ValidationError
from mixflow.evaluation import WAIT_BOUNDS_HEADER, WaitBounds, calibrate_wait_bounds
from mixflow.mdp import ObsConfig
from mixflow.network.graph import NetworkGraph
from mixflow.replay import PrioritizedReplayBuffer
from mixflow.sac import SAC, ParameterStore, SacParams, UpdateInfo, sample_action
from mixflow.scenarios import ScenarioSpec, build_graph
from mixflow.utils import derive_seed, format_float, progress_bar, rng_stream, write_csv

logger = logging.getLogger(__name__)

TRAINING_LOG_HEADER = (
    "episode",
    "steps",
    "return",
    "throughput",
    "avg_wait",
    "collisions",
    "buffer_size",
    "temperature",
)
TRAINING_LOG_NAME = "training_log.csv"
WAIT_BOUNDS_NAME = "wait_bounds.csv"
CHECKPOINT_DIR = "checkpoints"


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    episode_return: float
    throughput: float
    avg_wait: float
    collisions: int
    buffer_size: int
    temperature: float

    def row(self) -> List[str]:
        return [
            str(self.episode),
            str(self.steps),
            format_float(self.episode_return),
            format_float(self.throughput),
            format_float(self.avg_wait),
            str(self.collisions),
            str(self.buffer_size),
            format_float(self.temperature),
        ]


@dataclass
class TrainingResult:
    params: SacParams
    log: List[EpisodeLog] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    updates: int = 0
    transitions: int = 0
    wait_bounds: Dict[str, WaitBounds] = field(default_factory=dict)


class Learner:
    """
    The single mutator of the policy: SAC agent, replay buffer and the
    published actor snapshot that action selection reads.
    """

    def __init__(self, obs_dim: int, hyper: Mapping, seed: int, out_dir: Optional[str] = None):
        self.hyper = dict(hyper)
        self.agent = SAC(obs_dim, hyper, seed)
        self.buffer = PrioritizedReplayBuffer(
            capacity=int(hyper["buffer_capacity"]),
            obs_dim=obs_dim,
            alpha=float(hyper["per_alpha"]),
            beta0=float(hyper["per_beta0"]),
            beta_steps=int(hyper["per_beta_steps"]),
            rng=rng_stream(seed, "replay"),
        )
        self.store = ParameterStore(self.agent.params.actor)
        self.policy_rng = rng_stream(seed, "policy")
        self.train_rng = rng_stream(seed, "train")
        self.out_dir = out_dir
        self.checkpoints: List[str] = []
        self.transitions = 0
        self.last: Optional[UpdateInfo] = None

    @property
    def warm(self) -> bool:
        return self.transitions >= int(self.hyper["warmup"])

    def act(self, obs: Dict[str, np.ndarray]) -> Dict[str, float]:
        """Uniform actions until warm, then samples from the published actor."""
        if not obs:
            return {}
        ids = list(obs)
        if not self.warm:
            lo, hi = float(self.hyper["a_min"]), float(self.hyper["a_max"])
            return {vid: float(self.policy_rng.uniform(lo, hi)) for vid in ids}
        _, actor = self.store.snapshot()
        actions, _ = sample_action(actor, np.stack([obs[v] for v in ids]), self.policy_rng, self.agent.a_max)
        return {vid: float(a) for vid, a in zip(ids, actions)}

    def observe(self, obs, action: float, reward: float, next_obs, done: bool) -> None:
        self.buffer.add(obs, action, reward, next_obs, done)
        self.transitions += 1

    def learn(self) -> int:
        """Run the configured number of updates for one environment step."""
        batch_size = int(self.hyper["batch_size"])
        if not self.warm or len(self.buffer) < batch_size:
            return 0
        done = 0
        for _ in range(int(self.hyper["updates_per_step"])):
            batch = self.buffer.sample(batch_size, self.agent.updates)
            self.last = self.agent.update(batch, self.train_rng)
            self.buffer.update_priorities(batch.indices, self.last.priorities)
            done += 1
            every = int(self.hyper["checkpoint_every"])
            if self.out_dir and every > 0 and self.agent.updates % every == 0:
                self.checkpoint(f"update_{self.agent.updates:08d}.mxfw")
        self.store.publish(self.agent.params.actor)
        return done

    def checkpoint(self, name: str) -> str:
        path = os.path.join(self.out_dir, CHECKPOINT_DIR, name)
        save_checkpoint(path, self.agent.params)
        self.checkpoints.append(path)
        return path


def _run_episode(
    learner: Learner, env: MixedTrafficEnv, seed: int, p_rv: float, steps: int
) -> Tuple[int, float]:
    obs = env.reset(seed, p_rv)
    total = 0.0
    for _ in range(steps):
        actions = learner.act(obs)
        next_obs, r, dones, info = env.step(actions)
        for vid, a in actions.items():
            learner.observe(obs[vid], a, r, info.next_obs[vid], dones[vid])
        learner.learn()
        total += r
        obs = next_obs
    return steps, total


def _scenario_hyper(hyper: Mapping, bounds: Optional[WaitBounds]) -> Mapping:
    if bounds is None:
        return hyper
    return dict(hyper, W_l=bounds.W_l, W_h=bounds.W_h)


@measure_time("[TRAIN]")
@log_exceptions("[TRAIN]")
def train(
    specs: Sequence[ScenarioSpec],
    hyper: Mapping,
    seed: int = 0,
    episodes: int = 1,
    steps: Optional[int] = None,
    out_dir: Optional[str] = None,
    base_dir: str = ".",
    max_scenarios: Optional[int] = None,
    graphs: Optional[Mapping[str, NetworkGraph]] = None,
    progress: bool = False,
    wait_bounds: Optional[Mapping[str, WaitBounds]] = None,
) -> TrainingResult:
    """
    Train one shared policy over scenarios visited round robin. P_rv is drawn
    per episode from hyper["P_rv"]. With out_dir, writes training_log.csv and
    checkpoints (every checkpoint_every updates plus final.mxfw).

    Each scenario's reward uses its own W_l/W_h from wait_bounds; with
    hyper["calibrate_wait"] and no wait_bounds they come from
    calibrate_wait_bounds, otherwise every scenario uses hyper's band.
    """
    if not specs:
        raise ValidationError("scenarios", "the scenario set is empty")
    if episodes < 0:
        raise ValidationError("episodes", "must be >= 0")
    steps = int(steps if steps is not None else hyper["episode_steps"])
    if steps < 1:
        raise ValidationError("steps", "must be >= 1")
    specs = list(specs)[: max_scenarios] if max_scenarios else list(specs)
    p_grid = list(hyper["P_rv"])
    if not p_grid:
        raise ValidationError("P_rv", "empty penetration grid")

    obs_dim = ObsConfig.from_hyper(hyper).size
    learner = Learner(obs_dim, hyper, seed, out_dir)
    cache: Dict[str, NetworkGraph] = dict(graphs or {})
    if wait_bounds is None and hyper.get("calibrate_wait", False):
        wait_bounds = calibrate_wait_bounds(specs, hyper, seed, steps, base_dir, cache)
    wait_bounds = dict(wait_bounds or {})
    log: List[EpisodeLog] = []
    logger.info(f"[TRAIN] {episodes} episode(s) x {steps} steps over {len(specs)} scenario(s)")

    bar = progress_bar(episodes, "train", disable=not progress)
    for ep in range(episodes):
        spec = specs[ep % len(specs)]
        p_rv = float(p_grid[int(learner.train_rng.integers(len(p_grid)))])
        try:
            if spec.name not in cache:
                cache[spec.name] = build_graph(spec, base_dir)
            env_hyper = _scenario_hyper(hyper, wait_bounds.get(spec.name))
            env = MixedTrafficEnv(cache[spec.name], env_hyper, spec.demand, episode_steps=steps)
            n, ret = _run_episode(learner, env, derive_seed(seed, f"{spec.name}:{ep}"), p_rv, steps)
        except MixflowError as e:
            logger.error(f"[TRAIN] Episode {ep} on {spec.name} (P_rv={p_rv:g}) failed: {e}")
            raise
        state = env.state
        waits = state.finished_waits + [v.wait for v in state.vehicles.values()]
        entry = EpisodeLog(
            episode=ep,
            steps=n,
            episode_return=ret,
            throughput=state.exited_total / n,
            avg_wait=float(np.mean(waits)) if waits else 0.0,
            collisions=state.collisions_total,
            buffer_size=len(learner.buffer),
            temperature=learner.agent.temperature,
        )
        log.append(entry)
        logger.info(
            f"[TRAIN] episode {ep} {spec.name} P_rv={p_rv:g} return={ret:.3f} "
            f"updates={learner.agent.updates} buffer={len(learner.buffer)}"
        )
        bar.update(1)
    bar.close()

    if out_dir:
        write_csv(os.path.join(out_dir, TRAINING_LOG_NAME), TRAINING_LOG_HEADER, [e.row() for e in log])
        if wait_bounds:
            write_csv(
                os.path.join(out_dir, WAIT_BOUNDS_NAME), WAIT_BOUNDS_HEADER, [b.row() for b in wait_bounds.values()]
            )
        if learner.agent.updates:
            learner.checkpoint("final.mxfw")

    return TrainingResult(
        params=learner.agent.params,
        log=log,
        checkpoints=list(learner.checkpoints),
        updates=learner.agent.updates,
        transitions=learner.transitions,
        wait_bounds=wait_bounds,
    )


# -----------------------------
# Speed-tracking toy task
# -----------------------------


def train_speed_tracking(hyper: Mapping, seed: int = 0, episodes: int = 200, max_steps: int = 20) -> List[float]:
    """Per-episode returns of SAC on SpeedTrackingEnv; a sanity check of the learner."""
    env = SpeedTrackingEnv(ObsConfig.from_hyper(hyper), float(hyper["a_max"]), max_steps, float(hyper["dt"]))
    learner = Learner(env.obs_dim, hyper, seed)
    reset_rng = rng_stream(seed, "spawn")
    returns = []
    for _ in range(episodes):
        obs = env.reset(reset_rng)
        total = 0.0
        while True:
            action = learner.act({"rv": obs})["rv"]
            next_obs, r, terminal, truncated = env.step(action)
            learner.observe(obs, action, r, next_obs, terminal)
            learner.learn()
            total += r
            obs = next_obs
            if terminal or truncated:
                break
        returns.append(total)
    return returns
