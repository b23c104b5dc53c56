"""
mixflow.env

Gym-style environments around the simulator.

Usage:
    from mixflow.env import MixedTrafficEnv
    env = MixedTrafficEnv(g, hyper, demand=1000.0)
    obs = env.reset(seed=3, p_rv=0.7)
    while not env.done:
        actions = {vid: 0.0 for vid in obs}
        obs, reward, dones, info = env.step(actions)
        # info["next_obs"][vid] is o' for every vid that acted

Every RV inside the control zone acts on its own observation; all of them
share the step's global reward.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from mixflow.controllers import zone_rvs
from mixflow.errors import ValidationError
from mixflow.mdp import FEATURES, ObsConfig, RewardWeights, encode, padding, reward
from mixflow.network.graph import NetworkGraph
from mixflow.sim import Gate, Kinematics, SimConfig, SimState, Simulator, kinematics

logger = logging.getLogger(__name__)


@dataclass
class StepInfo:
    next_obs: Dict[str, np.ndarray] = field(default_factory=dict)
    components: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    exited: int = 0
    collisions: int = 0
    truncated: bool = False


class MixedTrafficEnv:
    """Multi-RV environment over one scenario network."""

    def __init__(
        self,
        g: NetworkGraph,
        hyper: Mapping,
        demand: float,
        gate: Optional[Gate] = None,
        episode_steps: Optional[int] = None,
    ):
        self.g = g
        self.hyper = dict(hyper)
        self.demand = float(demand)
        self.gate = gate
        self.episode_steps = int(episode_steps or hyper["episode_steps"])
        self.obs_cfg = ObsConfig.from_hyper(hyper)
        self.weights = RewardWeights.from_hyper(hyper)
        self.sim: Optional[Simulator] = None
        self.state: Optional[SimState] = None

    @property
    def obs_dim(self) -> int:
        return self.obs_cfg.size

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.step_index >= self.episode_steps

    def reset(self, seed: int, p_rv: float) -> Dict[str, np.ndarray]:
        cfg = SimConfig.from_hyper(self.hyper, self.demand, p_rv)
        self.sim = Simulator(self.g, cfg, self.gate)
        self.state = SimState.create(seed)
        return self.observations()

    def controlled(self, snap: Kinematics) -> List[str]:
        return zone_rvs(self.state, self.g, snap, self.sim.cfg.control_zone_radius)

    def observations(self, snap: Optional[Kinematics] = None) -> Dict[str, np.ndarray]:
        if self.state is None:
            raise ValidationError("env", "reset() must be called first")
        snap = snap if snap is not None else kinematics(self.state, self.g)
        out = {}
        for vid in self.controlled(snap):
            i = snap.index(vid)
            out[vid] = encode(snap, i, snap.limit[i], self.obs_cfg)
        return out

    def step(
        self, actions: Mapping[str, float]
    ) -> Tuple[Dict[str, np.ndarray], float, Dict[str, bool], StepInfo]:
        if self.state is None:
            raise ValidationError("env", "reset() must be called first")
        a_min, a_max = self.sim.cfg.a_min, self.sim.cfg.a_max
        commands = {vid: float(np.clip(a, a_min, a_max)) for vid, a in actions.items()}
        self.state, events = self.sim.step(self.state, commands)
        total, parts = reward(events, self.state, self.weights)

        snap = kinematics(self.state, self.g)
        collided = set(events.collided_ids)
        info = StepInfo(
            components=tuple(parts),
            exited=events.exited_this_step,
            collisions=events.collision_count_this_step,
            truncated=self.done,
        )
        dones: Dict[str, bool] = {}
        for vid in commands:
            if vid in self.state.vehicles:
                i = snap.index(vid)
                info.next_obs[vid] = encode(snap, i, snap.limit[i], self.obs_cfg)
            else:
                info.next_obs[vid] = padding(self.obs_cfg)
            dones[vid] = vid in collided
        return self.observations(snap), total, dones, info


# -----------------------------
# Speed-tracking toy task
# -----------------------------


class SpeedTrackingEnv:
    """
    One RV alone on a straight 200 m lane. Reward -|v - target| / target per
    step; the episode ends at the lane end or after max_steps.

    The observation is all padding except the first front slot, which holds a
    pace marker moving at the target speed a fixed distance ahead.
    """

    LANE_LENGTH = 200.0
    SPEED_LIMIT = 20.0
    TARGET_SPEED = 10.0
    MARKER_GAP = 25.0

    def __init__(self, obs_cfg: Optional[ObsConfig] = None, a_max: float = 10.0, max_steps: int = 20, dt: float = 1.0):
        self.obs_cfg = obs_cfg or ObsConfig()
        self.a_max = a_max
        self.max_steps = max_steps
        self.dt = dt
        self.x = 0.0
        self.v = 0.0
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return self.obs_cfg.size

    def observe(self) -> np.ndarray:
        obs = padding(self.obs_cfg)
        obs[:FEATURES] = np.clip(
            [0.0, self.MARKER_GAP / self.obs_cfg.d_f, 0.0, (self.TARGET_SPEED - self.v) / self.SPEED_LIMIT],
            -1.0,
            1.0,
        )
        return obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = 0.0
        self.v = float(rng.uniform(0.0, self.SPEED_LIMIT))
        self.t = 0
        return self.observe()

    def step(self, action: float) -> Tuple[np.ndarray, float, bool, bool]:
        """(obs, reward, terminal, truncated)"""
        a = float(np.clip(action, -self.a_max, self.a_max))
        self.v = min(max(self.v + a * self.dt, 0.0), self.SPEED_LIMIT)
        self.x += self.v * self.dt
        self.t += 1
        r = -abs(self.v - self.TARGET_SPEED) / self.TARGET_SPEED
        terminal = self.x >= self.LANE_LENGTH
        return self.observe(), r, terminal, self.t >= self.max_steps
