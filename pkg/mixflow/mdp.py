"""
mixflow.mdp

Per-RV observation encoding and the global three-term reward.

Usage:
    from mixflow.mdp import ObsConfig, RewardWeights, observe, reward
    obs = observe(state, 'veh000003', g, ObsConfig())
    total, parts = reward(events, state, RewardWeights())

An observation holds N_f front slots then N_b rear slots, 4 values each:
(lateral / d, longitudinal / region length, lateral rel. speed / v_norm,
longitudinal rel. speed / v_norm), all clipped to [-1, 1]. Empty front slots
are all +1, empty rear slots all -1.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from mixflow.errors import UnknownVehicleError, ValidationError
from mixflow.network.graph import NetworkGraph
from mixflow.sim import Kinematics, SimState, StepEvents, kinematics

FEATURES = 4


@dataclass(frozen=True)
class ObsConfig:
    d_f: float = 50.0
    d_b: float = 20.0
    d: float = 5.0
    N_f: int = 10
    N_b: int = 5

    def __post_init__(self):
        for name in ("d_f", "d_b", "d"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be positive")
        for name in ("N_f", "N_b"):
            if getattr(self, name) < 1:
                raise ValidationError(name, "must be >= 1")

    @property
    def size(self) -> int:
        return (self.N_f + self.N_b) * FEATURES

    @classmethod
    def from_hyper(cls, hyper: Mapping) -> "ObsConfig":
        return cls(hyper["d_f"], hyper["d_b"], hyper["d"], hyper["N_f"], hyper["N_b"])


def padding(cfg: ObsConfig) -> np.ndarray:
    """Observation with every slot empty."""
    return np.concatenate(
        [np.ones(cfg.N_f * FEATURES), -np.ones(cfg.N_b * FEATURES)]
    )


def encode(
    snap: Kinematics, i: int, v_norm: float, cfg: ObsConfig
) -> np.ndarray:
    """Encode the neighbourhood of the vehicle at row i of a kinematics snapshot."""
    h = snap.heading[i]
    fwd = np.array([np.cos(h), np.sin(h)])
    left = np.array([-np.sin(h), np.cos(h)])
    rel = snap.xy - snap.xy[i]
    vel = snap.speed[:, None] * np.column_stack([np.cos(snap.heading), np.sin(snap.heading)])
    rel_v = vel - vel[i]
    lon, lat = rel @ fwd, rel @ left
    lon_v, lat_v = rel_v @ fwd, rel_v @ left
    dist = np.hypot(lon, lat)

    others = np.arange(len(snap.ids)) != i
    lateral_ok = np.abs(lat) <= cfg.d
    front = others & lateral_ok & (lon >= 0) & (lon <= cfg.d_f)
    rear = others & lateral_ok & (lon < 0) & (lon >= -cfg.d_b)

    out = padding(cfg)
    for mask, length, slots, start in (
        (front, cfg.d_f, cfg.N_f, 0),
        (rear, cfg.d_b, cfg.N_b, cfg.N_f * FEATURES),
    ):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        # nearest first, ties by vehicle id
        order = np.array(sorted(idx, key=lambda j: (dist[j], snap.ids[j]))[:slots])
        feats = np.column_stack(
            [lat[order] / cfg.d, lon[order] / length, lat_v[order] / v_norm, lon_v[order] / v_norm]
        )
        out[start:start + feats.size] = np.clip(feats, -1.0, 1.0).ravel()
    return out


def observe(
    state: SimState, ego: str, g: NetworkGraph, cfg: ObsConfig, snapshot: Optional[Kinematics] = None
) -> np.ndarray:
    """Observation of one RV; pass a shared snapshot when encoding many RVs per step."""
    if ego not in state.vehicles:
        raise UnknownVehicleError(ego)
    snap = snapshot if snapshot is not None else kinematics(state, g)
    i = snap.index(ego)
    return encode(snap, i, snap.limit[i], cfg)


def observe_all(
    state: SimState, ids: Iterable[str], g: NetworkGraph, cfg: ObsConfig
) -> Dict[str, np.ndarray]:
    snap = kinematics(state, g)
    return {vid: observe(state, vid, g, cfg, snap) for vid in ids}


# -----------------------------
# Reward
# -----------------------------


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 5.0
    W_l: float = 20.0
    W_h: float = 30.0
    C_tp: float = 10.0
    C_col: float = 10.0

    def __post_init__(self):
        if self.C_tp <= 0 or self.C_col <= 0:
            raise ValidationError("C_tp/C_col", "caps must be positive")
        if self.W_l > self.W_h:
            raise ValidationError("W_l", "must not exceed W_h")

    @property
    def bound(self) -> float:
        return abs(self.alpha) + abs(self.beta) + abs(self.gamma)

    @classmethod
    def from_hyper(cls, hyper: Mapping) -> "RewardWeights":
        return cls(*(hyper[k] for k in ("alpha", "beta", "gamma", "W_l", "W_h", "C_tp", "C_col")))


class RewardComponents(NamedTuple):
    throughput: float
    collision: float
    wait: float


def _clip(x: float) -> float:
    return min(max(x, -1.0), 1.0)


def wait_term(W: float, w: RewardWeights) -> float:
    if w.W_l <= W <= w.W_h:
        return 1.0
    mid = (w.W_l + w.W_h) / 2.0
    return _clip(-abs(W - mid) / mid) if mid > 0 else -1.0


def collision_term(count: int, w: RewardWeights) -> float:
    if count < 1:
        return 1.0
    return min(max(-count / w.C_col, -1.0), 0.0)


def mean_wait(state: SimState) -> float:
    """Mean accumulated wait of live vehicles; 0 with nobody on the road."""
    if not state.vehicles:
        return 0.0
    return float(np.mean([v.wait for v in state.vehicles.values()]))


def reward(ev: StepEvents, state: SimState, w: RewardWeights) -> Tuple[float, RewardComponents]:
    """Global step reward shared by every RV, with its normalized components."""
    parts = RewardComponents(
        throughput=_clip(ev.exited_this_step / w.C_tp),
        collision=collision_term(ev.collision_count_this_step, w),
        wait=wait_term(mean_wait(state), w),
    )
    total = w.alpha * parts.throughput + w.beta * parts.collision + w.gamma * parts.wait
    return total, parts
