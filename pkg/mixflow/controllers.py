"""
mixflow.controllers

Per-step controllers that drive an episode:

    NoTLController    no commands, no gating; every vehicle runs IDM
    TLController      fixed-time traffic lights gating approach lanes
    PolicyController  learned policy commanding RVs inside the control zone

Usage:
    from mixflow.controllers import TLController, default_str_program
    program = default_str_program(g)
    ctl = TLController(program, g)
    sim = Simulator(g, cfg, gate=ctl.gate)
"""
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from mixflow.errors import ConfigurationError, ValidationError
from mixflow.mdp import ObsConfig, encode
from mixflow.network.graph import NetworkGraph
from mixflow.sac import MLP, deterministic_action, sample_action
from mixflow.sim import Kinematics, SimState, Simulator, VehicleState, kinematics

logger = logging.getLogger(__name__)

PROCEED = "proceed"
HOLD = "hold"
GREEN, YELLOW, RED = "green", "yellow", "red"
STOCHASTIC, DETERMINISTIC = "stochastic", "deterministic"

# -----------------------------
# Signal programs
# -----------------------------


@dataclass(frozen=True)
class TlPhase:
    green: FrozenSet[str]
    green_s: float = 30.0
    yellow_s: float = 3.0


@dataclass(frozen=True)
class TlProgram:
    """Fixed cycle: each phase runs green, then yellow, then the all-red interval."""

    phases: Tuple[TlPhase, ...]
    all_red: float = 2.0

    @property
    def cycle(self) -> float:
        return sum(p.green_s + p.yellow_s + self.all_red for p in self.phases)

    def validate(self, g: NetworkGraph) -> None:
        if not self.phases:
            raise ConfigurationError("Traffic-light program has no phases")
        for i, p in enumerate(self.phases):
            if p.green_s <= 0 or p.yellow_s <= 0:
                raise ConfigurationError(f"Phase {i}: green and yellow durations must be > 0")
            unknown = sorted(c for c in p.green if c not in g.connectors)
            if unknown:
                raise ConfigurationError(f"Phase {i}: unknown connector(s) {', '.join(unknown)}")
        if self.all_red < 0:
            raise ConfigurationError("All-red interval must be >= 0")
        covered = set().union(*(p.green for p in self.phases))
        missing = sorted(c for c in g.connectors if c not in covered)
        if missing:
            raise ConfigurationError(
                f"Connector(s) missing from the traffic-light program: {', '.join(missing)}"
            )

    def signal(self, clock: float, connector: str) -> str:
        """Signal shown to a connector at a simulation time."""
        t = clock % self.cycle
        for p in self.phases:
            if t < p.green_s:
                return GREEN if connector in p.green else RED
            t -= p.green_s
            if t < p.yellow_s:
                return YELLOW if connector in p.green else RED
            t -= p.yellow_s
            if t < self.all_red:
                return RED
            t -= self.all_red
        return RED


def program_to_dict(program: TlProgram) -> dict:
    return {
        "all_red": program.all_red,
        "phases": [
            {"green": sorted(p.green), "green_s": p.green_s, "yellow_s": p.yellow_s}
            for p in program.phases
        ],
    }


def program_from_dict(doc: dict) -> TlProgram:
    return TlProgram(
        phases=tuple(
            TlPhase(frozenset(p["green"]), float(p["green_s"]), float(p["yellow_s"]))
            for p in doc["phases"]
        ),
        all_red=float(doc.get("all_red", 2.0)),
    )


def _conflicts_with(g: NetworkGraph, cid: str, members) -> bool:
    conflicts = g.connectors[cid].conflicts
    return any(m in conflicts for m in members)


def default_str_program(
    g: NetworkGraph, green: float = 30.0, yellow: float = 3.0, all_red: float = 2.0
) -> TlProgram:
    """
    Static timed program: approach connectors grouped by opposing leg pairs
    (leg k with leg k + L//2, an odd leftover leg alone), each group split
    greedily into conflict-free phases, round robin. Other connectors join
    every phase they do not conflict with.
    """
    legs = sorted({e.leg for e in g.edges.values() if e.leg is not None and e.role != "ring"})
    half = len(legs) // 2
    groups = [(legs[i], legs[i + half]) for i in range(half)]
    if len(legs) % 2:
        groups.append((legs[-1],))

    approach = set(g.approach_connectors())
    by_leg: Dict[int, List[str]] = {}
    for cid in sorted(approach):
        leg = g.edges[g.edge_of(g.connectors[cid].from_lane)].leg
        by_leg.setdefault(leg, []).append(cid)

    phase_sets: List[List[str]] = []
    for group in groups:
        members = sorted(c for leg in group for c in by_leg.get(leg, ()))
        split: List[List[str]] = []
        for cid in members:
            for phase in split:
                if not _conflicts_with(g, cid, phase):
                    phase.append(cid)
                    break
            else:
                split.append([cid])
        phase_sets.extend(split)

    for cid in sorted(set(g.connectors) - approach):
        placed = False
        for phase in phase_sets:
            if not _conflicts_with(g, cid, [m for m in phase if m in approach]):
                phase.append(cid)
                placed = True
        if not placed:
            raise ConfigurationError(f"Connector {cid} conflicts with every phase")

    program = TlProgram(tuple(TlPhase(frozenset(p), green, yellow) for p in phase_sets), all_red)
    logger.debug(f"[TL] Default program with {len(program.phases)} phases, cycle {program.cycle:g} s")
    return program


def conflicting_greens(program: TlProgram, g: NetworkGraph) -> List[Tuple[int, str, str]]:
    """
    (phase index, a, b) for every conflicting pair green in the same phase
    where at least one of the two is a signalized approach connector.
    """
    approach = set(g.approach_connectors())
    found = []
    for i, p in enumerate(program.phases):
        members = sorted(p.green)
        for j, a in enumerate(members):
            conflicts = g.connectors[a].conflicts
            for b in members[j + 1:]:
                if b in conflicts and (a in approach or b in approach):
                    found.append((i, a, b))
    return found


def tl_gate(
    program: TlProgram,
    clock: float,
    vehicle: VehicleState,
    g: NetworkGraph,
    connector: Optional[str] = None,
    distance: Optional[float] = None,
    decel: float = 4.5,
) -> str:
    """
    proceed | hold for a vehicle approaching the junction. On yellow a vehicle
    that can no longer stop comfortably (distance < v^2 / 2b) proceeds.
    """
    if g.edge_of(vehicle.lane) not in g.origin_edges:
        return PROCEED
    if connector is None:
        nxt = vehicle.next_edge
        connector = Simulator(g).next_connector(vehicle.lane, nxt) if nxt else None
        if connector is None:
            return PROCEED
    if distance is None:
        distance = g.lanes[vehicle.lane].length - vehicle.offset
    signal = program.signal(clock, connector)
    if signal == GREEN:
        return PROCEED
    if signal == YELLOW and distance < vehicle.speed**2 / (2.0 * decel):
        return PROCEED
    return HOLD


# -----------------------------
# Policy
# -----------------------------


def policy_act(
    obs: np.ndarray,
    actor: MLP,
    mode: str = DETERMINISTIC,
    rng: Optional[np.random.Generator] = None,
    a_max: float = 10.0,
) -> float:
    """Acceleration for one observation, always within [-a_max, a_max]."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1 or obs.shape[0] != actor.sizes[0]:
        raise ValidationError("obs", f"expected a vector of {actor.sizes[0]} values, got shape {obs.shape}")
    if mode == DETERMINISTIC:
        action = deterministic_action(actor, obs, a_max)
    elif mode == STOCHASTIC:
        if rng is None:
            raise ValidationError("rng", "stochastic mode needs a random stream")
        action, _ = sample_action(actor, obs, rng, a_max)
    else:
        raise ValidationError("mode", f"unknown policy mode {mode!r}")
    return float(np.clip(action[0], -a_max, a_max))


# -----------------------------
# Controllers
# -----------------------------


def zone_rvs(state: SimState, g: NetworkGraph, snap: Kinematics, radius: float) -> List[str]:
    """Live RVs whose center lies inside the control zone, ascending id."""
    center = np.asarray(g.center())
    out = []
    for vid in state.live_rvs():
        i = snap.index(vid)
        if np.hypot(*(snap.xy[i] - center)) <= radius:
            out.append(vid)
    return out


class Controller:
    """Base controller: no commands, no gate."""

    name = "base"
    gate = None

    def commands(self, state: SimState, g: NetworkGraph, snapshot: Optional[Kinematics] = None) -> Dict[str, float]:
        return {}


class NoTLController(Controller):
    name = "notl"


class TLController(Controller):
    name = "tl"

    def __init__(self, program: TlProgram, g: NetworkGraph, decel: float = 4.5):
        program.validate(g)
        self.program = program
        self.g = g
        self.decel = decel

    def gate(self, vehicle: VehicleState, connector: str, distance: float, clock: float) -> bool:
        return tl_gate(self.program, clock, vehicle, self.g, connector, distance, self.decel) == HOLD


class PolicyController(Controller):
    """
    Decentralized execution: each RV inside the control zone acts on its own
    observation through the shared actor.
    """

    name = "policy"

    def __init__(
        self,
        actor: MLP,
        obs_cfg: ObsConfig,
        a_max: float = 10.0,
        mode: str = DETERMINISTIC,
        rng: Optional[np.random.Generator] = None,
        control_zone_radius: float = 100.0,
    ):
        self.actor = actor
        self.obs_cfg = obs_cfg
        self.a_max = a_max
        self.mode = mode
        self.rng = rng
        self.control_zone_radius = control_zone_radius

    def controlled(self, state: SimState, g: NetworkGraph, snap: Kinematics) -> List[str]:
        return zone_rvs(state, g, snap, self.control_zone_radius)

    def observations(self, state: SimState, g: NetworkGraph, snap: Kinematics) -> Dict[str, np.ndarray]:
        out = {}
        for vid in self.controlled(state, g, snap):
            i = snap.index(vid)
            out[vid] = encode(snap, i, snap.limit[i], self.obs_cfg)
        return out

    def commands(self, state: SimState, g: NetworkGraph, snapshot: Optional[Kinematics] = None) -> Dict[str, float]:
        snap = snapshot if snapshot is not None else kinematics(state, g)
        # stochastic rollouts fall back to the episode's own policy stream
        rng = self.rng if self.rng is not None else state.streams.get("policy")
        return {
            vid: policy_act(obs, self.actor, self.mode, rng, self.a_max)
            for vid, obs in self.observations(state, g, snap).items()
        }
