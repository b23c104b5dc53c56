"""
mixflow.sim

Deterministic fixed-step microscopic traffic simulation around one junction.

Usage:
    from mixflow.network import build_intersection
    from mixflow.sim import SimConfig, SimState, Simulator

    g = build_intersection(4, 1, 1, 200.0)
    sim = Simulator(g, SimConfig(demand=1000.0, p_rv=0.5))
    state = SimState.create(seed=7)
    for _ in range(100):
        state, events = sim.step(state, {})

HVs follow the Intelligent Driver Model. RVs inside the control zone apply
the acceleration they are commanded; outside it, or without a command, they
drive like HVs. Junction connectors carry no right of way: only an optional
gate (traffic lights) and collisions regulate the junction.
"""
import csv
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Mapping, Optional, Tuple

import numpy as np

from mixflow.errors import StaleCommandError, ValidationError
from mixflow.network.graph import NetworkGraph, Route, shortest_route
from mixflow.utils import format_float, rng_stream

logger = logging.getLogger(__name__)

RV = "RV"
HV = "HV"
VEHICLE_LENGTH = 5.0
WAIT_SPEED = 0.1
EMERGENCY_DECEL = -10.0
MAX_ACCEL = 10.0
SPAWN_SPEED = 10.0
STREAMS = ("spawn", "kind", "policy")

TRAJECTORY_HEADER = ("step", "vehicle_id", "kind", "lane", "offset_m", "speed_mps", "wait_s")

# -----------------------------
# Car following
# -----------------------------


@dataclass(frozen=True)
class IdmParams:
    """IDM parameters; v0=None means the current lane's speed limit."""

    v0: Optional[float] = None
    T: float = 1.0
    a: float = 2.6
    b: float = 4.5
    s0: float = 2.5
    delta: float = 4.0

    def __post_init__(self):
        for name in ("T", "a", "b", "s0"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be positive")
        if self.delta < 1:
            raise ValidationError("delta", "must be >= 1")
        if self.v0 is not None and self.v0 <= 0:
            raise ValidationError("v0", "must be positive")


def idm_acceleration(
    v: float, gap: float, leader_v: float, p: IdmParams, v0: Optional[float] = None
) -> float:
    """IDM acceleration for bumper-to-bumper gap; clamped to [-10, 10] m/s^2."""
    if gap <= 0:
        return EMERGENCY_DECEL
    v0 = p.v0 if p.v0 is not None else v0
    if v0 is None:
        raise ValidationError("v0", "no desired speed given")
    dv = v - leader_v
    s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b)))
    acc = p.a * (1.0 - (v / v0) ** p.delta - (s_star / gap) ** 2)
    return min(max(acc, EMERGENCY_DECEL), MAX_ACCEL)


# -----------------------------
# State
# -----------------------------


@dataclass
class VehicleState:
    id: str
    kind: str
    route: Route
    route_index: int
    lane: str
    offset: float
    speed: float
    length: float = VEHICLE_LENGTH
    wait: float = 0.0
    spawn_time: float = 0.0
    accel: float = 0.0

    @property
    def next_edge(self) -> Optional[str]:
        i = self.route_index + 1
        return self.route[i] if i < len(self.route) else None


@dataclass(frozen=True)
class Arrival:
    origin: str
    route: Route
    kind: str
    time: float


@dataclass
class SimState:
    """
    Everything that evolves during an episode. Mutated in place by
    Simulator.step, which also returns it.
    """

    seed: int = 0
    clock: float = 0.0
    step_index: int = 0
    vehicles: Dict[str, VehicleState] = field(default_factory=dict)
    streams: Dict[str, np.random.Generator] = field(default_factory=dict)
    queues: Dict[str, Deque[Arrival]] = field(default_factory=dict)
    arrivals: Dict[str, int] = field(default_factory=dict)
    spawned_total: int = 0
    exited_total: int = 0
    collisions_total: int = 0
    finished_waits: List[float] = field(default_factory=list)
    next_id: int = 1

    @classmethod
    def create(cls, seed: int) -> "SimState":
        return cls(seed=seed, streams={name: rng_stream(seed, name) for name in STREAMS})

    def live_rvs(self) -> List[str]:
        return sorted(vid for vid, v in self.vehicles.items() if v.kind == RV)


@dataclass
class StepEvents:
    exited_this_step: int = 0
    collision_count_this_step: int = 0
    spawned: List[str] = field(default_factory=list)
    removed: List[str] = field(default_factory=list)
    exited_ids: List[str] = field(default_factory=list)
    collided_ids: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0
    demand: float = 0.0
    p_rv: float = 0.0
    control_zone_radius: float = 100.0
    a_min: float = -10.0
    a_max: float = 10.0
    idm: IdmParams = field(default_factory=IdmParams)
    lookahead: float = 200.0
    approach_window: float = 100.0
    collision_distance: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt", "must be positive")
        if self.demand < 0:
            raise ValidationError("demand", "must be >= 0")
        if not 0.0 <= self.p_rv <= 1.0:
            raise ValidationError("P_rv", f"must lie in [0, 1], got {self.p_rv}")

    @classmethod
    def from_hyper(cls, hyper: Mapping, demand: float = 0.0, p_rv: float = 0.0) -> "SimConfig":
        return cls(
            dt=hyper["dt"],
            demand=demand,
            p_rv=p_rv,
            control_zone_radius=hyper["control_zone_radius"],
            a_min=hyper["a_min"],
            a_max=hyper["a_max"],
        )


# gate(vehicle, connector_id, distance_to_stop_line, clock) -> hold?
Gate = Callable[[VehicleState, str, float, float], bool]


@dataclass(frozen=True)
class Kinematics:
    """World-frame snapshot of every live vehicle, ids ascending."""

    ids: Tuple[str, ...]
    xy: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    limit: np.ndarray

    def index(self, vehicle_id: str) -> int:
        try:
            return self.ids.index(vehicle_id)
        except ValueError:
            raise KeyError(vehicle_id)


def vehicle_center(v: VehicleState, g: NetworkGraph) -> Tuple[float, float, float]:
    return g.lane(v.lane).position_at(v.offset - v.length / 2.0)


def kinematics(state: SimState, g: NetworkGraph) -> Kinematics:
    ids = tuple(sorted(state.vehicles))
    xy = np.zeros((len(ids), 2))
    heading = np.zeros(len(ids))
    speed = np.zeros(len(ids))
    limit = np.zeros(len(ids))
    for i, vid in enumerate(ids):
        v = state.vehicles[vid]
        x, y, h = vehicle_center(v, g)
        xy[i] = (x, y)
        heading[i] = h
        speed[i] = v.speed
        limit[i] = g.lane(v.lane).speed_limit
    return Kinematics(ids, xy, heading, speed, limit)


def _occupancy(state: SimState) -> Dict[str, List[VehicleState]]:
    occ: Dict[str, List[VehicleState]] = {}
    for v in state.vehicles.values():
        occ.setdefault(v.lane, []).append(v)
    for vs in occ.values():
        vs.sort(key=lambda v: (v.offset, v.id))
    return occ


def detect_collisions(state: SimState, g: NetworkGraph, distance: float = 2.0) -> List[str]:
    """
    Ids of colliding vehicles, ascending: same-lane pairs with a negative
    bumper gap, and vehicles on mutually conflicting connectors whose centers
    are within `distance` meters.
    """
    hit = set()
    for vs in _occupancy(state).values():
        for back, front in zip(vs, vs[1:]):
            if front.offset - front.length - back.offset < 0:
                hit.update((back.id, front.id))
    inside = [
        (v, np.array(vehicle_center(v, g)[:2]))
        for v in sorted(state.vehicles.values(), key=lambda v: v.id)
        if g.is_internal(v.lane)
    ]
    for i, (a, pa) in enumerate(inside):
        conflicts = g.connectors[a.lane].conflicts
        for b, pb in inside[i + 1:]:
            if b.lane in conflicts and np.hypot(*(pa - pb)) < distance:
                hit.update((a.id, b.id))
    return sorted(hit)


# -----------------------------
# Simulator
# -----------------------------


class Simulator:
    """Steps SimState forward on one graph. Holds only graph-derived caches."""

    def __init__(self, g: NetworkGraph, cfg: Optional[SimConfig] = None, gate: Optional[Gate] = None):
        self.g = g
        self.cfg = cfg or SimConfig()
        self.gate = gate
        self._terminals = frozenset(g.terminal_edges)
        self._origins = frozenset(g.origin_edges)
        self._center = np.asarray(g.center())
        self._routes: Dict[Tuple[str, str], Route] = {}
        self._destinations: Dict[str, Tuple[str, ...]] = {}
        self._next: Dict[Tuple[str, str], Optional[str]] = {}

    # --- routing helpers ---

    def destinations(self, origin: str) -> Tuple[str, ...]:
        """Reachable terminals of an origin, excluding its own leg (no U-turns)."""
        if origin not in self._destinations:
            leg = self.g.edges[origin].leg
            reach = self.g.reachable_terminals(origin)
            pick = tuple(t for t in reach if leg is None or self.g.edges[t].leg != leg)
            self._destinations[origin] = pick or reach
        return self._destinations[origin]

    def route(self, origin: str, destination: str) -> Route:
        key = (origin, destination)
        if key not in self._routes:
            self._routes[key] = shortest_route(self.g, origin, destination)
        return self._routes[key]

    def next_connector(self, lane_id: str, next_edge: str) -> Optional[str]:
        """Connector toward next_edge that keeps the lane index where possible."""
        key = (lane_id, next_edge)
        if key not in self._next:
            cons = self.g.connectors_between(lane_id, next_edge)
            if not cons:
                self._next[key] = None
            else:
                idx = self.g.lanes[lane_id].index
                best = min(cons, key=lambda c: (abs(self.g.lanes[c.to_lane].index - idx), c.id))
                self._next[key] = best.id
        return self._next[key]

    def _successor(self, lane_id: str, route: Route, idx: int) -> Optional[Tuple[str, int]]:
        if self.g.is_internal(lane_id):
            return self.g.connectors[lane_id].to_lane, idx + 1
        if idx + 1 >= len(route):
            return None
        cid = self.next_connector(lane_id, route[idx + 1])
        return (cid, idx) if cid is not None else None

    def in_control_zone(self, v: VehicleState) -> bool:
        x, y, _ = vehicle_center(v, self.g)
        return math.hypot(x - self._center[0], y - self._center[1]) <= self.cfg.control_zone_radius

    # --- car following ---

    def leader(self, v: VehicleState, occ: Mapping[str, List[VehicleState]]) -> Tuple[float, float]:
        """(gap, leader speed) along the planned lane path; inf on a free road."""
        lane_id, idx = v.lane, v.route_index
        for other in occ.get(lane_id, ()):
            if (other.offset, other.id) > (v.offset, v.id):
                return other.offset - other.length - v.offset, other.speed
        dist = self.g.lane(lane_id).length - v.offset
        while dist <= self.cfg.lookahead:
            nxt = self._successor(lane_id, v.route, idx)
            if nxt is None:
                # no connector toward the next route edge: standing obstacle at the lane end
                return dist, 0.0
            lane_id, idx = nxt
            if self.g.edge_of(lane_id) in self._terminals:
                return math.inf, 0.0
            ahead = occ.get(lane_id)
            if ahead:
                other = ahead[0]
                return dist + other.offset - other.length, other.speed
            dist += self.g.lane(lane_id).length
        return math.inf, 0.0

    def stop_line(self, v: VehicleState, clock: float) -> Optional[float]:
        """Distance to the stop line when the gate holds this vehicle."""
        if self.gate is None or self.g.edge_of(v.lane) not in self._origins:
            return None
        nxt = self._successor(v.lane, v.route, v.route_index)
        if nxt is None:
            return None
        distance = self.g.lanes[v.lane].length - v.offset
        if distance > self.cfg.approach_window:
            return None
        return distance if self.gate(v, nxt[0], distance, clock) else None

    def acceleration(self, v: VehicleState, occ, command: Optional[float], clock: float) -> float:
        if command is not None and v.kind == RV and self.in_control_zone(v):
            return min(max(float(command), self.cfg.a_min), self.cfg.a_max)
        gap, leader_v = self.leader(v, occ)
        hold = self.stop_line(v, clock)
        if hold is not None and hold < gap:
            gap, leader_v = hold, 0.0
        return idm_acceleration(v.speed, gap, leader_v, self.cfg.idm, v0=self.g.lane(v.lane).speed_limit)

    # --- lane changes ---

    def lane_change_target(self, v: VehicleState, occ) -> Optional[str]:
        """Adjacent lane toward one that reaches the next route edge, if the gaps allow it."""
        if self.g.is_internal(v.lane):
            return None
        edge = self.g.edges[self.g.edge_of(v.lane)]
        next_edge = v.next_edge
        if len(edge.lanes) < 2 or next_edge is None or self.next_connector(v.lane, next_edge):
            return None
        good = [self.g.lanes[l].index for l in edge.lanes if self.next_connector(l, next_edge)]
        if not good:
            return None
        cur = self.g.lanes[v.lane].index
        want = min(good, key=lambda i: (abs(i - cur), i))
        target = edge.lanes[cur + (1 if want > cur else -1)]

        x = v.offset * self.g.lanes[target].length / self.g.lanes[v.lane].length
        p = self.cfg.idm
        follower = None
        for other in occ.get(target, ()):
            if other.offset >= x:
                if other.offset - other.length - x <= p.s0:
                    return None
                break
            follower = other
        if follower is not None and (x - v.length) - follower.offset <= p.s0 + follower.speed * p.T:
            return None
        return target

    # --- arrivals ---

    def spawn_arrivals(self, state: SimState, demand: Optional[float] = None, p_rv: Optional[float] = None) -> List[str]:
        """Draw Poisson arrivals per origin, then release queued ones onto free origin lanes."""
        demand = self.cfg.demand if demand is None else demand
        p_rv = self.cfg.p_rv if p_rv is None else p_rv
        if not 0.0 <= p_rv <= 1.0:
            raise ValidationError("P_rv", f"must lie in [0, 1], got {p_rv}")
        origins = self.g.origin_edges
        rate = demand / (3600.0 * len(origins)) if origins else 0.0
        spawn, kinds = state.streams["spawn"], state.streams["kind"]
        for origin in origins:
            queue = state.queues.setdefault(origin, deque())
            n = int(spawn.poisson(rate * self.cfg.dt))
            for _ in range(n):
                dests = self.destinations(origin)
                dest = dests[int(spawn.integers(len(dests)))]
                kind = RV if kinds.random() < p_rv else HV
                queue.append(Arrival(origin, self.route(origin, dest), kind, state.clock))
            state.arrivals[origin] = state.arrivals.get(origin, 0) + n

        spawned = []
        occ = _occupancy(state)
        p = self.cfg.idm
        for origin in origins:
            queue = state.queues.get(origin)
            while queue:
                arrival = queue[0]
                lane_id, free = self._entry_lane(arrival.route, occ)
                if lane_id is None or free < p.s0 + VEHICLE_LENGTH:
                    break
                queue.popleft()
                limit = self.g.lanes[lane_id].speed_limit
                safe = math.sqrt(2.0 * p.b * max(free - p.s0, 0.0)) if math.isfinite(free) else math.inf
                v = VehicleState(
                    id=f"veh{state.next_id:06d}",
                    kind=arrival.kind,
                    route=arrival.route,
                    route_index=0,
                    lane=lane_id,
                    offset=0.0,
                    speed=min(limit, SPAWN_SPEED, safe),
                    spawn_time=state.clock,
                )
                state.next_id += 1
                state.vehicles[v.id] = v
                state.spawned_total += 1
                occ.setdefault(lane_id, []).insert(0, v)
                spawned.append(v.id)
        return spawned

    def _entry_lane(self, route: Route, occ) -> Tuple[Optional[str], float]:
        best, best_free = None, -math.inf
        for lane_id in self.g.edges[route[0]].lanes:
            if len(route) > 1 and self.next_connector(lane_id, route[1]) is None:
                continue
            vs = occ.get(lane_id)
            free = min(o.offset - o.length for o in vs) if vs else math.inf
            if free > best_free:
                best, best_free = lane_id, free
        return best, best_free

    # --- the step ---

    def _remove(self, state: SimState, v: VehicleState) -> None:
        del state.vehicles[v.id]
        state.finished_waits.append(v.wait)

    def _advance(self, state: SimState, v: VehicleState, events: StepEvents) -> None:
        while True:
            lane = self.g.lane(v.lane)
            if v.offset <= lane.length:
                return
            nxt = self._successor(v.lane, v.route, v.route_index)
            if nxt is None:
                v.offset, v.speed = lane.length, 0.0
                return
            from_connector = self.g.is_internal(v.lane)
            v.offset -= lane.length
            v.lane, v.route_index = nxt
            if from_connector and self.g.edge_of(v.lane) in self._terminals:
                self._remove(state, v)
                state.exited_total += 1
                events.exited_this_step += 1
                events.exited_ids.append(v.id)
                events.removed.append(v.id)
                return
            v.speed = min(v.speed, self.g.lane(v.lane).speed_limit)

    def step(self, state: SimState, rv_accels: Optional[Mapping[str, float]] = None) -> Tuple[SimState, StepEvents]:
        """Advance one Δt; see the module docstring for the rules applied."""
        rv_accels = dict(rv_accels or {})
        stale = [
            vid for vid in rv_accels if vid not in state.vehicles or state.vehicles[vid].kind != RV
        ]
        if stale:
            raise StaleCommandError(stale)
        dt = self.cfg.dt
        events = StepEvents()
        ids = sorted(state.vehicles)

        occ = _occupancy(state)
        accels = {
            vid: self.acceleration(state.vehicles[vid], occ, rv_accels.get(vid), state.clock)
            for vid in ids
        }
        for vid in ids:
            v = state.vehicles[vid]
            limit = self.g.lane(v.lane).speed_limit
            v.accel = accels[vid]
            v.speed = min(max(v.speed + accels[vid] * dt, 0.0), limit)
            v.offset = v.offset + v.speed * dt
        for vid in ids:
            self._advance(state, state.vehicles[vid], events)

        occ = _occupancy(state)
        for vid in sorted(state.vehicles):
            v = state.vehicles[vid]
            target = self.lane_change_target(v, occ)
            if target is None:
                continue
            occ[v.lane].remove(v)
            v.offset = v.offset * self.g.lanes[target].length / self.g.lanes[v.lane].length
            v.lane = target
            occ.setdefault(target, []).append(v)
            occ[target].sort(key=lambda o: (o.offset, o.id))

        for v in state.vehicles.values():
            if v.speed < WAIT_SPEED:
                v.wait += dt
            elif v.speed > WAIT_SPEED:
                v.wait = 0.0

        collided = detect_collisions(state, self.g, self.cfg.collision_distance)
        for vid in collided:
            self._remove(state, state.vehicles[vid])
        state.collisions_total += len(collided)
        events.collision_count_this_step = len(collided)
        events.collided_ids = collided
        events.removed.extend(collided)
        if collided:
            logger.debug(f"[SIM] step {state.step_index}: collision of {', '.join(collided)}")

        state.step_index += 1
        state.clock = state.step_index * dt
        events.spawned = self.spawn_arrivals(state)
        return state, events


# -----------------------------
# Module-level operations
# -----------------------------


def step(
    state: SimState,
    rv_accels: Mapping[str, float],
    g: NetworkGraph,
    cfg: Optional[SimConfig] = None,
    gate: Optional[Gate] = None,
) -> Tuple[SimState, StepEvents]:
    return Simulator(g, cfg, gate).step(state, rv_accels)


def spawn_arrivals(state: SimState, demand: float, g: NetworkGraph, p_rv: float, cfg: Optional[SimConfig] = None) -> List[str]:
    return Simulator(g, cfg).spawn_arrivals(state, demand, p_rv)


def lane_change_decide(vehicle: VehicleState, state: SimState, g: NetworkGraph, cfg: Optional[SimConfig] = None) -> Optional[str]:
    return Simulator(g, cfg).lane_change_target(vehicle, _occupancy(state))


# -----------------------------
# Trajectory log
# -----------------------------


class TrajectoryWriter:
    """
    Per-step trajectory CSV, one row per live vehicle (ids ascending).

    Usage:
        with TrajectoryWriter('traj.csv') as log:
            log.write(state)
    """

    def __init__(self, path: str):
        self.path = path
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self._file = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(TRAJECTORY_HEADER)

    def write(self, state: SimState) -> None:
        for vid in sorted(state.vehicles):
            v = state.vehicles[vid]
            self._writer.writerow(
                [
                    state.step_index,
                    v.id,
                    v.kind,
                    v.lane,
                    format_float(v.offset),
                    format_float(v.speed),
                    format_float(v.wait),
                ]
            )

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
