"""
mixflow.network.generators

Procedural N-leg intersections and roundabouts.

Usage:
    from mixflow.network.generators import build_intersection, build_roundabout
    g = build_intersection(legs=4, in_lanes=2, out_lanes=2, leg_length=200.0)
    r = build_roundabout(legs=3, ring_lanes=2, radius=20.0, leg_length=100.0)

Both builders go through the same leg assembly (`assemble_intersection`,
`assemble_roundabout`) that OSM conversion uses, so hand-drawn and
map-derived junctions share lane, connector and conflict semantics.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from shapely import ops
from shapely.geometry import LineString

from mixflow.errors import TopologyError, ValidationError
from mixflow.network.graph import (
    DEFAULT_SPEED_LIMIT,
    LANE_WIDTH,
    Connector,
    Edge,
    Lane,
    NetworkGraph,
    Node,
    connector_id,
    validate_graph,
    with_conflicts,
)

logger = logging.getLogger(__name__)

MAX_LEGS = 13
ARC_SEGMENTS_PER_TURN = 72
BEZIER_SAMPLES = 12
RING_SPEED_LIMIT = 8.33
JUNCTION_ID = "J0"


@dataclass(frozen=True)
class LegSpec:
    """
    One road leg leaving the junction.

    angle: bearing of the leg axis from the junction center, radians.
    axis: optional polyline (junction end first); straight when omitted.
    Either lane count may be 0 for one-way legs.
    """

    angle: float
    in_lanes: int
    out_lanes: int
    length: float
    speed_limit: float = DEFAULT_SPEED_LIMIT
    axis: Optional[Tuple[Tuple[float, float], ...]] = None


# -----------------------------
# Validation helpers
# -----------------------------


def _check_count(field: str, value, minimum: int, maximum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(field, f"must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(field, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValidationError(field, f"must be <= {maximum}, got {value}")
    return int(value)


def _check_positive(field: str, value, minimum: float = 0.0, strict: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
        raise ValidationError(field, f"must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ValidationError(field, f"must be {op} {minimum:g}, got {value:g}")
    return value


# -----------------------------
# Geometry helpers
# -----------------------------


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _offset(points: np.ndarray, distance: float) -> np.ndarray:
    """Offset a polyline sideways; negative distance is the right-hand side."""
    line = LineString(points)
    off = line.offset_curve(distance, join_style="mitre", mitre_limit=5.0)
    if off.geom_type == "MultiLineString":
        off = max(off.geoms, key=lambda part: part.length)
    coords = np.asarray(off.coords, dtype=np.float64)
    # keep the travel direction of the source polyline
    if np.hypot(*(coords[-1] - points[0])) < np.hypot(*(coords[0] - points[0])):
        coords = coords[::-1]
    return coords


def _direction(points: np.ndarray, at_end: bool) -> np.ndarray:
    d = points[-1] - points[-2] if at_end else points[1] - points[0]
    return d / np.hypot(*d)


def _bezier(p0, h0, p3, h3, samples: int = BEZIER_SAMPLES) -> np.ndarray:
    reach = max(float(np.hypot(*(p3 - p0))) / 3.0, 0.5)
    p1 = p0 + reach * h0
    p2 = p3 - reach * h3
    t = np.linspace(0.0, 1.0, samples)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


def _arc(center: np.ndarray, radius: float, start: float, stop: float) -> np.ndarray:
    n = max(2, math.ceil(ARC_SEGMENTS_PER_TURN * (stop - start) / (2 * math.pi)))
    t = np.linspace(start, stop, n + 1)
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def _leg_axis(leg: LegSpec, center: np.ndarray, setback: float) -> np.ndarray:
    """Axis polyline of a leg from its junction mouth outward."""
    if leg.axis is None:
        u = _unit(leg.angle)
        return np.array([center + setback * u, center + (setback + leg.length) * u])
    line = LineString(leg.axis)
    if line.length - setback < 5.0:
        raise TopologyError(f"Leg at bearing {math.degrees(leg.angle):.1f} deg is too short")
    return np.asarray(ops.substring(line, setback, line.length).coords, dtype=np.float64)


def _leg_id(k: int) -> str:
    return f"leg{k:02d}"


def _leg_edges(
    k: int, leg: LegSpec, axis: np.ndarray, inner_node: str, width: float
) -> Tuple[List[Edge], List[Lane], Node]:
    terminal = Node(f"T{k:02d}", (float(axis[-1][0]), float(axis[-1][1])), "terminal")
    edges, lanes = [], []
    if leg.in_lanes > 0:
        eid = f"{_leg_id(k)}_in"
        inbound = axis[::-1]
        ids = []
        for i in range(leg.in_lanes):
            lane = Lane(
                id=f"{eid}_{i}",
                edge=eid,
                index=i,
                centerline=_offset(inbound, -(leg.in_lanes - i - 0.5) * width),
                width=width,
                speed_limit=leg.speed_limit,
            )
            lanes.append(lane)
            ids.append(lane.id)
        edges.append(Edge(eid, terminal.id, inner_node, tuple(ids), role="in", leg=k))
    if leg.out_lanes > 0:
        eid = f"{_leg_id(k)}_out"
        ids = []
        for i in range(leg.out_lanes):
            lane = Lane(
                id=f"{eid}_{i}",
                edge=eid,
                index=i,
                centerline=_offset(axis, -(leg.out_lanes - i - 0.5) * width),
                width=width,
                speed_limit=leg.speed_limit,
            )
            lanes.append(lane)
            ids.append(lane.id)
        edges.append(Edge(eid, inner_node, terminal.id, tuple(ids), role="out", leg=k))
    return edges, lanes, terminal


def _connector(src: Lane, dst: Lane, centerline: Optional[np.ndarray] = None) -> Connector:
    if centerline is None:
        centerline = _bezier(
            src.end, _direction(src.centerline, True), dst.start, _direction(dst.centerline, False)
        )
    cid = connector_id(src.id, dst.id)
    lane = Lane(
        id=cid,
        edge=cid,
        index=0,
        centerline=centerline,
        width=src.width,
        speed_limit=min(src.speed_limit, dst.speed_limit),
        internal=True,
    )
    return Connector(cid, src.id, dst.id, lane)


def junction_setback(legs: Sequence[LegSpec], width: float = LANE_WIDTH) -> float:
    """Distance from the junction center to the leg mouths."""
    total = sum((leg.in_lanes + leg.out_lanes) * width for leg in legs)
    return max(12.0, 0.75 * total / math.pi)


# -----------------------------
# Shared assembly
# -----------------------------


def assemble_intersection(
    legs: Sequence[LegSpec],
    center: Tuple[float, float] = (0.0, 0.0),
    width: float = LANE_WIDTH,
    signal_nodes: Sequence[str] = (),
) -> NetworkGraph:
    """Single-junction graph where every in-lane links to every out-lane of the other legs."""
    c = np.asarray(center, dtype=np.float64)
    setback = junction_setback(legs, width)
    nodes = [Node(JUNCTION_ID, (float(c[0]), float(c[1])), "junction")]
    edges, lanes = [], []
    in_lanes, out_lanes = {}, {}
    for k, leg in enumerate(legs):
        e, l, terminal = _leg_edges(k, leg, _leg_axis(leg, c, setback), JUNCTION_ID, width)
        edges.extend(e)
        lanes.extend(l)
        nodes.append(terminal)
        in_lanes[k] = [lane for lane in l if lane.edge.endswith("_in")]
        out_lanes[k] = [lane for lane in l if lane.edge.endswith("_out")]

    connectors = []
    for k in range(len(legs)):
        for m in range(len(legs)):
            if m == k:
                continue
            for src in in_lanes[k]:
                for dst in out_lanes[m]:
                    connectors.append(_connector(src, dst))

    g = NetworkGraph(
        nodes,
        edges,
        lanes,
        with_conflicts(connectors),
        {JUNCTION_ID: (float(c[0]), float(c[1]))},
        topology="intersection",
        signal_nodes=signal_nodes,
    )
    validate_graph(g)
    logger.debug(f"[NETWORK] Assembled {g!r}")
    return g


def assemble_roundabout(
    legs: Sequence[LegSpec],
    ring_lanes: int,
    radius: float,
    center: Tuple[float, float] = (0.0, 0.0),
    width: float = LANE_WIDTH,
    ring_speed_limit: float = RING_SPEED_LIMIT,
    signal_nodes: Sequence[str] = (),
) -> NetworkGraph:
    """
    Counter-clockwise ring with one segment edge between consecutive legs.
    Around each leg a short continuation arc per ring lane is a connector, so
    entries merge with circulating traffic inside the conflict model.
    """
    c = np.asarray(center, dtype=np.float64)
    legs = sorted(legs, key=lambda leg: leg.angle % (2 * math.pi))
    n = len(legs)
    theta = [leg.angle % (2 * math.pi) for leg in legs]
    gaps = [((theta[(k + 1) % n] - theta[k]) % (2 * math.pi)) or 2 * math.pi for k in range(n)]
    if n > 1 and min(gaps) < 1e-3:
        raise TopologyError("Two roundabout legs share the same bearing")

    def lane_radius(j: int) -> float:
        return radius + (ring_lanes - 1 - j) * width

    delta = [
        min(
            (max(leg.in_lanes, leg.out_lanes) * width + 2.0) / radius,
            0.4 * gaps[k],
            0.4 * gaps[k - 1],
        )
        for k, leg in enumerate(legs)
    ]
    setback = radius + (ring_lanes - 0.5) * width + 8.0
    outer = lane_radius(0)

    nodes = [Node(JUNCTION_ID, (float(c[0]), float(c[1])), "junction")]
    edges, lanes = [], []
    in_lanes, out_lanes = {}, {}
    for k, leg in enumerate(legs):
        ring_node = f"R{k:02d}"
        p = c + outer * _unit(theta[k])
        nodes.append(Node(ring_node, (float(p[0]), float(p[1])), "ring"))
        e, l, terminal = _leg_edges(k, leg, _leg_axis(leg, c, setback), ring_node, width)
        edges.extend(e)
        lanes.extend(l)
        nodes.append(terminal)
        in_lanes[k] = [lane for lane in l if lane.edge.endswith("_in")]
        out_lanes[k] = [lane for lane in l if lane.edge.endswith("_out")]

    ring = {}
    for k in range(n):
        eid = f"ring{k:02d}"
        start = theta[k] + delta[k]
        stop = theta[k] + gaps[k] - delta[(k + 1) % n]
        ids = []
        for j in range(ring_lanes):
            lane = Lane(
                id=f"{eid}_{j}",
                edge=eid,
                index=j,
                centerline=_arc(c, lane_radius(j), start, stop),
                width=width,
                speed_limit=ring_speed_limit,
            )
            lanes.append(lane)
            ids.append(lane.id)
            ring[(k, j)] = lane
        edges.append(Edge(eid, f"R{k:02d}", f"R{(k + 1) % n:02d}", tuple(ids), role="ring", leg=k))

    connectors = []
    for k in range(n):
        prev = (k - 1) % n
        for j in range(ring_lanes):
            arc = _arc(c, lane_radius(j), theta[k] - delta[k], theta[k] + delta[k])
            connectors.append(_connector(ring[(prev, j)], ring[(k, j)], arc))
        for src in in_lanes[k]:
            connectors.append(_connector(src, ring[(k, min(src.index, ring_lanes - 1))]))
        for dst in out_lanes[k]:
            connectors.append(_connector(ring[(prev, min(dst.index, ring_lanes - 1))], dst))

    g = NetworkGraph(
        nodes,
        edges,
        lanes,
        with_conflicts(connectors),
        {JUNCTION_ID: (float(c[0]), float(c[1]))},
        topology="roundabout",
        signal_nodes=signal_nodes,
    )
    validate_graph(g)
    logger.debug(f"[NETWORK] Assembled {g!r}")
    return g


# -----------------------------
# Procedural builders
# -----------------------------


def _even_legs(legs, in_lanes, out_lanes, leg_length, speed_limit) -> List[LegSpec]:
    return [
        LegSpec(2 * math.pi * k / legs, in_lanes, out_lanes, leg_length, speed_limit)
        for k in range(legs)
    ]


def build_intersection(
    legs: int,
    in_lanes: int,
    out_lanes: int,
    leg_length: float,
    speed_limit: float = DEFAULT_SPEED_LIMIT,
    width: float = LANE_WIDTH,
) -> NetworkGraph:
    """N-leg intersection with legs at equal angular spacing (leg 0 points east)."""
    legs = _check_count("legs", legs, 3, MAX_LEGS)
    in_lanes = _check_count("in_lanes", in_lanes, 1)
    out_lanes = _check_count("out_lanes", out_lanes, 1)
    leg_length = _check_positive("leg_length", leg_length, 20.0)
    speed_limit = _check_positive("speed_limit", speed_limit)
    return assemble_intersection(
        _even_legs(legs, in_lanes, out_lanes, leg_length, speed_limit), width=width
    )


def build_roundabout(
    legs: int,
    ring_lanes: int,
    radius: float,
    leg_length: float,
    in_lanes: int = 1,
    out_lanes: int = 1,
    speed_limit: float = DEFAULT_SPEED_LIMIT,
    ring_speed_limit: float = RING_SPEED_LIMIT,
    width: float = LANE_WIDTH,
) -> NetworkGraph:
    """N-leg roundabout with `ring_lanes` concentric lanes, innermost at `radius`."""
    legs = _check_count("legs", legs, 3, MAX_LEGS)
    ring_lanes = _check_count("ring_lanes", ring_lanes, 1)
    radius = _check_positive("radius", radius, 10.0, strict=False)
    leg_length = _check_positive("leg_length", leg_length, 20.0)
    in_lanes = _check_count("in_lanes", in_lanes, 1)
    out_lanes = _check_count("out_lanes", out_lanes, 1)
    speed_limit = _check_positive("speed_limit", speed_limit)
    ring_speed_limit = _check_positive("ring_speed_limit", ring_speed_limit)
    return assemble_roundabout(
        _even_legs(legs, in_lanes, out_lanes, leg_length, speed_limit),
        ring_lanes,
        radius,
        width=width,
        ring_speed_limit=ring_speed_limit,
    )


def build_from_recipe(recipe: dict) -> NetworkGraph:
    """Dispatch a scenario recipe ({"kind": "intersection" | "roundabout", ...})."""
    kind = recipe.get("kind")
    args = {k: v for k, v in recipe.items() if k != "kind"}
    try:
        if kind == "intersection":
            return build_intersection(**args)
        if kind == "roundabout":
            return build_roundabout(**args)
    except TypeError as e:
        raise ValidationError("recipe", str(e))
    raise ValidationError("recipe.kind", f"unknown network kind {kind!r}")
