"""
mixflow.network.graph

Lane-level road network model: nodes, edges with ordered lanes, junction
connectors with conflict sets, and minimal-hop routing over edges.

Usage:
    from mixflow.network import build_intersection, shortest_route
    g = build_intersection(4, 2, 2, 200.0)
    route = shortest_route(g, g.origin_edges[0], g.terminal_edges[1])

A NetworkGraph is immutable once built and may be shared between threads.
"""
import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from shapely import STRtree
from shapely.geometry import LineString

from mixflow.errors import NoRouteError, SchemaError, ValidationError

LANE_WIDTH = 3.2
DEFAULT_SPEED_LIMIT = 13.89
CONFLICT_TOLERANCE = 0.5

# -----------------------------
# Geometry primitives
# -----------------------------


def _as_polyline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    # drop repeated vertices so arclength is strictly increasing
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > 1e-9:
            keep.append(i)
    pts = np.ascontiguousarray(pts[keep])
    pts.setflags(write=False)
    return pts


@dataclass(frozen=True, eq=False)
class Lane:
    """One lane (or junction-internal lane) with a polyline centerline in meters."""

    id: str
    edge: str
    index: int
    centerline: np.ndarray
    width: float = LANE_WIDTH
    speed_limit: float = DEFAULT_SPEED_LIMIT
    internal: bool = False
    arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = _as_polyline(self.centerline)
        object.__setattr__(self, "centerline", pts)
        seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        s.setflags(write=False)
        object.__setattr__(self, "arclength", s)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def start(self) -> np.ndarray:
        return self.centerline[0]

    @property
    def end(self) -> np.ndarray:
        return self.centerline[-1]

    def heading_at(self, offset: float) -> float:
        s = self.arclength
        i = int(np.searchsorted(s, min(max(offset, 0.0), s[-1]), side="right")) - 1
        i = min(max(i, 0), len(s) - 2)
        dx, dy = self.centerline[i + 1] - self.centerline[i]
        return math.atan2(dy, dx)

    def position_at(self, offset: float) -> Tuple[float, float, float]:
        """World (x, y, heading) at an arclength offset, clamped to the lane."""
        s = self.arclength
        o = min(max(offset, 0.0), s[-1])
        x = float(np.interp(o, s, self.centerline[:, 0]))
        y = float(np.interp(o, s, self.centerline[:, 1]))
        return x, y, self.heading_at(o)


@dataclass(frozen=True)
class Node:
    id: str
    position: Tuple[float, float]
    kind: str = "terminal"


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    lanes: Tuple[str, ...]
    role: str = "in"
    leg: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Connector:
    """Junction-internal lane from an incoming lane to an outgoing lane."""

    id: str
    from_lane: str
    to_lane: str
    lane: Lane
    conflicts: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class Route:
    edges: Tuple[str, ...]

    def __len__(self):
        return len(self.edges)

    def __getitem__(self, i):
        return self.edges[i]


def connector_id(from_lane: str, to_lane: str) -> str:
    return f":{from_lane}->{to_lane}"


def compute_conflicts(
    connectors: Sequence[Connector], tolerance: float = CONFLICT_TOLERANCE
) -> Dict[str, FrozenSet[str]]:
    """
    Pairwise conflict sets for junction connectors.

    Diverging connectors (same incoming lane) never conflict; merging
    connectors (same outgoing lane) always do; any other pair conflicts when
    their centerlines come within `tolerance` meters.
    """
    ordered = sorted(connectors, key=lambda c: c.id)
    conflicts: Dict[str, set] = {c.id: set() for c in ordered}
    if not ordered:
        return {}
    geoms = [LineString(c.lane.centerline) for c in ordered]
    tree = STRtree(geoms)
    left, right = tree.query(geoms, predicate="dwithin", distance=tolerance)
    pairs = set()
    for i, j in zip(left.tolist(), right.tolist()):
        if i < j:
            pairs.add((i, j))
    by_target: Dict[str, List[int]] = {}
    for i, c in enumerate(ordered):
        by_target.setdefault(c.to_lane, []).append(i)
    for members in by_target.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.add((members[a], members[b]))
    for i, j in pairs:
        a, b = ordered[i], ordered[j]
        if a.from_lane == b.from_lane:
            continue
        conflicts[a.id].add(b.id)
        conflicts[b.id].add(a.id)
    return {k: frozenset(v) for k, v in conflicts.items()}


# -----------------------------
# Network graph
# -----------------------------


class NetworkGraph:
    """
    Immutable lane-level road graph around one junction.

    Edge lanes are addressed as `<edge>_<index>`; connector lanes share the
    connector id. Origin edges have no predecessor, terminal edges no successor.
    """

    def __init__(
        self,
        nodes: Iterable[Node],
        edges: Iterable[Edge],
        lanes: Iterable[Lane],
        connectors: Iterable[Connector],
        junction_center: Mapping[str, Tuple[float, float]],
        topology: str = "intersection",
        signal_nodes: Iterable[str] = (),
    ):
        self.nodes = MappingProxyType({n.id: n for n in sorted(nodes, key=lambda n: n.id)})
        self.edges = MappingProxyType({e.id: e for e in sorted(edges, key=lambda e: e.id)})
        self.lanes = MappingProxyType({l.id: l for l in sorted(lanes, key=lambda l: l.id)})
        self.connectors = MappingProxyType(
            {c.id: c for c in sorted(connectors, key=lambda c: c.id)}
        )
        self.junction_center = MappingProxyType(
            {k: (float(v[0]), float(v[1])) for k, v in sorted(junction_center.items())}
        )
        self.topology = topology
        self.signal_nodes = tuple(sorted(signal_nodes))

        lane_edge = {lid: lane.edge for lid, lane in self.lanes.items()}
        outgoing: Dict[str, List[str]] = {}
        between: Dict[Tuple[str, str], List[str]] = {}
        succ: Dict[str, set] = {eid: set() for eid in self.edges}
        pred: Dict[str, set] = {eid: set() for eid in self.edges}
        for cid, c in self.connectors.items():
            src, dst = lane_edge.get(c.from_lane), lane_edge.get(c.to_lane)
            outgoing.setdefault(c.from_lane, []).append(cid)
            if src is not None and dst is not None:
                between.setdefault((c.from_lane, dst), []).append(cid)
                succ[src].add(dst)
                pred[dst].add(src)
        self._lane_edge = lane_edge
        self._outgoing = {k: tuple(sorted(v)) for k, v in outgoing.items()}
        self._between = {k: tuple(sorted(v)) for k, v in between.items()}
        self._succ = {k: tuple(sorted(v)) for k, v in succ.items()}
        self.origin_edges = tuple(e for e in self.edges if not pred[e])
        self.terminal_edges = tuple(e for e in self.edges if not succ[e])

        g = nx.DiGraph()
        g.add_nodes_from(self.edges)
        for src, dsts in self._succ.items():
            for dst in dsts:
                g.add_edge(src, dst)
        self.edge_graph = g.copy(as_view=False)
        nx.freeze(self.edge_graph)

    def __repr__(self):
        return (
            f"NetworkGraph({self.topology}, edges={len(self.edges)}, "
            f"connectors={len(self.connectors)})"
        )

    # --- lookup helpers ---

    def lane(self, lane_id: str) -> Lane:
        if lane_id in self.lanes:
            return self.lanes[lane_id]
        return self.connectors[lane_id].lane

    def is_internal(self, lane_id: str) -> bool:
        return lane_id in self.connectors

    def edge_of(self, lane_id: str) -> Optional[str]:
        """Edge id of an edge lane, None for connector lanes."""
        return self._lane_edge.get(lane_id)

    def lanes_of(self, edge_id: str) -> Tuple[Lane, ...]:
        return tuple(self.lanes[l] for l in self.edges[edge_id].lanes)

    def connectors_from(self, lane_id: str) -> Tuple[Connector, ...]:
        return tuple(self.connectors[c] for c in self._outgoing.get(lane_id, ()))

    def connectors_between(self, lane_id: str, next_edge: str) -> Tuple[Connector, ...]:
        """Connectors leading from a lane onto any lane of next_edge, ascending id."""
        return tuple(self.connectors[c] for c in self._between.get((lane_id, next_edge), ()))

    def successors(self, edge_id: str) -> Tuple[str, ...]:
        return self._succ.get(edge_id, ())

    def reachable_terminals(self, origin: str) -> Tuple[str, ...]:
        reach = nx.descendants(self.edge_graph, origin)
        return tuple(t for t in self.terminal_edges if t in reach)

    def center(self) -> Tuple[float, float]:
        return next(iter(self.junction_center.values()))

    def approach_connectors(self) -> Tuple[str, ...]:
        """Connectors whose incoming lane belongs to an origin edge."""
        origins = set(self.origin_edges)
        return tuple(
            cid for cid, c in self.connectors.items() if self._lane_edge.get(c.from_lane) in origins
        )


# -----------------------------
# Routing
# -----------------------------


def shortest_route(g: NetworkGraph, origin: str, destination: str) -> Route:
    """
    Minimal-hop edge sequence from an origin edge to a terminal edge.
    Ties are broken by ascending edge identifiers.
    """
    if origin not in g.origin_edges:
        raise ValidationError("origin", f"'{origin}' is not an origin edge")
    if destination not in g.terminal_edges:
        raise ValidationError("destination", f"'{destination}' is not a terminal edge")
    try:
        paths = list(nx.all_shortest_paths(g.edge_graph, origin, destination))
    except nx.NetworkXNoPath:
        raise NoRouteError(origin, destination)
    return Route(tuple(min(paths)))


# -----------------------------
# Validation
# -----------------------------


def validate_graph(g: NetworkGraph) -> None:
    """Check every NetworkGraph invariant; raise ValidationError on the first failure."""
    for cid, c in g.connectors.items():
        for side, lid in (("from_lane", c.from_lane), ("to_lane", c.to_lane)):
            if lid not in g.lanes:
                raise ValidationError(f"connectors[{cid}].{side}", f"unknown lane '{lid}'")
        for other in c.conflicts:
            if other not in g.connectors or cid not in g.connectors[other].conflicts:
                raise ValidationError(
                    f"connectors[{cid}].conflicts", f"conflict with '{other}' is not symmetric"
                )
    all_lanes = list(g.lanes.values()) + [c.lane for c in g.connectors.values()]
    for lane in all_lanes:
        if len(lane.arclength) < 2 or not np.all(np.diff(lane.arclength) > 0):
            raise ValidationError(f"lanes[{lane.id}]", "centerline has zero length")
    for eid, e in g.edges.items():
        for lid in e.lanes:
            if lid not in g.lanes:
                raise ValidationError(f"edges[{eid}].lanes", f"unknown lane '{lid}'")
    for origin in g.origin_edges:
        if origin in g.terminal_edges:
            raise ValidationError(f"edges[{origin}]", "edge is isolated")
        if not g.reachable_terminals(origin):
            raise ValidationError(f"edges[{origin}]", "origin reaches no terminal edge")


# -----------------------------
# Serialization
# -----------------------------


def _points(arr: np.ndarray) -> List[List[float]]:
    return [[float(x), float(y)] for x, y in arr]


def _lane_to_dict(lane: Lane) -> dict:
    return {
        "id": lane.id,
        "edge": lane.edge,
        "index": lane.index,
        "width": lane.width,
        "speed_limit": lane.speed_limit,
        "centerline": _points(lane.centerline),
    }


def graph_to_dict(g: NetworkGraph) -> dict:
    """Canonical JSON-ready form of a graph (sorted ids, float lists)."""
    return {
        "topology": g.topology,
        "junction_center": {k: list(v) for k, v in g.junction_center.items()},
        "signal_nodes": list(g.signal_nodes),
        "nodes": [
            {"id": n.id, "position": [float(n.position[0]), float(n.position[1])], "kind": n.kind}
            for n in g.nodes.values()
        ],
        "edges": [
            {
                "id": e.id,
                "from_node": e.from_node,
                "to_node": e.to_node,
                "role": e.role,
                "leg": e.leg,
                "lanes": [_lane_to_dict(g.lanes[l]) for l in e.lanes],
            }
            for e in g.edges.values()
        ],
        "connectors": [
            {
                "id": c.id,
                "from_lane": c.from_lane,
                "to_lane": c.to_lane,
                "speed_limit": c.lane.speed_limit,
                "centerline": _points(c.lane.centerline),
                "conflicts": sorted(c.conflicts),
            }
            for c in g.connectors.values()
        ],
    }


def _require(doc: dict, key: str, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    return doc[key]


def graph_from_dict(doc: dict, path: str = "network.graph") -> NetworkGraph:
    """Rebuild a graph from graph_to_dict output; field errors carry their path."""
    nodes, edges, lanes, connectors = [], [], [], []
    for i, n in enumerate(_require(doc, "nodes", path)):
        p = f"{path}.nodes[{i}]"
        pos = _require(n, "position", p)
        nodes.append(Node(_require(n, "id", p), (float(pos[0]), float(pos[1])), n.get("kind", "terminal")))
    for i, e in enumerate(_require(doc, "edges", path)):
        p = f"{path}.edges[{i}]"
        lane_ids = []
        for j, l in enumerate(_require(e, "lanes", p)):
            lp = f"{p}.lanes[{j}]"
            lane = Lane(
                id=_require(l, "id", lp),
                edge=_require(l, "edge", lp),
                index=int(_require(l, "index", lp)),
                centerline=np.asarray(_require(l, "centerline", lp), dtype=np.float64),
                width=float(l.get("width", LANE_WIDTH)),
                speed_limit=float(l.get("speed_limit", DEFAULT_SPEED_LIMIT)),
            )
            lanes.append(lane)
            lane_ids.append(lane.id)
        edges.append(
            Edge(
                id=_require(e, "id", p),
                from_node=_require(e, "from_node", p),
                to_node=_require(e, "to_node", p),
                lanes=tuple(lane_ids),
                role=e.get("role", "in"),
                leg=e.get("leg"),
            )
        )
    for i, c in enumerate(_require(doc, "connectors", path)):
        p = f"{path}.connectors[{i}]"
        cid = _require(c, "id", p)
        connectors.append(
            Connector(
                id=cid,
                from_lane=_require(c, "from_lane", p),
                to_lane=_require(c, "to_lane", p),
                lane=Lane(
                    id=cid,
                    edge=cid,
                    index=0,
                    centerline=np.asarray(_require(c, "centerline", p), dtype=np.float64),
                    speed_limit=float(c.get("speed_limit", DEFAULT_SPEED_LIMIT)),
                    internal=True,
                ),
                conflicts=frozenset(c.get("conflicts", ())),
            )
        )
    centers = _require(doc, "junction_center", path)
    g = NetworkGraph(
        nodes,
        edges,
        lanes,
        connectors,
        {k: (float(v[0]), float(v[1])) for k, v in centers.items()},
        topology=doc.get("topology", "intersection"),
        signal_nodes=doc.get("signal_nodes", ()),
    )
    validate_graph(g)
    return g


def with_conflicts(connectors: Sequence[Connector]) -> List[Connector]:
    """Return copies of the connectors carrying their computed conflict sets."""
    table = compute_conflicts(connectors)
    return [replace(c, conflicts=table.get(c.id, frozenset())) for c in connectors]
