"""
mixflow.network.osm

Minimal OpenStreetMap ingestion: parse a subset of OSM XML v0.6 and rebuild a
lane-level NetworkGraph around one junction node.

Usage:
    from mixflow.network.osm import parse_osm, convert
    with open('crossing.osm', encoding='utf-8') as f:
        doc = parse_osm(f.read())
    g = convert(doc, junction_node='100', clip_radius=250.0)

Only the tags highway, lanes, oneway, junction and maxspeed are interpreted on
ways; nodes keep their highway tag so traffic signals can be recorded.
"""
import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from shapely import ops
from shapely.geometry import LineString

from mixflow.errors import OsmParseError, OsmReferenceError, TopologyError, ValidationError
from mixflow.network.generators import LegSpec, assemble_intersection, assemble_roundabout
from mixflow.network.graph import DEFAULT_SPEED_LIMIT, NetworkGraph

logger = logging.getLogger(__name__)

EARTH_RADIUS = 6378137.0
DEFAULT_CLIP_RADIUS = 250.0
WAY_TAGS = ("highway", "lanes", "oneway", "junction", "maxspeed")
MIN_ROUNDABOUT_RADIUS = 10.0

_SPEED_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(km/h|kmh|kph|mph)?\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class OsmNode:
    id: str
    lat: float
    lon: float
    x: float
    y: float
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class OsmWay:
    id: str
    refs: Tuple[str, ...]
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass
class OsmDocument:
    nodes: Dict[str, OsmNode] = field(default_factory=dict)
    ways: Dict[str, OsmWay] = field(default_factory=dict)
    signals: Tuple[str, ...] = ()

    def ways_at(self, node_id: str) -> List[OsmWay]:
        return [w for w in self.ways.values() if node_id in w.refs]

    def xy(self, node_id: str) -> np.ndarray:
        n = self.nodes[node_id]
        return np.array([n.x, n.y])


# -----------------------------
# Parsing
# -----------------------------


def _float_attr(el: ET.Element, name: str) -> float:
    raw = el.get(name)
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise OsmParseError(0, f"node {el.get('id')!r} has invalid {name} {raw!r}")


def parse_osm(xml_text) -> OsmDocument:
    """Parse OSM XML text into an OsmDocument projected to local meters."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as e:
        raise OsmParseError(e.position[0], str(e))
    if root.tag != "osm":
        raise OsmParseError(1, f"root element is <{root.tag}>, expected <osm>")

    raw = []
    for el in root.iter("node"):
        tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
        keep = {k: v for k, v in tags.items() if k == "highway"}
        raw.append((el.get("id"), _float_attr(el, "lat"), _float_attr(el, "lon"), keep))

    nodes: Dict[str, OsmNode] = {}
    if raw:
        lats = [r[1] for r in raw]
        lons = [r[2] for r in raw]
        lat0 = (min(lats) + max(lats)) / 2.0
        lon0 = (min(lons) + max(lons)) / 2.0
        k = math.cos(math.radians(lat0))
        for nid, lat, lon, tags in raw:
            x = EARTH_RADIUS * math.radians(lon - lon0) * k
            y = EARTH_RADIUS * math.radians(lat - lat0)
            nodes[nid] = OsmNode(nid, lat, lon, x, y, tags)

    ways: Dict[str, OsmWay] = {}
    for el in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
        if "highway" not in tags:
            continue
        wid = el.get("id")
        refs = tuple(nd.get("ref") for nd in el.findall("nd"))
        for ref in refs:
            if ref not in nodes:
                raise OsmReferenceError(wid, ref)
        ways[wid] = OsmWay(wid, refs, {k: v for k, v in tags.items() if k in WAY_TAGS})

    signals = tuple(sorted(n.id for n in nodes.values() if n.tags.get("highway") == "traffic_signals"))
    logger.debug(f"[OSM] Parsed {len(nodes)} nodes, {len(ways)} highway ways")
    return OsmDocument(nodes, ways, signals)


def serialize_osm(doc: OsmDocument) -> str:
    """Write a document back to OSM XML (coordinates as parsed, kept tags only)."""
    root = ET.Element("osm", {"version": "0.6", "generator": "mixflow"})
    for n in doc.nodes.values():
        el = ET.SubElement(root, "node", {"id": n.id, "lat": repr(n.lat), "lon": repr(n.lon)})
        for k, v in n.tags.items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    for w in doc.ways.values():
        el = ET.SubElement(root, "way", {"id": w.id})
        for ref in w.refs:
            ET.SubElement(el, "nd", {"ref": ref})
        for k, v in w.tags.items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    return ET.tostring(root, encoding="unicode")


# -----------------------------
# Tag semantics
# -----------------------------


def parse_maxspeed(value: Optional[str]) -> float:
    """maxspeed tag to m/s; bare numbers are km/h."""
    if not value:
        return DEFAULT_SPEED_LIMIT
    m = _SPEED_RE.match(value)
    if not m:
        return DEFAULT_SPEED_LIMIT
    speed = float(m.group(1))
    unit = (m.group(2) or "km/h").lower()
    if unit == "mph":
        return speed * 0.44704
    return speed / 3.6


def _lane_count(tags: Dict[str, str], default: int = 1) -> int:
    try:
        return max(1, int(tags.get("lanes", default)))
    except ValueError:
        return default


def lanes_by_direction(tags: Dict[str, str]) -> Tuple[int, int]:
    """(forward, backward) lane counts along the way's node order."""
    oneway = tags.get("oneway", "no").lower()
    if oneway in ("yes", "true", "1"):
        return _lane_count(tags), 0
    if oneway == "-1":
        return 0, _lane_count(tags)
    if "lanes" not in tags:
        return 1, 1
    n = _lane_count(tags, 2)
    return max(1, math.ceil(n / 2)), max(1, n // 2)


# -----------------------------
# Conversion
# -----------------------------


def _arms(way: OsmWay, node_id: str) -> List[Tuple[List[str], bool]]:
    """
    Way parts starting at node_id. The flag is True when the part follows
    the way's node order (forward traffic leaves the junction).
    """
    arms = []
    refs = list(way.refs)
    for p, ref in enumerate(refs):
        if ref != node_id:
            continue
        if p > 0:
            arms.append((refs[p::-1], False))
        if p < len(refs) - 1:
            arms.append((refs[p:], True))
    return arms


def _leg_from_arm(
    way: OsmWay, points: np.ndarray, outward: bool, center: np.ndarray, clip_radius: float
) -> Optional[LegSpec]:
    line = LineString(points)
    if line.length <= 0:
        return None
    line = ops.substring(line, 0.0, min(line.length, clip_radius))
    fwd, back = lanes_by_direction(way.tags)
    in_lanes, out_lanes = (back, fwd) if outward else (fwd, back)
    ahead = np.asarray(line.interpolate(min(10.0, line.length)).coords[0])
    angle = math.atan2(ahead[1] - center[1], ahead[0] - center[0])
    return LegSpec(
        angle=angle,
        in_lanes=in_lanes,
        out_lanes=out_lanes,
        length=line.length,
        speed_limit=parse_maxspeed(way.tags.get("maxspeed")),
        axis=tuple((float(x), float(y)) for x, y in line.coords),
    )


def _convert_roundabout(doc: OsmDocument, ring_way: OsmWay, clip_radius: float) -> NetworkGraph:
    ring_nodes = list(dict.fromkeys(ring_way.refs))
    pts = np.array([doc.xy(n) for n in ring_nodes])
    center = pts.mean(axis=0)
    radius = float(np.mean(np.hypot(*(pts - center).T)))
    if radius < MIN_ROUNDABOUT_RADIUS:
        logger.warning(f"[OSM] Ring radius {radius:.1f} m widened to {MIN_ROUNDABOUT_RADIUS} m")
        radius = MIN_ROUNDABOUT_RADIUS
    ring_lanes = _lane_count(ring_way.tags)

    legs = []
    for way in sorted(doc.ways.values(), key=lambda w: w.id):
        if way.id == ring_way.id or way.tags.get("junction") == "roundabout":
            continue
        for node_id in ring_nodes:
            for refs, outward in _arms(way, node_id):
                if any(r in ring_nodes for r in refs[1:]):
                    continue
                points = np.vstack([center[None, :], [doc.xy(r) for r in refs]])
                leg = _leg_from_arm(way, points, outward, center, clip_radius)
                if leg is not None:
                    legs.append(leg)
    if len(legs) < 3:
        raise TopologyError(f"Roundabout way {ring_way.id} has {len(legs)} legs, need at least 3")
    signals = [n for n in doc.signals if n in ring_nodes]
    logger.info(f"[OSM] Roundabout {ring_way.id}: {len(legs)} legs, r={radius:.1f} m, {ring_lanes} ring lane(s)")
    return assemble_roundabout(
        legs, ring_lanes, radius, center=(float(center[0]), float(center[1])), signal_nodes=signals
    )


def convert(doc: OsmDocument, junction_node: str, clip_radius: float = DEFAULT_CLIP_RADIUS) -> NetworkGraph:
    """
    Build the NetworkGraph around junction_node, with every way clipped to
    clip_radius meters (measured along the road) from the junction.
    """
    junction_node = str(junction_node)
    if junction_node not in doc.nodes:
        raise ValidationError("junction_node", f"node {junction_node!r} is not in the document")
    if clip_radius <= 0:
        raise ValidationError("clip_radius", f"must be > 0, got {clip_radius}")

    ways = sorted(doc.ways_at(junction_node), key=lambda w: w.id)
    for way in ways:
        if way.tags.get("junction") == "roundabout":
            return _convert_roundabout(doc, way, clip_radius)

    center = doc.xy(junction_node)
    legs = []
    for way in ways:
        for refs, outward in _arms(way, junction_node):
            points = np.array([doc.xy(r) for r in refs])
            leg = _leg_from_arm(way, points, outward, center, clip_radius)
            if leg is not None:
                legs.append(leg)
    if len(legs) < 3:
        raise TopologyError(f"Node {junction_node} joins {len(legs)} road arms, need at least 3")
    legs.sort(key=lambda leg: leg.angle % (2 * math.pi))
    signals = [junction_node] if junction_node in doc.signals else []
    logger.info(f"[OSM] Junction {junction_node}: {len(legs)} legs")
    return assemble_intersection(legs, center=(float(center[0]), float(center[1])), signal_nodes=signals)
