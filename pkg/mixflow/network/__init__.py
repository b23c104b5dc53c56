from .graph import (
    Connector,
    Edge,
    Lane,
    NetworkGraph,
    Node,
    Route,
    graph_from_dict,
    graph_to_dict,
    shortest_route,
    validate_graph,
)
from .generators import LegSpec, build_from_recipe, build_intersection, build_roundabout
from .osm import OsmDocument, convert, parse_osm, serialize_osm

__all__ = [
    "Connector",
    "Edge",
    "Lane",
    "NetworkGraph",
    "Node",
    "Route",
    "graph_from_dict",
    "graph_to_dict",
    "shortest_route",
    "validate_graph",
    "LegSpec",
    "build_from_recipe",
    "build_intersection",
    "build_roundabout",
    "OsmDocument",
    "convert",
    "parse_osm",
    "serialize_osm",
]
