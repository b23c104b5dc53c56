"""
Tests for the network package: procedural builders, graph queries, routing
and serialization.
"""

import math
import unittest

import numpy as np
import pytest

from mixflow.errors import NoRouteError, SchemaError, ValidationError
from mixflow.network import (
    Connector,
    Edge,
    Lane,
    NetworkGraph,
    Node,
    build_from_recipe,
    build_intersection,
    build_roundabout,
    graph_from_dict,
    graph_to_dict,
    shortest_route,
    validate_graph,
)
from mixflow.network.graph import compute_conflicts, connector_id


class TestIntersectionBuilder(unittest.TestCase):
    """N-leg intersections."""

    def test_four_leg_two_lane_counts(self):
        g = build_intersection(4, 2, 2, 200.0)
        self.assertEqual(len(g.nodes), 5)
        self.assertEqual(len(g.edges), 8)
        self.assertEqual(len(g.connectors), 48)
        self.assertEqual(len(g.origin_edges), 4)
        self.assertEqual(len(g.terminal_edges), 4)
        self.assertEqual(g.topology, "intersection")

    def test_three_leg_single_lane_counts(self):
        g = build_intersection(3, 1, 1, 100.0)
        self.assertEqual(len(g.connectors), 6)
        for origin in g.origin_edges:
            with self.subTest(origin=origin):
                self.assertEqual(len(g.reachable_terminals(origin)), 3)

    def test_every_terminal_reachable_from_every_origin(self):
        for legs in (3, 4, 5):
            g = build_intersection(legs, 1, 1, 100.0)
            for origin in g.origin_edges:
                with self.subTest(legs=legs, origin=origin):
                    self.assertEqual(set(g.reachable_terminals(origin)), set(g.terminal_edges))

    def test_right_hand_traffic(self):
        g = build_intersection(4, 1, 1, 100.0)
        inbound = g.lanes["leg00_in_0"]
        outbound = g.lanes["leg00_out_0"]
        # leg 0 points east: inbound drives west on the north side
        self.assertAlmostEqual(math.cos(inbound.heading_at(1.0)), -1.0, places=9)
        self.assertGreater(inbound.centerline[:, 1].min(), 0.0)
        self.assertLess(outbound.centerline[:, 1].max(), 0.0)
        self.assertAlmostEqual(inbound.length, 100.0, places=6)

    def test_connectors_join_lane_ends(self):
        g = build_intersection(3, 2, 1, 100.0)
        for c in g.connectors.values():
            with self.subTest(connector=c.id):
                np.testing.assert_allclose(c.lane.start, g.lanes[c.from_lane].end, atol=1e-9)
                np.testing.assert_allclose(c.lane.end, g.lanes[c.to_lane].start, atol=1e-9)
                self.assertTrue(g.is_internal(c.id))
                self.assertIsNone(g.edge_of(c.id))

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            build_intersection(2, 1, 1, 100.0)
        with self.assertRaises(ValidationError):
            build_intersection(14, 1, 1, 100.0)
        with self.assertRaises(ValidationError):
            build_intersection(4, 0, 1, 100.0)
        with self.assertRaises(ValidationError):
            build_intersection(4, 1, 1, 10.0)
        with self.assertRaises(ValidationError):
            build_intersection(4.0, 1, 1, 100.0)


class TestRoundaboutBuilder(unittest.TestCase):
    """N-leg roundabouts."""

    def test_three_leg_counts(self):
        g = build_roundabout(3, 1, 15.0, 100.0)
        self.assertEqual(len(g.nodes), 7)
        self.assertEqual(len(g.edges), 9)
        self.assertEqual(len(g.connectors), 9)
        self.assertEqual(g.topology, "roundabout")
        self.assertEqual(sorted(e.role for e in g.edges.values()).count("ring"), 3)

    def test_ring_length_is_circumference(self):
        g = build_roundabout(4, 1, 15.0, 100.0)
        ring = [e for e in g.edges.values() if e.role == "ring"]
        total = sum(g.lanes[e.lanes[0]].length for e in ring)
        total += sum(
            c.lane.length
            for c in g.connectors.values()
            if g.lanes[c.from_lane].edge.startswith("ring") and g.lanes[c.to_lane].edge.startswith("ring")
        )
        self.assertAlmostEqual(total, 2 * math.pi * 15.0, delta=0.5)

    def test_ring_lane_radii(self):
        g = build_roundabout(3, 2, 20.0, 100.0)
        center = np.asarray(g.center())
        for lane_id, radius in (("ring00_0", 23.2), ("ring00_1", 20.0)):
            pts = g.lanes[lane_id].centerline
            r = np.hypot(*(pts - center).T)
            with self.subTest(lane=lane_id):
                np.testing.assert_allclose(r, radius, atol=1e-6)

    def test_counter_clockwise_circulation(self):
        g = build_roundabout(4, 1, 15.0, 100.0)
        lane = g.lanes["ring00_0"]
        x, y, h = lane.position_at(lane.length / 2)
        # tangent of a CCW circle is the radius vector turned left
        radial = math.atan2(y, x)
        self.assertAlmostEqual(math.cos(h - radial - math.pi / 2), 1.0, places=3)

    def test_every_leg_reachable(self):
        g = build_roundabout(5, 2, 20.0, 100.0)
        for origin in g.origin_edges:
            with self.subTest(origin=origin):
                self.assertEqual(set(g.reachable_terminals(origin)), set(g.terminal_edges))

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            build_roundabout(2, 1, 15.0, 100.0)
        with self.assertRaises(ValidationError):
            build_roundabout(4, 0, 15.0, 100.0)
        with self.assertRaises(ValidationError):
            build_roundabout(4, 1, 5.0, 100.0)


class TestConflicts(unittest.TestCase):
    """Conflict sets between junction connectors."""

    def setUp(self):
        self.g = build_intersection(4, 1, 1, 100.0)

    def test_conflicts_are_symmetric(self):
        for cid, c in self.g.connectors.items():
            for other in c.conflicts:
                self.assertIn(cid, self.g.connectors[other].conflicts)

    def test_merging_connectors_conflict(self):
        a = connector_id("leg00_in_0", "leg02_out_0")
        b = connector_id("leg01_in_0", "leg02_out_0")
        self.assertIn(b, self.g.connectors[a].conflicts)

    def test_diverging_connectors_never_conflict(self):
        a = connector_id("leg00_in_0", "leg01_out_0")
        b = connector_id("leg00_in_0", "leg02_out_0")
        self.assertNotIn(b, self.g.connectors[a].conflicts)

    def test_left_turn_crosses_opposing_straight(self):
        left = connector_id("leg00_in_0", "leg03_out_0")
        straight = connector_id("leg02_in_0", "leg00_out_0")
        self.assertIn(straight, self.g.connectors[left].conflicts)

    def test_opposite_right_turns_do_not_conflict(self):
        a = connector_id("leg00_in_0", "leg01_out_0")
        b = connector_id("leg02_in_0", "leg03_out_0")
        self.assertNotIn(b, self.g.connectors[a].conflicts)

    def test_compute_conflicts_empty(self):
        self.assertEqual(compute_conflicts([]), {})


def _hand_graph():
    """Two disconnected one-connector corridors: a -> b and c -> d."""
    lanes = [
        Lane("a_0", "a", 0, [(0, 0), (50, 0)]),
        Lane("b_0", "b", 0, [(60, 0), (110, 0)]),
        Lane("c_0", "c", 0, [(0, 20), (50, 20)]),
        Lane("d_0", "d", 0, [(60, 20), (110, 20)]),
    ]
    connectors = [
        Connector(connector_id("a_0", "b_0"), "a_0", "b_0", Lane(connector_id("a_0", "b_0"), "x", 0, [(50, 0), (60, 0)], internal=True)),
        Connector(connector_id("c_0", "d_0"), "c_0", "d_0", Lane(connector_id("c_0", "d_0"), "y", 0, [(50, 20), (60, 20)], internal=True)),
    ]
    nodes = [Node(n, p) for n, p in (("A", (0, 0)), ("B", (110, 0)), ("C", (0, 20)), ("D", (110, 20)), ("J", (55, 10)))]
    edges = [
        Edge("a", "A", "J", ("a_0",)),
        Edge("b", "J", "B", ("b_0",), role="out"),
        Edge("c", "C", "J", ("c_0",)),
        Edge("d", "J", "D", ("d_0",), role="out"),
    ]
    return NetworkGraph(nodes, edges, lanes, connectors, {"J": (55.0, 10.0)})


### shortest_route ###
def test_shortest_route_through_junction():
    g = build_intersection(4, 1, 1, 100.0)
    route = shortest_route(g, "leg00_in", "leg02_out")
    assert route.edges == ("leg00_in", "leg02_out")
    assert len(route) == 2


def test_shortest_route_around_roundabout():
    g = build_roundabout(4, 1, 15.0, 100.0)
    route = shortest_route(g, "leg00_in", "leg02_out")
    assert route[0] == "leg00_in" and route[-1] == "leg02_out"
    # counter-clockwise from leg 0 to leg 2 passes two ring segments
    assert route.edges[1:-1] == ("ring00", "ring01")
    print("[SUCCESS] roundabout route:", route.edges)


def test_shortest_route_errors():
    g = _hand_graph()
    validate_graph(g)
    assert shortest_route(g, "a", "b").edges == ("a", "b")
    with pytest.raises(NoRouteError):
        shortest_route(g, "a", "d")
    with pytest.raises(ValidationError):
        shortest_route(g, "b", "d")
    with pytest.raises(ValidationError):
        shortest_route(g, "a", "c")


### graph queries ###
def test_lookup_helpers():
    g = build_intersection(3, 2, 2, 100.0)
    assert [l.id for l in g.lanes_of("leg00_in")] == ["leg00_in_0", "leg00_in_1"]
    assert len(g.connectors_from("leg00_in_0")) == 4
    between = g.connectors_between("leg00_in_0", "leg01_out")
    assert [c.to_lane for c in between] == ["leg01_out_0", "leg01_out_1"]
    assert set(g.successors("leg00_in")) == {"leg01_out", "leg02_out"}
    assert g.lane("leg00_in_1") is g.lanes["leg00_in_1"]
    assert len(g.approach_connectors()) == len(g.connectors)


def test_position_clamped_to_lane():
    lane = Lane("t_0", "t", 0, [(0, 0), (10, 0), (10, 10)])
    assert lane.length == pytest.approx(20.0)
    assert lane.position_at(-5.0)[:2] == (0.0, 0.0)
    x, y, h = lane.position_at(15.0)
    assert (x, y) == pytest.approx((10.0, 5.0))
    assert h == pytest.approx(math.pi / 2)
    assert lane.position_at(99.0)[:2] == pytest.approx((10.0, 10.0))


def test_validate_graph_rejects_dangling_connector():
    g = _hand_graph()
    broken = NetworkGraph(
        g.nodes.values(),
        g.edges.values(),
        [l for l in g.lanes.values() if l.id != "b_0"],
        g.connectors.values(),
        dict(g.junction_center),
    )
    with pytest.raises(ValidationError):
        validate_graph(broken)


### serialization ###
@pytest.mark.parametrize(
    "recipe",
    [
        {"kind": "intersection", "legs": 4, "in_lanes": 2, "out_lanes": 1, "leg_length": 150.0},
        {"kind": "roundabout", "legs": 3, "ring_lanes": 2, "radius": 20.0, "leg_length": 100.0},
    ],
)
def test_graph_dict_round_trip(recipe):
    g = build_from_recipe(recipe)
    back = graph_from_dict(graph_to_dict(g))
    assert graph_to_dict(back) == graph_to_dict(g)
    assert back.origin_edges == g.origin_edges
    assert back.topology == g.topology


def test_graph_from_dict_reports_field_path():
    doc = graph_to_dict(build_intersection(3, 1, 1, 100.0))
    del doc["edges"][1]["lanes"][0]["centerline"]
    with pytest.raises(SchemaError) as info:
        graph_from_dict(doc)
    assert info.value.path == "network.graph.edges[1].lanes[0].centerline"


def test_build_from_recipe_errors():
    with pytest.raises(ValidationError):
        build_from_recipe({"kind": "cloverleaf", "legs": 4})
    with pytest.raises(ValidationError):
        build_from_recipe({"kind": "intersection", "legs": 4, "lanes": 2})
