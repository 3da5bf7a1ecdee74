"""Routing: great-circle math, Dijkstra vs brute force, reroute hysteresis,
graph fixture parsing, and the external directions client."""

import json
import math
import random

import pytest

from campusride.domain import GeoPoint
from campusride.routing import (
    EARTH_RADIUS_M,
    ExternalRouter,
    GraphError,
    MalformedResponse,
    NetworkFailure,
    RateLimited,
    RoadGraph,
    Route,
    SnapTooFar,
    UnknownNode,
    Unreachable,
    deviation_from_route,
    estimate_eta,
    fetch_external_route,
    haversine_distance,
    load_graph,
    shortest_route,
    should_reroute,
    snap_to_graph,
)
from campusride.clock import VirtualClock

# frozen from the independent arc-length oracles:
#   meridian: R * radians(0.01)            = 1111.9492664455875
#   parallel: R * radians(0.01) * cos(30deg) = 962.9763124613503
MERIDIAN_ARC_M = 1111.9492664455875
PARALLEL_ARC_30_M = 962.9763124613503


def brute_force_min_cost(g: RoadGraph, src: str, dst: str):
    """Exhaustive minimum over all simple paths; the Dijkstra oracle."""
    if src == dst:
        return 0.0
    best = [None]

    def dfs(node, cost, visited):
        if best[0] is not None and cost >= best[0]:
            return
        for nb, w in g.neighbors(node):
            if nb == dst:
                total = cost + w
                if best[0] is None or total < best[0]:
                    best[0] = total
            elif nb not in visited:
                dfs(nb, cost + w, visited | {nb})

    dfs(src, 0.0, {src})
    return best[0]


def grid_positions(ids):
    # positions are irrelevant to cost assertions; spread nodes on a line
    return {nid: GeoPoint(0.0, 0.001 * i) for i, nid in enumerate(ids)}


class TestHaversine:
    def test_identical_points(self):
        p = GeoPoint(30.0, 31.4)
        assert haversine_distance(p, p) == 0.0

    def test_meridian_fixture(self):
        d = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(0.01, 0.0))
        assert abs(d - 1111.95) <= 0.01
        assert abs(d - MERIDIAN_ARC_M) <= 1e-6

    def test_parallel_fixture(self):
        d = haversine_distance(GeoPoint(30.00, 31.40), GeoPoint(30.00, 31.41))
        assert abs(d - 963.1) <= 1.0
        assert abs(d - PARALLEL_ARC_30_M) <= 0.001

    def test_symmetry_and_triangle_on_random_triples(self):
        rng = random.Random(4242)
        for _ in range(2000):
            pts = [
                GeoPoint(rng.uniform(-89, 89), rng.uniform(-179, 179)) for _ in range(3)
            ]
            a, b, c = pts
            dab = haversine_distance(a, b)
            assert dab == haversine_distance(b, a)
            assert dab >= 0
            dac = haversine_distance(a, c)
            dcb = haversine_distance(c, b)
            assert dab <= (dac + dcb) * (1 + 1e-6) + 1e-9


class TestEta:
    def test_zero(self):
        r = Route((GeoPoint(0, 0), GeoPoint(0, 0)), 0.0, 0.0, ("a",))
        assert estimate_eta(r) == 0

    def test_exact_division(self):
        r = Route((GeoPoint(0, 0), GeoPoint(0, 0.01)), 1000.0, 0.0, ())
        assert estimate_eta(r, 5.0) == 200

    def test_ceiling(self):
        r = Route((GeoPoint(0, 0), GeoPoint(0, 0.01)), 999.0, 0.0, ())
        assert estimate_eta(r, 5.0) == 200


class TestSnap:
    def make_graph(self):
        nodes = {
            "n1": GeoPoint(0.0, 0.0),
            "n2": GeoPoint(0.0, 0.01),
            "n3": GeoPoint(0.01, 0.0),
        }
        edges = [("n1", "n2", 100.0, True), ("n2", "n3", 100.0, True)]
        return RoadGraph(nodes, edges)

    def test_exact_hit(self):
        g = self.make_graph()
        assert snap_to_graph(GeoPoint(0.01, 0.0), g) == "n3"

    def test_tie_break_by_id(self):
        g = self.make_graph()
        # equidistant between n1 and n2 along the parallel (~556 m each)
        assert snap_to_graph(GeoPoint(0.0, 0.005), g, snap_radius_m=1000.0) == "n1"

    def test_too_far(self):
        g = self.make_graph()
        # ~0.01 deg = ~1112 m away from everything
        with pytest.raises(SnapTooFar):
            snap_to_graph(GeoPoint(-0.01, -0.01), g, snap_radius_m=500.0)


class TestDijkstra:
    def test_triangle(self):
        # brute force over {A-B-C, A-C}: min(2+2, 5) = 4 via A,B,C
        nodes = grid_positions(["A", "B", "C"])
        g = RoadGraph(nodes, [("A", "B", 2.0, True), ("B", "C", 2.0, True), ("A", "C", 5.0, True)])
        route = shortest_route(g, "A", "C")
        assert route.node_path == ("A", "B", "C")
        assert route.distance == 4.0
        assert brute_force_min_cost(g, "A", "C") == 4.0

    def test_self_route(self):
        nodes = grid_positions(["A", "B"])
        g = RoadGraph(nodes, [("A", "B", 1.0, True)])
        route = shortest_route(g, "A", "A")
        assert route.distance == 0.0
        assert route.node_path == ("A",)
        assert len(route.polyline) == 2

    def test_unknown_node(self):
        nodes = grid_positions(["A", "B"])
        g = RoadGraph(nodes, [("A", "B", 1.0, True)])
        with pytest.raises(UnknownNode):
            shortest_route(g, "A", "Z")

    def test_unreachable_with_one_way(self):
        nodes = grid_positions(["A", "B"])
        g = RoadGraph(nodes, [("A", "B", 1.0, False)])
        with pytest.raises(Unreachable):
            shortest_route(g, "B", "A")

    def test_equal_cost_tie_break_lexicographic(self):
        nodes = grid_positions(["A", "B", "C", "D"])
        g = RoadGraph(
            nodes,
            [("A", "B", 1.0, True), ("B", "D", 1.0, True),
             ("A", "C", 1.0, True), ("C", "D", 1.0, True)],
        )
        assert shortest_route(g, "A", "D").node_path == ("A", "B", "D")

    def test_duration_uses_speed_model(self):
        nodes = grid_positions(["A", "B"])
        g = RoadGraph(nodes, [("A", "B", 999.0, True)])
        route = shortest_route(g, "A", "B", speed_mps=5.0)
        assert route.duration == 200.0

    @pytest.mark.parametrize("seed", range(12))
    def test_random_graphs_match_brute_force(self, seed):
        rng = random.Random(seed)
        g = random_graph(rng)
        ids = sorted(g.nodes)
        for src in ids:
            for dst in ids:
                expected = brute_force_min_cost(g, src, dst)
                if expected is None:
                    with pytest.raises(Unreachable):
                        shortest_route(g, src, dst)
                else:
                    got = shortest_route(g, src, dst)
                    assert math.isclose(got.distance, expected, rel_tol=1e-9)


def random_graph(rng: random.Random) -> RoadGraph:
    """Weakly connected random graph, <= 10 nodes, random positive weights."""
    n = rng.randint(2, 10)
    ids = [f"v{i}" for i in range(n)]
    nodes = {nid: GeoPoint(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)) for nid in ids}
    edges = []
    for i in range(1, n):  # spanning tree keeps it connected
        j = rng.randrange(i)
        edges.append((ids[i], ids[j], rng.uniform(1.0, 100.0), True))
    for _ in range(rng.randint(0, n)):
        a, b = rng.sample(ids, 2)
        edges.append((a, b, rng.uniform(1.0, 100.0), rng.random() < 0.7))
    return RoadGraph(nodes, edges)


class TestReroute:
    def make_route(self):
        # straight segment of the equator, ~2224 m long
        pts = (GeoPoint(0.0, 0.0), GeoPoint(0.0, 0.01), GeoPoint(0.0, 0.02))
        return Route(pts, 2223.9, 445.0, ("a", "b", "c"))

    def lat_for_offset(self, meters: float) -> float:
        return math.degrees(meters / EARTH_RADIUS_M)

    def test_on_polyline_never_reroutes(self):
        route = self.make_route()
        for lon in (0.0, 0.004, 0.01, 0.017, 0.02):
            assert should_reroute(GeoPoint(0.0, lon), route, 1e-9 + 1e-12) is False

    def test_small_deviation_held(self):
        route = self.make_route()
        pos = GeoPoint(self.lat_for_offset(10.0), 0.005)
        assert abs(deviation_from_route(pos, route) - 10.0) < 0.1  # oracle: constructed offset
        assert should_reroute(pos, route, 30.0) is False

    def test_large_deviation_triggers(self):
        route = self.make_route()
        pos = GeoPoint(self.lat_for_offset(50.0), 0.005)
        assert abs(deviation_from_route(pos, route) - 50.0) < 0.1
        assert should_reroute(pos, route, 30.0) is True

    def test_beyond_segment_end_uses_endpoint(self):
        route = self.make_route()
        # 100 m past the east end along the equator
        pos = GeoPoint(0.0, 0.02 + math.degrees(100.0 / EARTH_RADIUS_M))
        assert abs(deviation_from_route(pos, route) - 100.0) < 0.5

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            should_reroute(GeoPoint(0, 0), self.make_route(), 0.0)


class TestGraphFile:
    def write(self, tmp_path, text):
        p = tmp_path / "g.txt"
        p.write_text(text)
        return str(p)

    def test_parse_with_comments(self, tmp_path):
        path = self.write(
            tmp_path,
            "# a comment\n"
            "graph v1\n"
            "node a 0.0 0.0   # inline comment\n"
            "node b 0.0 0.01\n"
            "edge a b 1113.0 1\n",
        )
        g = load_graph(path)
        assert set(g.nodes) == {"a", "b"}
        assert g.edges == [("a", "b", 1113.0, True)]

    def test_missing_header(self, tmp_path):
        path = self.write(tmp_path, "node a 0 0\n")
        with pytest.raises(GraphError):
            load_graph(path)

    def test_unknown_endpoint(self, tmp_path):
        path = self.write(tmp_path, "graph v1\nnode a 0 0\nedge a z 5 1\n")
        with pytest.raises(GraphError):
            load_graph(path)

    def test_negative_length(self, tmp_path):
        path = self.write(tmp_path, "graph v1\nnode a 0 0\nnode b 0 1\nedge a b -5 1\n")
        with pytest.raises(GraphError):
            load_graph(path)

    def test_disconnected(self, tmp_path):
        path = self.write(
            tmp_path,
            "graph v1\nnode a 0 0\nnode b 0 1\nnode c 0 2\nedge a b 5 1\n",
        )
        with pytest.raises(GraphError) as e:
            load_graph(path)
        assert "connected" in str(e.value)

    def test_bundled_campus_fixture_loads(self):
        from campusride.config import default_graph_path

        g = load_graph(default_graph_path())
        assert len(g.nodes) == 40
        route = shortest_route(g, "n34", "n36")
        # route distance vs polyline haversine re-sum, within 0.1%
        resum = sum(
            haversine_distance(p, q) for p, q in zip(route.polyline, route.polyline[1:])
        )
        assert abs(resum - route.distance) <= route.distance * 0.001


ORS_FIXTURE = {
    "type": "FeatureCollection",
    "features": [
        {
            "type": "Feature",
            "properties": {"summary": {"distance": 1234.5, "duration": 300.0}},
            "geometry": {
                "type": "LineString",
                "coordinates": [[31.40, 30.00], [31.405, 30.002], [31.41, 30.004]],
            },
        }
    ],
}


class TestExternalRouter:
    def make_graph(self):
        nodes = {"a": GeoPoint(30.0, 31.40), "b": GeoPoint(30.004, 31.41)}
        return RoadGraph(nodes, [("a", "b", 1500.0, True)])

    def test_parses_fixture(self):
        calls = []

        def transport(url, headers, body):
            calls.append((url, headers, body))
            return 200, json.dumps(ORS_FIXTURE).encode()

        router = ExternalRouter("https://api.example", "key123", transport=transport,
                                clock=VirtualClock())
        route = router.fetch_route(GeoPoint(30.0, 31.40), GeoPoint(30.004, 31.41))
        assert route.distance == 1234.5
        assert route.duration == 300.0
        assert route.polyline[0] == GeoPoint(30.00, 31.40)
        url, headers, body = calls[0]
        assert url.endswith("/v2/directions/driving-car/geojson")
        assert headers["Authorization"] == "key123"
        # coordinates ride lon-first
        assert body["coordinates"][0] == [31.40, 30.0]

    def test_network_failure_falls_back(self):
        def transport(url, headers, body):
            raise OSError("connection refused")

        router = ExternalRouter("https://api.example", "k", transport=transport,
                                clock=VirtualClock())
        g = self.make_graph()
        route = fetch_external_route(router, g, GeoPoint(30.0, 31.40), GeoPoint(30.004, 31.41))
        assert route.node_path == ("a", "b")  # local Dijkstra result

    def test_malformed_body_falls_back(self):
        def transport(url, headers, body):
            return 200, b"{not json"

        router = ExternalRouter("https://api.example", "k", transport=transport,
                                clock=VirtualClock())
        with pytest.raises(MalformedResponse):
            router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))
        g = self.make_graph()
        route = fetch_external_route(router, g, GeoPoint(30.0, 31.40), GeoPoint(30.004, 31.41))
        assert route.node_path == ("a", "b")

    def test_rate_limit_window(self):
        clock = VirtualClock()

        def transport(url, headers, body):
            return 200, json.dumps(ORS_FIXTURE).encode()

        router = ExternalRouter("https://api.example", "k", transport=transport, clock=clock)
        router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))
        with pytest.raises(RateLimited):
            router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))
        clock.advance(2.0)
        router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))

    def test_http_429_maps_to_rate_limited(self):
        def transport(url, headers, body):
            return 429, b""

        router = ExternalRouter("https://api.example", "k", transport=transport,
                                clock=VirtualClock())
        with pytest.raises(RateLimited):
            router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))

    def test_non_200_maps_to_network_failure(self):
        def transport(url, headers, body):
            return 500, b""

        router = ExternalRouter("https://api.example", "k", transport=transport,
                                clock=VirtualClock())
        with pytest.raises(NetworkFailure):
            router.fetch_route(GeoPoint(30.0, 31.4), GeoPoint(30.004, 31.41))

    def test_no_router_configured_uses_local(self):
        g = self.make_graph()
        route = fetch_external_route(None, g, GeoPoint(30.0, 31.40), GeoPoint(30.004, 31.41))
        assert route.node_path == ("a", "b")
