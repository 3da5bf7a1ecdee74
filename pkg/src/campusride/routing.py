"""Campus road-graph routing.

Dijkstra over an immutable node/edge graph loaded from a line-oriented
fixture file, great-circle distance, ETA estimation, deviation-triggered
rerouting, and an optional client for an external directions API that falls
back to the local router on any failure.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

from .clock import Clock, SystemClock
from .config import CAMPUS_SPEED_MPS, SNAP_RADIUS_M
from .domain import GeoPoint
from .errors import ServiceError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0


class GraphError(ServiceError):
    code = "invalid_graph"


class UnknownNode(ServiceError):
    code = "unknown_node"


class Unreachable(ServiceError):
    code = "unreachable"


class SnapTooFar(ServiceError):
    code = "snap_too_far"


class ExternalRoutingError(ServiceError):
    code = "external_routing"


class NetworkFailure(ExternalRoutingError):
    code = "network_failure"


class RateLimited(ExternalRoutingError):
    code = "rate_limited"


class MalformedResponse(ExternalRoutingError):
    code = "malformed_response"


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters over a sphere of mean Earth radius."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class Route:
    polyline: tuple[GeoPoint, ...]
    distance: float
    duration: float
    node_path: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "polyline": [p.to_dict() for p in self.polyline],
            "distance": self.distance,
            "duration": self.duration,
            "node_path": list(self.node_path),
        }

    @staticmethod
    def from_dict(d: dict) -> "Route":
        return Route(
            polyline=tuple(GeoPoint.from_dict(p) for p in d["polyline"]),
            distance=d["distance"],
            duration=d["duration"],
            node_path=tuple(d["node_path"]),
        )


def estimate_eta_raw(distance_m: float, speed_mps: float = CAMPUS_SPEED_MPS) -> int:
    """Whole seconds (rounded up) to cover a distance at the assumed speed."""
    if distance_m <= 0:
        return 0
    return math.ceil(distance_m / speed_mps)


def estimate_eta(route: Route, speed_mps: float = CAMPUS_SPEED_MPS) -> int:
    """Whole seconds to cover the route at the assumed campus speed."""
    return estimate_eta_raw(route.distance, speed_mps)


class RoadGraph:
    """Immutable campus road network. Safe for concurrent readers."""

    def __init__(
        self,
        nodes: dict[str, GeoPoint],
        edges: list[tuple[str, str, float, bool]],
        version: str = "v1",
    ):
        self.nodes = dict(nodes)
        self.edges = list(edges)
        self.version = version
        self._adjacency: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for frm, to, length, bidi in self.edges:
            if frm not in self.nodes or to not in self.nodes:
                raise GraphError(f"edge {frm}->{to} references unknown node")
            if not (math.isfinite(length) and length > 0):
                raise GraphError(f"edge {frm}->{to} has non-positive length")
            self._adjacency[frm].append((to, length))
            if bidi:
                self._adjacency[to].append((frm, length))
        # deterministic neighbor expansion order
        for n in self._adjacency:
            self._adjacency[n].sort()
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.nodes:
            raise GraphError("graph has no nodes")
        undirected: dict[str, set[str]] = {n: set() for n in self.nodes}
        for frm, to, _, _ in self.edges:
            undirected[frm].add(to)
            undirected[to].add(frm)
        start = next(iter(sorted(self.nodes)))
        seen = {start}
        stack = [start]
        while stack:
            for nb in undirected[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen)
            raise GraphError(f"graph is not connected; unreachable nodes: {missing[:5]}")

    def neighbors(self, node_id: str) -> list[tuple[str, float]]:
        return self._adjacency[node_id]

    def bounding_box(self) -> dict:
        lats = [p.lat for p in self.nodes.values()]
        lons = [p.lon for p in self.nodes.values()]
        return {
            "min_lat": min(lats),
            "max_lat": max(lats),
            "min_lon": min(lons),
            "max_lon": max(lons),
        }


def load_graph(path: str) -> RoadGraph:
    """Parse the `graph v1` fixture format.

    Lines: header `graph v1`, then `node <id> <lat> <lon>` and
    `edge <from> <to> <length_m> <bidi:0|1>`; `#` starts a comment.
    """
    nodes: dict[str, GeoPoint] = {}
    edges: list[tuple[str, str, float, bool]] = []
    version = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "graph":
                if len(parts) != 2:
                    raise GraphError(f"line {lineno}: malformed header")
                version = parts[1]
                if version != "v1":
                    raise GraphError(f"line {lineno}: unsupported graph version {version!r}")
            elif kind == "node":
                if version is None:
                    raise GraphError(f"line {lineno}: missing `graph v1` header")
                if len(parts) != 4:
                    raise GraphError(f"line {lineno}: node lines take id, lat, lon")
                node_id = parts[1]
                if node_id in nodes:
                    raise GraphError(f"line {lineno}: duplicate node {node_id!r}")
                nodes[node_id] = GeoPoint(float(parts[2]), float(parts[3]))
            elif kind == "edge":
                if version is None:
                    raise GraphError(f"line {lineno}: missing `graph v1` header")
                if len(parts) != 5 or parts[4] not in ("0", "1"):
                    raise GraphError(f"line {lineno}: edge lines take from, to, length_m, bidi 0|1")
                edges.append((parts[1], parts[2], float(parts[3]), parts[4] == "1"))
            else:
                raise GraphError(f"line {lineno}: unknown record {kind!r}")
    if version is None:
        raise GraphError("missing `graph v1` header")
    return RoadGraph(nodes, edges, version=version)


def load_places(path: str) -> list[dict]:
    """Named places shipped alongside the graph, for client-side search."""
    with open(path, encoding="utf-8") as fh:
        places = json.load(fh)
    return [{"name": p["name"], "node": p["node"]} for p in places]


def snap_to_graph(p: GeoPoint, g: RoadGraph, snap_radius_m: float = SNAP_RADIUS_M) -> str:
    """Nearest graph node to a pin; ties break toward the smaller node id."""
    best_id, best_dist = None, math.inf
    for node_id in sorted(g.nodes):
        d = haversine_distance(p, g.nodes[node_id])
        if d < best_dist:
            best_id, best_dist = node_id, d
    if best_dist > snap_radius_m:
        raise SnapTooFar(
            f"nearest node {best_id} is {best_dist:.0f} m away (limit {snap_radius_m:.0f} m)"
        )
    return best_id


def shortest_route(
    g: RoadGraph, frm: str, to: str, speed_mps: float = CAMPUS_SPEED_MPS
) -> Route:
    """Minimum-length path by Dijkstra.

    Equal-cost alternatives resolve to the lexicographically smallest node
    path, so results are stable for golden tests.
    """
    if frm not in g.nodes:
        raise UnknownNode(f"unknown node {frm!r}")
    if to not in g.nodes:
        raise UnknownNode(f"unknown node {to!r}")
    if frm == to:
        point = g.nodes[frm]
        return Route(polyline=(point, point), distance=0.0, duration=0.0, node_path=(frm,))

    # heap entries ordered by (cost, path); lexicographic path comparison
    # implements the deterministic tie-break.
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (frm,))]
    settled: set[str] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == to:
            polyline = tuple(g.nodes[n] for n in path)
            return Route(
                polyline=polyline,
                distance=cost,
                duration=float(estimate_eta_raw(cost, speed_mps)),
                node_path=path,
            )
        for nb, length in g.neighbors(node):
            if nb not in settled:
                heapq.heappush(heap, (cost + length, path + (nb,)))
    raise Unreachable(f"no path from {frm} to {to}")


# ---------------------------------------------------------------------------
# Deviation / reroute
# ---------------------------------------------------------------------------


def _local_xy(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection to meters around `origin`; fine at campus scale."""
    x = math.radians(p.lon - origin.lon) * EARTH_RADIUS_M * math.cos(math.radians(origin.lat))
    y = math.radians(p.lat - origin.lat) * EARTH_RADIUS_M
    return x, y


def point_segment_projection(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> tuple[float, float]:
    """(distance_m, t) for the closest point a + t*(b-a), t clamped to [0, 1]."""
    ax, ay = _local_xy(a, a)
    bx, by = _local_xy(b, a)
    px, py = _local_xy(p, a)
    seg_len2 = (bx - ax) ** 2 + (by - ay) ** 2
    if seg_len2 == 0:
        return math.hypot(px - ax, py - ay), 0.0
    t = ((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / seg_len2
    t = max(0.0, min(1.0, t))
    cx, cy = ax + t * (bx - ax), ay + t * (by - ay)
    return math.hypot(px - cx, py - cy), t


def point_to_segment_m(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Distance in meters from p to the segment a-b."""
    return point_segment_projection(p, a, b)[0]


def deviation_from_route(pos: GeoPoint, route: Route) -> float:
    """Minimum distance from pos to any polyline segment, meters."""
    pts = route.polyline
    if len(pts) < 2:
        raise ValueError("route polyline must have at least 2 points")
    return min(point_to_segment_m(pos, a, b) for a, b in zip(pts, pts[1:]))


def should_reroute(pos: GeoPoint, current: Route, threshold_m: float) -> bool:
    """True once the vehicle has drifted more than `threshold_m` off the route."""
    if threshold_m <= 0:
        raise ValueError("threshold must be positive")
    return deviation_from_route(pos, current) > threshold_m


# ---------------------------------------------------------------------------
# External directions API (optional)
# ---------------------------------------------------------------------------


class ExternalRouter:
    """Client for an external directions API with a GeoJSON response shape.

    Requests carry coordinates in [lon, lat] order. Every failure mode falls
    back to the local Dijkstra router; the external service is an
    optimization, never a dependency.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str,
        profile: str = "driving-car",
        transport: Optional[Callable[[str, dict, dict], tuple[int, bytes]]] = None,
        clock: Optional[Clock] = None,
        min_interval_s: float = 1.5,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.profile = profile
        self._transport = transport or self._http_post
        self._clock = clock or SystemClock()
        self._min_interval_s = min_interval_s
        self._last_call: Optional[float] = None

    @staticmethod
    def _http_post(url: str, headers: dict, body: dict) -> tuple[int, bytes]:
        import httpx

        resp = httpx.post(url, headers=headers, json=body, timeout=10.0)
        return resp.status_code, resp.content

    def fetch_route(self, frm: GeoPoint, to: GeoPoint) -> Route:
        now = self._clock.now()
        if self._last_call is not None and now - self._last_call < self._min_interval_s:
            raise RateLimited("local rate limit: calls too close together")
        self._last_call = now
        url = f"{self.base_url}/v2/directions/{self.profile}/geojson"
        headers = {"Authorization": self.api_key, "Content-Type": "application/json"}
        body = {"coordinates": [[frm.lon, frm.lat], [to.lon, to.lat]]}
        try:
            status, payload = self._transport(url, headers, body)
        except Exception as exc:
            raise NetworkFailure(str(exc)) from exc
        if status == 429:
            raise RateLimited("remote rate limit")
        if status != 200:
            raise NetworkFailure(f"directions API returned {status}")
        return self._parse(payload)

    @staticmethod
    def _parse(payload: bytes) -> Route:
        try:
            doc = json.loads(payload.decode("utf-8"))
            feature = doc["features"][0]
            coords = feature["geometry"]["coordinates"]
            summary = feature["properties"]["summary"]
            polyline = tuple(GeoPoint(lat, lon) for lon, lat in coords)
            if len(polyline) < 2:
                raise ValueError("geometry has fewer than 2 points")
            return Route(
                polyline=polyline,
                distance=float(summary["distance"]),
                duration=float(summary["duration"]),
                node_path=(),
            )
        except (KeyError, IndexError, TypeError, ValueError, UnicodeDecodeError) as exc:
            raise MalformedResponse(f"cannot parse directions response: {exc}") from exc


def fetch_external_route(
    router: Optional[ExternalRouter],
    graph: RoadGraph,
    frm: GeoPoint,
    to: GeoPoint,
    snap_radius_m: float = SNAP_RADIUS_M,
    speed_mps: float = CAMPUS_SPEED_MPS,
) -> Route:
    """External route when configured and healthy; local Dijkstra otherwise."""
    if router is not None:
        try:
            return router.fetch_route(frm, to)
        except ExternalRoutingError as exc:
            logger.warning("external routing failed (%s); using local router", exc.code)
    from_node = snap_to_graph(frm, graph, snap_radius_m)
    to_node = snap_to_graph(to, graph, snap_radius_m)
    return shortest_route(graph, from_node, to_node, speed_mps)
