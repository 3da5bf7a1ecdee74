"""Realtime event protocol and GPS tracking.

Wire frames are 4-byte big-endian length plus a UTF-8 JSON object; the same
bytes flow to browser consoles, harness actors, and any other client. The
Gateway owns live connections, exactly-once ride notifications (deduplicated
and retained in the store), the latest-sample location table, and the
poll-based tracking route with reroute hysteresis.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .clock import MonotonicStamper
from .config import Config
from .domain import GeoPoint, LegStatus, Ride, RideRequest, RideStage
from .errors import ServiceError
from .routing import (
    RoadGraph,
    Route,
    SnapTooFar,
    shortest_route,
    should_reroute,
    snap_to_graph,
)

logger = logging.getLogger(__name__)

EVENT_TYPES = frozenset(
    {
        "ride-request",
        "ride-accepted",
        "ride-rejected",
        "driver-arrived",
        "ride-ended",
        "location-update",
        "no-cars-available",
    }
)

LOCATIONS = "locations"
NOTIFICATIONS = "notifications"


class MalformedFrame(ServiceError):
    code = "malformed_frame"


class WrongStage(ServiceError):
    code = "wrong_stage"


class NotParticipant(ServiceError):
    code = "not_participant"


class RideNotActive(ServiceError):
    code = "ride_not_active"


@dataclass(frozen=True)
class EventEnvelope:
    type: str
    seq: int
    sent_at: float
    ride_id: Optional[str] = None
    to: Optional[str] = None
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LocationSample:
    car_id: str
    point: GeoPoint
    recorded_at: float

    def to_dict(self) -> dict:
        return {
            "car_id": self.car_id,
            "point": self.point.to_dict(),
            "recorded_at": self.recorded_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "LocationSample":
        return LocationSample(d["car_id"], GeoPoint.from_dict(d["point"]), d["recorded_at"])


# ---------------------------------------------------------------------------
# Wire codec
# ---------------------------------------------------------------------------


def encode_event(e: EventEnvelope) -> bytes:
    """Length-prefixed canonical JSON; decode(encode(e)) == e."""
    if e.type not in EVENT_TYPES:
        raise MalformedFrame(f"unknown event type {e.type!r}")
    body = {"type": e.type, "seq": e.seq, "sent_at": e.sent_at, "payload": e.payload}
    if e.ride_id is not None:
        body["ride_id"] = e.ride_id
    if e.to is not None:
        body["to"] = e.to
    data = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(data)) + data


def decode_event(frame: bytes) -> EventEnvelope:
    if len(frame) < 4:
        raise MalformedFrame("frame shorter than length prefix")
    (length,) = struct.unpack(">I", frame[:4])
    if len(frame) - 4 != length:
        raise MalformedFrame(f"frame length {len(frame) - 4} != declared {length}")
    try:
        body = json.loads(frame[4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"frame body is not UTF-8 JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise MalformedFrame("frame body must be a JSON object")
    for key in ("type", "seq", "sent_at"):
        if key not in body:
            raise MalformedFrame(f"missing required key {key!r}")
    if body["type"] not in EVENT_TYPES:
        raise MalformedFrame(f"unknown event type {body['type']!r}")
    if not isinstance(body["seq"], int) or isinstance(body["seq"], bool):
        raise MalformedFrame("seq must be an integer")
    if not isinstance(body["sent_at"], (int, float)) or isinstance(body["sent_at"], bool):
        raise MalformedFrame("sent_at must be a number")
    ride_id = body.get("ride_id")
    if ride_id is not None and not isinstance(ride_id, str):
        raise MalformedFrame("ride_id must be a string")
    to = body.get("to")
    if to is not None and not isinstance(to, str):
        raise MalformedFrame("to must be a string")
    payload = body.get("payload", {})
    if not isinstance(payload, dict):
        raise MalformedFrame("payload must be an object")
    return EventEnvelope(
        type=body["type"],
        seq=body["seq"],
        sent_at=float(body["sent_at"]),
        ride_id=ride_id,
        to=to,
        payload=payload,
    )


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------


class Connection:
    """One attached client. Outgoing seq is per-connection and monotone."""

    def __init__(self, principal: str, on_frame: Callable[[bytes], None], stamper):
        self.principal = principal
        self._on_frame = on_frame
        self._stamper = stamper
        self._seq = 0
        self._last_incoming_seq = 0
        self._lock = threading.Lock()

    def send(self, type: str, ride_id: Optional[str], payload: dict) -> EventEnvelope:
        with self._lock:
            self._seq += 1
            envelope = EventEnvelope(
                type=type,
                seq=self._seq,
                sent_at=self._stamper.stamp(),
                ride_id=ride_id,
                to=self.principal,
                payload=payload,
            )
        self._on_frame(encode_event(envelope))
        return envelope

    def accept_incoming(self, envelope: EventEnvelope) -> bool:
        """Session-layer seq check: drop non-monotone client frames."""
        with self._lock:
            if envelope.seq <= self._last_incoming_seq:
                return False
            self._last_incoming_seq = envelope.seq
            return True


def rider_principal(account_id: str) -> str:
    return f"user:{account_id}"


def car_principal(car_id: str) -> str:
    return f"car:{car_id}"


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class Gateway:
    """Event fan-out, notification dedup/retention, GPS table, and tracking."""

    def __init__(self, store, stamper: MonotonicStamper, graph: RoadGraph, config: Config):
        self._store = store
        self._stamper = stamper
        self._graph = graph
        self._config = config
        self._connections: dict[str, list[Connection]] = {}
        self._track: dict[str, dict] = {}
        self._lock = threading.RLock()
        self.stale_samples_dropped = 0

    # -- connection management -----------------------------------------------

    def attach(self, principal: str, on_frame: Callable[[bytes], None]) -> Connection:
        conn = Connection(principal, on_frame, self._stamper)
        with self._lock:
            self._connections.setdefault(principal, []).append(conn)
        logger.info("connection attached for %s", principal)
        return conn

    def detach(self, conn: Connection) -> None:
        with self._lock:
            conns = self._connections.get(conn.principal, [])
            if conn in conns:
                conns.remove(conn)
            if not conns:
                self._connections.pop(conn.principal, None)

    def is_connected(self, principal: str) -> bool:
        with self._lock:
            return bool(self._connections.get(principal))

    def deliver(self, principal: str, type: str, ride_id: Optional[str], payload: dict) -> bool:
        """Send one envelope per live connection; False when none are live."""
        with self._lock:
            conns = list(self._connections.get(principal, []))
        if not conns:
            return False
        delivered = False
        for conn in conns:
            try:
                conn.send(type, ride_id, payload)
                delivered = True
            except Exception:
                logger.warning("delivery to %s failed", principal, exc_info=True)
        return delivered

    # -- dispatch-facing events ------------------------------------------------

    def offer_ride(self, request: RideRequest, car_ids: list[str]) -> list[str]:
        """Broadcast one ride-request envelope per car; cars without a live
        connection are logged and excluded from the offered set."""
        payload = {
            "request_id": request.request_id,
            "pickup": request.pickup.to_dict(),
            "dropoff": request.dropoff.to_dict(),
            "seats": request.seats,
            "created_at": request.created_at,
        }
        delivered = []
        for car_id in car_ids:
            if self.deliver(car_principal(car_id), "ride-request", None, payload):
                delivered.append(car_id)
            else:
                logger.warning("offer for %s not deliverable to car %s", request.request_id, car_id)
        return delivered

    def retract_offer(self, request_id: str, car_ids: list[str]) -> None:
        """Tell losing cars the offer is gone (resolved elsewhere or expired)."""
        for car_id in car_ids:
            self.deliver(
                car_principal(car_id), "ride-rejected", None, {"request_id": request_id, "reason": "resolved"}
            )

    def emit_to_rider(
        self, rider_id: str, type: str, ride_id: Optional[str], key_id: str, payload: dict
    ) -> bool:
        """Rider-facing event with exactly-once semantics per (key_id, type).

        The dedup record doubles as the retained notification log.
        """
        dedup_key = f"{key_id}:{type}"
        record = {
            "key": dedup_key,
            "type": type,
            "ride_id": ride_id,
            "to": rider_principal(rider_id),
            "payload": payload,
            "sent_at": self._stamper.stamp(),
        }
        if not self._store.cas(NOTIFICATIONS, dedup_key, 0, record):
            return False  # already emitted once
        self.deliver(rider_principal(rider_id), type, ride_id, payload)
        return True

    def notify(self, ride: Ride, type: str) -> bool:
        """driver-arrived / ride-ended, gated to the stage that produces them."""
        allowed = {"driver-arrived": RideStage.I_HAVE_ARRIVED, "ride-ended": RideStage.END_RIDE}
        if type not in allowed:
            raise WrongStage(f"{type!r} is not a ride notification")
        if ride.stage is not allowed[type]:
            raise WrongStage(f"{type} can only be sent at stage {allowed[type].value}")
        payload = {"ride_id": ride.ride_id, "stage": ride.stage.value}
        return self.emit_to_rider(ride.request.rider_id, type, ride.ride_id, ride.ride_id, payload)

    def notifications_for(self, rider_id: str) -> list[dict]:
        principal = rider_principal(rider_id)
        records = [doc for _, doc in self._store.scan(NOTIFICATIONS) if doc["to"] == principal]
        records.sort(key=lambda d: d["sent_at"])
        return records

    # -- GPS ---------------------------------------------------------------

    def publish_location(self, car_id: str, point: GeoPoint, recorded_at: float) -> bool:
        """Store the sample unless it is older than the latest kept one."""
        with self._lock:
            found = self._store.get(LOCATIONS, car_id)
            if found is not None and recorded_at < found[0]["recorded_at"]:
                self.stale_samples_dropped += 1
                logger.debug("stale sample for %s dropped", car_id)
                return False
            sample = LocationSample(car_id, point, recorded_at)
            self._store.put(LOCATIONS, car_id, sample.to_dict())
            return True

    def latest_location(self, car_id: str) -> Optional[LocationSample]:
        found = self._store.get(LOCATIONS, car_id)
        return LocationSample.from_dict(found[0]) if found else None

    # -- tracking ------------------------------------------------------------

    @staticmethod
    def active_target(ride: Ride) -> str:
        """Which leg endpoint the tracking route aims at for a stage."""
        if ride.pickup_status in (LegStatus.PENDING, LegStatus.ENROUTE):
            return "pickup"
        return "dropoff"

    def poll_location(
        self, ride: Ride, fallback_position: GeoPoint
    ) -> tuple[Optional[LocationSample], Route, dict]:
        """Latest car sample plus the current route to the active target.

        The route is recomputed only when the leg target changes or the car
        deviates beyond the reroute threshold (hysteresis); otherwise the
        cached polyline is returned unchanged.
        """
        if not ride.active:
            raise RideNotActive("ride is finished")
        sample = self.latest_location(ride.car_id)
        pos = sample.point if sample else fallback_position
        target = self.active_target(ride)
        target_node = ride.request.pickup_node if target == "pickup" else ride.request.dropoff_node
        with self._lock:
            state = self._track.get(ride.ride_id)
            if state is None or state["target"] != target:
                route = self._compute_route(pos, target_node)
                state = {
                    "target": target,
                    "route": route,
                    "version": (state["version"] + 1) if state else 1,
                    "reroutes": state["reroutes"] if state else 0,
                }
                self._track[ride.ride_id] = state
            elif should_reroute(pos, state["route"], self._config.reroute_threshold_m):
                try:
                    route = self._compute_route(pos, target_node)
                except SnapTooFar:
                    logger.warning("car %s off-graph; keeping current route", ride.car_id)
                    route = state["route"]
                else:
                    state["route"] = route
                    state["version"] += 1
                    state["reroutes"] += 1
                    logger.info(
                        "reroute for ride %s (deviation over %.0f m)",
                        ride.ride_id,
                        self._config.reroute_threshold_m,
                    )
            meta = {
                "target": state["target"],
                "route_version": state["version"],
                "reroutes": state["reroutes"],
            }
            return sample, state["route"], meta

    def _compute_route(self, pos: GeoPoint, target_node: str) -> Route:
        from_node = snap_to_graph(pos, self._graph, self._config.snap_radius_m)
        return shortest_route(self._graph, from_node, target_node, self._config.campus_speed_mps)

    def drop_track_state(self, ride_id: str) -> None:
        with self._lock:
            self._track.pop(ride_id, None)
