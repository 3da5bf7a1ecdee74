"""Shared fixtures: a tiny line graph, frame-capturing sinks, and a fully
wired in-memory system for endpoint-level tests."""

import pathlib

import pytest

from campusride.clock import MonotonicStamper, VirtualClock
from campusride.config import Config
from campusride.domain import GeoPoint
from campusride.protocol import decode_event
from campusride.routing import RoadGraph
from campusride.store import MemoryStore

FIXTURE_GRAPH = pathlib.Path(__file__).parent / "data" / "line_graph.txt"

TEST_SCRYPT_N = 2**11  # keep password hashing fast in tests


def line_graph() -> RoadGraph:
    nodes = {
        "a": GeoPoint(0.0, 0.0),
        "b": GeoPoint(0.0, 0.01),
        "c": GeoPoint(0.0, 0.02),
        "d": GeoPoint(0.0, 0.03),
    }
    edges = [
        ("a", "b", 1113.0, True),
        ("b", "c", 1113.0, True),
        ("c", "d", 1113.0, True),
    ]
    return RoadGraph(nodes, edges)


class Sink:
    """Captures wire frames from a virtual connection."""

    def __init__(self):
        self.frames = []

    def __call__(self, frame: bytes):
        self.frames.append(frame)

    def envelopes(self):
        return [decode_event(f) for f in self.frames]

    def types(self):
        return [e.type for e in self.envelopes()]


@pytest.fixture
def vclock():
    return VirtualClock(start=1_000.0)


@pytest.fixture
def stamper(vclock):
    return MonotonicStamper(vclock)


@pytest.fixture
def memstore():
    return MemoryStore()


@pytest.fixture
def config():
    return Config()


def make_system(tmp_path, vclock, store=None, **cfg_overrides):
    """A fully wired RideSystem on the line-graph fixture and virtual time."""
    from campusride.ids import SequentialIdSource
    from campusride.service import RideSystem

    cfg = Config(
        graph_file=str(FIXTURE_GRAPH),
        places_file=str(tmp_path / "no_places.json"),
        outbox_dir=str(tmp_path / "outbox"),
        **cfg_overrides,
    )
    return RideSystem(
        cfg,
        store=store if store is not None else MemoryStore(),
        clock=vclock,
        ids=SequentialIdSource(),
        scrypt_n=TEST_SCRYPT_N,
    )


class Api:
    """Thin convenience wrapper over the HTTP surface for tests."""

    def __init__(self, client, system):
        self.client = client
        self.system = system

    @staticmethod
    def auth(token):
        return {"Authorization": f"Bearer {token}"}

    def register(self, uid="49-1234", email=None, first="John", last="Doe",
                 phone="+20100000000", password="secret1"):
        return self.client.post(
            "/register",
            json={
                "university_id": uid,
                "email": email or f"{uid}@uni.example",
                "first_name": first,
                "last_name": last,
                "phone": phone,
                "password": password,
            },
        )

    def login(self, username, password="secret1"):
        resp = self.client.post("/login", json={"username": username, "password": password})
        assert resp.status_code == 200, resp.text
        return resp.json()

    def admin_token(self, username="root", password="rootpass1"):
        self.system.bootstrap_admin(username, password)
        return self.login(username, password)["token"]

    def approved_rider(self, admin, uid="49-1234", first="John", last="Doe",
                       password="secret1"):
        resp = self.register(uid=uid, first=first, last=last, password=password)
        assert resp.status_code == 201, resp.text
        username = resp.json()["username"]
        resp = self.client.post(
            "/admin/review",
            json={"account_id": uid, "decision": "accept"},
            headers=self.auth(admin),
        )
        assert resp.status_code == 200, resp.text
        return self.login(username, password)

    def provision_car(self, admin, car_id="car-1", capacity=4, at_node="a",
                      password="drivepass1"):
        resp = self.client.post(
            "/admin/cars",
            json={"car_id": car_id, "capacity": capacity, "password": password,
                  "at_node": at_node},
            headers=self.auth(admin),
        )
        assert resp.status_code == 201, resp.text
        return self.login(car_id, password)

    def confirm(self, token, pickup=(0.0, 0.01), dropoff=(0.0, 0.02), seats=1):
        return self.client.post(
            "/confirm-ride",
            json={
                "pickup": {"lat": pickup[0], "lon": pickup[1]},
                "dropoff": {"lat": dropoff[0], "lon": dropoff[1]},
                "seats": seats,
            },
            headers=self.auth(token),
        )

    def accept(self, token, request_id):
        return self.client.post(
            "/accept-ride", json={"request_id": request_id}, headers=self.auth(token)
        )

    def reject(self, token, request_id):
        return self.client.post(
            "/reject-ride", json={"request_id": request_id}, headers=self.auth(token)
        )

    def stage(self, token, ride_id, target):
        return self.client.post(
            f"/rides/{ride_id}/stage", json={"target": target}, headers=self.auth(token)
        )

    def publish(self, token, lat, lon, recorded_at=None):
        return self.client.post(
            "/location",
            json={"lat": lat, "lon": lon, "recorded_at": recorded_at},
            headers=self.auth(token),
        )

    def track(self, token, ride_id):
        return self.client.get(f"/rides/{ride_id}/track", headers=self.auth(token))
