"""Deterministic scenario execution.

One event loop, one in-process service, strictly sequential steps under a
virtual clock: identical (scenario, seed) pairs produce byte-identical
transcripts. Actors talk to the service through the real HTTP handlers and
receive real wire frames on virtual connections.
"""

from __future__ import annotations

import asyncio
import json
import random
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import httpx

from ..clock import VirtualClock
from ..config import Config, default_graph_path, default_places_path
from ..domain import GeoPoint
from ..errors import ServiceError
from ..ids import SequentialIdSource
from ..protocol import car_principal, decode_event, rider_principal
from ..routing import haversine_distance
from ..service import RideSystem, create_app
from ..store import FileStore, MemoryStore
from .analysis import evaluate_expectation
from .scenario import Scenario

SIM_SCRYPT_N = 2**8  # simulation accounts only need the digest contract
STAGE_SEQUENCE = ("HeadToPickup", "IHaveArrived", "StartRide", "EndRide")

_REDACTED_KEYS = {"password", "token"}


class ScenarioError(ServiceError):
    code = "scenario_failed"


class Transcript:
    """Append-only, totally ordered record of everything observable."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, record: dict) -> None:
        self.records.append(record)

    def events(self, type: Optional[str] = None, to_prefix: str = "") -> list[dict]:
        out = []
        for r in self.records:
            if r["kind"] != "event":
                continue
            envelope = r["envelope"]
            if type is not None and envelope["type"] != type:
                continue
            if to_prefix and not (envelope.get("to") or "").startswith(to_prefix):
                continue
            out.append(r)
        return out

    def http(self, method: Optional[str] = None, path: Optional[str] = None) -> list[dict]:
        out = []
        for r in self.records:
            if r["kind"] != "http":
                continue
            if method is not None and r["method"] != method:
                continue
            if path is not None and r["path"] != path:
                continue
            out.append(r)
        return out

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records) + "\n"


def _redact(value):
    if isinstance(value, dict):
        return {
            k: "***" if k in _REDACTED_KEYS and isinstance(v, str) else _redact(v)
            for k, v in value.items()
        }
    if isinstance(value, list):
        return [_redact(v) for v in value]
    return value


@dataclass
class _Actor:
    actor_id: str
    role: str
    params: dict = field(default_factory=dict)
    token: Optional[str] = None
    account_id: Optional[str] = None
    username: Optional[str] = None
    ride_id: Optional[str] = None
    request_id: Optional[str] = None
    position: Optional[GeoPoint] = None
    offers: "OrderedDict[str, dict]" = field(default_factory=OrderedDict)
    seen_events: int = 0
    sink_frames: list = field(default_factory=list)


class ScenarioRunner:
    def __init__(self, scenario: Scenario, seed: int = 0, workdir: Optional[str] = None):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = VirtualClock(start=1_000_000.0)
        self.transcript = Transcript()
        self._workdir = workdir or tempfile.mkdtemp(prefix="campusride-sim-")
        graph_file = (
            default_graph_path() if scenario.graph == "default" else scenario.graph
        )
        store = (
            MemoryStore()
            if scenario.store == "memory"
            else FileStore(f"{self._workdir}/store.log")
        )
        config = Config(
            graph_file=graph_file,
            places_file=default_places_path(),
            outbox_dir=f"{self._workdir}/outbox",
        )
        self.system = RideSystem(
            config,
            store=store,
            clock=self.clock,
            ids=SequentialIdSource(),
            scrypt_n=SIM_SCRYPT_N,
        )
        self._loop = asyncio.new_event_loop()
        self._client = httpx.AsyncClient(
            transport=httpx.ASGITransport(app=create_app(self.system)),
            base_url="http://sim",
        )
        self.actors: dict[str, _Actor] = {}
        self._admin: Optional[_Actor] = None

    # -- low-level ------------------------------------------------------------

    def close(self) -> None:
        self._loop.run_until_complete(self._client.aclose())
        self._loop.close()
        self.system.close()

    def _advance(self, ticks: float = 1.0) -> None:
        self.clock.advance(self.scenario.tick * ticks)
        self.system.dispatcher.expire_offers(self.clock.now())

    def _call(self, actor: _Actor, method: str, path: str, body=None, params=None) -> httpx.Response:
        headers = {"Authorization": f"Bearer {actor.token}"} if actor.token else {}
        resp = self._loop.run_until_complete(
            self._client.request(method, path, json=body, params=params, headers=headers)
        )
        try:
            payload = resp.json()
        except json.JSONDecodeError:
            payload = {"raw": resp.text}
        self.transcript.append(
            {
                "t": self.clock.now(),
                "actor": actor.actor_id,
                "kind": "http",
                "method": method,
                "path": path,
                "status": resp.status_code,
                "request": _redact(body) if body is not None else None,
                "response": _redact(payload),
            }
        )
        return resp

    def _attach(self, actor: _Actor) -> None:
        principal = (
            car_principal(actor.params["car_id"])
            if actor.role == "driver"
            else rider_principal(actor.account_id)
        )

        def on_frame(frame: bytes, actor=actor):
            envelope = decode_event(frame)
            self.transcript.append(
                {
                    "t": self.clock.now(),
                    "actor": actor.actor_id,
                    "kind": "event",
                    "envelope": {
                        "type": envelope.type,
                        "seq": envelope.seq,
                        "sent_at": envelope.sent_at,
                        "ride_id": envelope.ride_id,
                        "to": envelope.to,
                        "payload": envelope.payload,
                    },
                }
            )
            actor.sink_frames.append(envelope)

        self.system.gateway.attach(principal, on_frame)
        if actor.role == "driver":
            self.system.dispatcher.on_driver_connected()

    def _sync_actor(self, actor: _Actor) -> None:
        """Fold newly received envelopes into actor state."""
        while actor.seen_events < len(actor.sink_frames):
            envelope = actor.sink_frames[actor.seen_events]
            actor.seen_events += 1
            if actor.role == "driver":
                if envelope.type == "ride-request":
                    actor.offers[envelope.payload["request_id"]] = envelope.payload
                elif envelope.type == "ride-rejected":
                    actor.offers.pop(envelope.payload.get("request_id"), None)
            else:
                if envelope.type == "ride-accepted":
                    actor.ride_id = envelope.payload["ride_id"]
                elif envelope.type in ("ride-rejected", "no-cars-available"):
                    actor.request_id = None

    # -- setup ------------------------------------------------------------------

    def _setup(self) -> None:
        group_count, prefix = self.scenario.rider_group
        for decl in self.scenario.actors:
            self.actors[decl.actor_id] = _Actor(decl.actor_id, decl.role, dict(decl.params))
        for i in range(1, group_count + 1):
            rid = f"{prefix}{i:03d}"
            self.actors[rid] = _Actor(rid, "rider", {"group": "1"})

        for actor in self.actors.values():
            if actor.role == "admin":
                password = f"admin-{actor.actor_id}-pw"
                self.system.bootstrap_admin(actor.actor_id, password)
                self._login(actor, actor.actor_id, password)
                if self._admin is None:
                    self._admin = actor
        if any(a.role == "driver" for a in self.actors.values()) and self._admin is None:
            raise ScenarioError("driver actors require an admin actor")

        for actor in self.actors.values():
            if actor.role == "driver":
                car_id = actor.actor_id
                actor.params["car_id"] = car_id
                body = {
                    "car_id": car_id,
                    "capacity": int(actor.params.get("capacity", "4")),
                    "password": f"drive-{car_id}-pw",
                    "at_node": actor.params.get("at"),
                }
                resp = self._call(self._admin, "POST", "/admin/cars", body=body)
                if resp.status_code != 201:
                    raise ScenarioError(f"provisioning {car_id} failed: {resp.text}")
                node = actor.params.get("at") or min(self.system.graph.nodes)
                actor.position = self.system.graph.nodes[node]
                self._login(actor, car_id, f"drive-{car_id}-pw")
                self._attach(actor)

        # bulk rider group: registered, approved, and logged in up front
        for actor in sorted(self.actors.values(), key=lambda a: a.actor_id):
            if actor.role == "rider" and actor.params.get("group"):
                self._register(actor)
                self._review(actor, accept=True)
                self._login_rider(actor)

    # -- account steps ---------------------------------------------------------

    def _register(self, actor: _Actor) -> httpx.Response:
        body = {
            "university_id": f"id-{actor.actor_id}",
            "email": f"{actor.actor_id}@uni.example",
            "first_name": actor.actor_id,
            "last_name": "sim",
            "phone": "+20100000000",
            "password": f"pw-{actor.actor_id}-9",
        }
        resp = self._call(actor, "POST", "/register", body=body)
        if resp.status_code == 201:
            actor.account_id = f"id-{actor.actor_id}"
            actor.username = resp.json()["username"]
        return resp

    def _review(self, rider: _Actor, accept: bool) -> None:
        if self._admin is None:
            raise ScenarioError("review step requires an admin actor")
        body = {"account_id": f"id-{rider.actor_id}", "decision": "accept" if accept else "reject"}
        resp = self._call(self._admin, "POST", "/admin/review", body=body)
        if resp.status_code != 200:
            raise ScenarioError(f"review failed: {resp.text}")

    def _login(self, actor: _Actor, username: str, password: str) -> None:
        resp = self._call(actor, "POST", "/login", body={"username": username, "password": password})
        if resp.status_code != 200:
            raise ScenarioError(f"login for {actor.actor_id} failed: {resp.text}")
        data = resp.json()
        actor.token = data["token"]
        actor.account_id = data["account_id"]

    def _login_rider(self, actor: _Actor) -> None:
        self._login(actor, actor.username or f"{actor.actor_id}.sim", f"pw-{actor.actor_id}-9")
        self._attach(actor)

    # -- movement helpers --------------------------------------------------------

    @staticmethod
    def _toward(pos: GeoPoint, target: GeoPoint, dist: float) -> GeoPoint:
        total = haversine_distance(pos, target)
        if total <= dist or total == 0.0:
            return target
        f = dist / total
        return GeoPoint(pos.lat + (target.lat - pos.lat) * f, pos.lon + (target.lon - pos.lon) * f)

    @staticmethod
    def _move_along(polyline, pos: GeoPoint, dist: float) -> GeoPoint:
        """Walk `dist` meters forward along the polyline from the projection
        of `pos` onto it; clamps at the final vertex."""
        from ..routing import point_segment_projection

        if len(polyline) < 2:
            return pos
        best = (float("inf"), 0, 0.0)
        for i, (a, b) in enumerate(zip(polyline, polyline[1:])):
            d, t = point_segment_projection(pos, a, b)
            if d < best[0]:
                best = (d, i, t)
        _, seg, t = best
        remaining = t * haversine_distance(polyline[seg], polyline[seg + 1]) + dist
        for i in range(seg, len(polyline) - 1):
            a, b = polyline[i], polyline[i + 1]
            seg_len = haversine_distance(a, b)
            if remaining <= seg_len or seg_len == 0.0:
                f = 0.0 if seg_len == 0.0 else remaining / seg_len
                return GeoPoint(a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f)
            remaining -= seg_len
        return polyline[-1]

    def _publish(self, driver: _Actor) -> None:
        self._call(
            driver,
            "POST",
            "/location",
            body={
                "lat": driver.position.lat,
                "lon": driver.position.lon,
                "recorded_at": self.clock.now(),
            },
        )

    def _track(self, actor: _Actor) -> Optional[dict]:
        resp = self._call(actor, "GET", f"/rides/{actor.ride_id}/track")
        return resp.json() if resp.status_code == 200 else None

    # -- step execution ------------------------------------------------------------

    def _run_step(self, actor_id: str, command: str, args: tuple[str, ...]) -> None:
        actor = self.actors[actor_id]
        self._sync_actor(actor)
        kw = {k: v for k, v in (a.split("=", 1) for a in args if "=" in a)}
        pos_args = [a for a in args if "=" not in a]

        if command == "register":
            self._register(actor)
        elif command == "try-login":
            self._call(
                actor,
                "POST",
                "/login",
                body={
                    "username": actor.username or f"{actor.actor_id}.sim",
                    "password": f"pw-{actor.actor_id}-9",
                },
            )
        elif command == "login":
            self._login_rider(actor)
        elif command == "review":
            rider = self.actors[pos_args[0]]
            self._review(rider, accept=(pos_args[1] if len(pos_args) > 1 else "accept") == "accept")
        elif command == "preview":
            frm = self.system.graph.nodes[kw["pickup"]]
            to = self.system.graph.nodes[kw["dropoff"]]
            self._call(
                actor,
                "GET",
                "/route/preview",
                params={
                    "from_lat": frm.lat,
                    "from_lon": frm.lon,
                    "to_lat": to.lat,
                    "to_lon": to.lon,
                },
            )
        elif command == "request":
            self._request(actor, kw)
        elif command == "accept":
            self._sync_actor(actor)
            if not actor.offers:
                raise ScenarioError(f"{actor_id} has no offer to accept")
            request_id = next(iter(actor.offers))
            resp = self._call(actor, "POST", "/accept-ride", body={"request_id": request_id})
            actor.offers.pop(request_id, None)
            if resp.status_code == 200:
                actor.ride_id = resp.json()["ride_id"]
        elif command == "reject":
            self._sync_actor(actor)
            if not actor.offers:
                raise ScenarioError(f"{actor_id} has no offer to reject")
            request_id = next(iter(actor.offers))
            self._call(actor, "POST", "/reject-ride", body={"request_id": request_id})
            actor.offers.pop(request_id, None)
        elif command == "stage":
            self._call(
                actor, "POST", f"/rides/{actor.ride_id}/stage", body={"target": pos_args[0]}
            )
        elif command == "drive":
            for _ in range(int(pos_args[0])):
                self._advance()
                data = self._track(actor)
                if data is not None:
                    polyline = tuple(
                        GeoPoint(p["lat"], p["lon"]) for p in data["route"]["polyline"]
                    )
                    step_m = self.system.config.campus_speed_mps * self.scenario.tick
                    actor.position = self._move_along(polyline, actor.position, step_m)
                self._publish(actor)
        elif command == "detour":
            target = self.system.graph.nodes[pos_args[0]]
            for _ in range(int(pos_args[1])):
                self._advance()
                step_m = self.system.config.campus_speed_mps * self.scenario.tick
                actor.position = self._toward(actor.position, target, step_m)
                self._publish(actor)
        elif command == "poll":
            for _ in range(int(pos_args[0]) if pos_args else 1):
                self._advance()
                self._sync_actor(actor)
                if actor.ride_id is None:
                    raise ScenarioError(f"{actor_id} has no ride to poll")
                self._track(actor)
        elif command == "notifications":
            self._call(actor, "GET", "/notifications")
        elif command == "wait":
            self._advance(float(pos_args[0]) if pos_args else 1.0)
        elif command == "serve-all":
            self._serve_all(actor)
        else:
            raise ScenarioError(f"unknown command {command!r}")

    def _request(self, actor: _Actor, kw: dict) -> None:
        pickup = self.system.graph.nodes[kw["pickup"]]
        dropoff = self.system.graph.nodes[kw["dropoff"]]
        resp = self._call(
            actor,
            "POST",
            "/confirm-ride",
            body={
                "pickup": {"lat": pickup.lat, "lon": pickup.lon},
                "dropoff": {"lat": dropoff.lat, "lon": dropoff.lon},
                "seats": int(kw.get("seats", "1")),
            },
        )
        if resp.status_code == 200:
            actor.request_id = resp.json()["request_id"]

    def _serve_all(self, driver: _Actor, cap: int = 1000) -> None:
        """Accept and complete offers until none remain."""
        for _ in range(cap):
            self._sync_actor(driver)
            if not driver.offers:
                break
            request_id = next(iter(driver.offers))
            resp = self._call(driver, "POST", "/accept-ride", body={"request_id": request_id})
            driver.offers.pop(request_id, None)
            if resp.status_code != 200:
                continue
            ride_id = resp.json()["ride_id"]
            for target in STAGE_SEQUENCE:
                self._advance()
                self._call(driver, "POST", f"/rides/{ride_id}/stage", body={"target": target})

    def _expand_group_step(self, command: str, args: tuple[str, ...]) -> None:
        group_count, prefix = self.scenario.rider_group
        riders = [f"{prefix}{i:03d}" for i in range(1, group_count + 1)]
        if command == "request-shuffled":
            self.rng.shuffle(riders)
            for rid in riders:
                self._advance()
                self._run_step(rid, "request", args)
        elif command == "request":
            for rid in riders:
                self._advance()
                self._run_step(rid, "request", args)
        else:
            raise ScenarioError(f"group step cannot run command {command!r}")

    # -- entry point ------------------------------------------------------------

    def run(self) -> tuple[Transcript, list[dict]]:
        self._setup()
        for step in self.scenario.steps:
            if step.actor == "*":
                self._expand_group_step(step.command, step.args)
            else:
                self._advance()
                self._run_step(step.actor, step.command, step.args)
        results = []
        for expectation in self.scenario.expectations:
            outcome = evaluate_expectation(self, expectation)
            results.append(outcome)
        return self.transcript, results


def run_scenario(
    scenario: Scenario, seed: int = 0, workdir: Optional[str] = None
) -> tuple[Transcript, list[dict]]:
    runner = ScenarioRunner(scenario, seed=seed, workdir=workdir)
    try:
        return runner.run()
    finally:
        runner.close()
