"""HTTP + realtime front door.

`RideSystem` is the composition root: it wires accounts, fleet, dispatch,
routing, and the gateway over one document store, and owns crash recovery.
`create_app` binds it to the JSON API and the /events websocket channel.
Handlers stay thin; every business rule lives in the owning module.
"""

from __future__ import annotations

import asyncio
import logging
import secrets
from typing import Optional

from fastapi import Depends, FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import dispatch as dispatch_mod
from .accounts import AccountService, Session
from .clock import Clock, MonotonicStamper, SystemClock
from .config import Config
from .dispatch import Dispatcher
from .domain import (
    Actor,
    Approval,
    GeoPoint,
    GeoPointError,
    Ride,
    RideStage,
    Role,
    UserAccount,
    advance_stage,
)
from .errors import ServiceError, ValidationError
from .fleet import CARS, Fleet
from .ids import IdSource, UuidSource
from .protocol import (
    Gateway,
    MalformedFrame,
    NotParticipant,
    RideNotActive,
    car_principal,
    decode_event,
    rider_principal,
)
from .routing import (
    ExternalRouter,
    estimate_eta,
    fetch_external_route,
    load_graph,
    load_places,
    shortest_route,
    snap_to_graph,
)
from .store import DocumentStore, open_store

logger = logging.getLogger(__name__)

RIDES = dispatch_mod.RIDES


class Unauthenticated(ServiceError):
    code = "unauthenticated"


class Forbidden(ServiceError):
    code = "forbidden"


class UnknownRide(ServiceError):
    code = "unknown_ride"


_STATUS_BY_CODE = {
    "invalid_request": 422,
    "invalid_geopoint": 422,
    "weak_password": 422,
    "malformed_email": 422,
    "empty_name": 422,
    "missing_field": 422,
    "seat_mismatch": 422,
    "snap_too_far": 422,
    "invalid_graph": 422,
    "duplicate_identity": 409,
    "duplicate_car": 409,
    "duplicate_request": 409,
    "rider_busy": 409,
    "already_claimed": 409,
    "illegal_transition": 409,
    "stale_ride": 409,
    "not_pending": 409,
    "not_offered": 409,
    "wrong_stage": 409,
    "seat_accounting": 409,
    "wrong_actor": 403,
    "forbidden": 403,
    "not_yet_approved": 403,
    "not_participant": 403,
    "invalid_credentials": 401,
    "unauthenticated": 401,
    "unknown_request": 404,
    "unknown_account": 404,
    "unknown_car": 404,
    "unknown_ride": 404,
    "unknown_node": 404,
    "ride_not_active": 410,
}


def status_for(err: ServiceError) -> int:
    return _STATUS_BY_CODE.get(err.code, 400)


class RideSystem:
    """Everything behind the endpoints, reusable in-process by the harness."""

    def __init__(
        self,
        config: Config,
        store: Optional[DocumentStore] = None,
        clock: Optional[Clock] = None,
        ids: Optional[IdSource] = None,
        scrypt_n: int = 2**14,
    ):
        self.config = config
        self.clock = clock or SystemClock()
        self.stamper = MonotonicStamper(self.clock)
        self.store = store if store is not None else open_store(config.store_path)
        self.ids = ids or UuidSource()
        self.graph = load_graph(config.graph_file)
        try:
            self.places = load_places(config.places_file)
        except FileNotFoundError:
            self.places = []
        self.accounts = AccountService(
            self.store,
            self.stamper,
            outbox_dir=config.outbox_dir,
            session_ttl_s=config.session_ttl_s,
            scrypt_n=scrypt_n,
        )
        self.fleet = Fleet(self.store, self.stamper)
        self.gateway = Gateway(self.store, self.stamper, self.graph, config)
        self.external_router = None
        if config.routing_api_url and config.routing_api_key:
            self.external_router = ExternalRouter(
                config.routing_api_url, config.routing_api_key, clock=self.clock
            )
        self._recover_unfinished_rides()
        self._reconcile_fleet()
        self.dispatcher = Dispatcher(
            self.store, self.stamper, self.ids, self.fleet, self.gateway, config
        )

    # -- crash recovery --------------------------------------------------------

    def _recover_unfinished_rides(self) -> None:
        """Complete the automatic EndRide -> Finished step if a crash
        interrupted it; the ride-ended notification dedup makes this safe."""
        for _, doc in self.store.scan(RIDES):
            ride = Ride.from_dict(doc)
            if ride.stage is RideStage.END_RIDE:
                self.gateway.notify(ride, "ride-ended")
                self._advance(ride.ride_id, Actor.SYSTEM, RideStage.FINISHED)
                logger.info("recovered ride %s to Finished", ride.ride_id)

    def _reconcile_fleet(self) -> None:
        """Recompute car availability and seat balance from active rides."""
        held: dict[str, int] = {}
        for _, doc in self.store.scan(RIDES):
            ride = Ride.from_dict(doc)
            if ride.active:
                held[ride.car_id] = held.get(ride.car_id, 0) + ride.request.seats
        for car in self.fleet.list():
            seats_held = held.get(car.car_id, 0)
            expected_available = seats_held == 0
            expected_seats = car.capacity - seats_held
            if car.available != expected_available or car.seats_available != expected_seats:
                fixed = {
                    **car.to_dict(),
                    "available": expected_available,
                    "seats_available": expected_seats,
                }
                self.store.put(CARS, car.car_id, fixed)
                logger.info("reconciled car %s after restart", car.car_id)

    # -- account orchestration ---------------------------------------------------

    def bootstrap_admin(self, username: str, password: str) -> UserAccount:
        return self.accounts.create_account(
            UserAccount(
                university_id=f"admin-{username}",
                email=f"{username}@campusride.local",
                first_name=username,
                last_name="admin",
                phone="",
                username=username,
                password_digest=self.accounts.hash(password),
                approval=Approval.APPROVED,
                role=Role.ADMIN,
            )
        )

    def provision_car(
        self,
        car_id: str,
        capacity: int,
        password: Optional[str] = None,
        at_node: Optional[str] = None,
    ) -> tuple[dict, str]:
        """Create the car and its driver login; returns (car doc, password)."""
        node = at_node or min(self.graph.nodes)
        if node not in self.graph.nodes:
            raise ValidationError([{"field": "at_node", "message": f"unknown node {node!r}"}])
        password = password or secrets.token_urlsafe(9)
        car = self.fleet.provision(car_id, capacity, self.graph.nodes[node])
        self.accounts.create_account(
            UserAccount(
                university_id=f"car-{car_id}",
                email=f"{car_id}@fleet.campusride.local",
                first_name=car_id,
                last_name="driver",
                phone="",
                username=car_id,
                password_digest=self.accounts.hash(password),
                approval=Approval.APPROVED,
                role=Role.DRIVER,
                car_id=car_id,
            )
        )
        if self.gateway.is_connected(car_principal(car_id)):
            self.dispatcher.on_driver_connected()
        return car.to_dict(), password

    # -- ride orchestration ------------------------------------------------------

    def _validated_points(self, body: "ConfirmBody") -> tuple[GeoPoint, GeoPoint, str, str]:
        errors = []
        pickup = dropoff = None
        pickup_node = dropoff_node = None
        try:
            pickup = GeoPoint(body.pickup.lat, body.pickup.lon)
        except GeoPointError as exc:
            errors.append({"field": "pickup", "message": exc.message})
        try:
            dropoff = GeoPoint(body.dropoff.lat, body.dropoff.lon)
        except GeoPointError as exc:
            errors.append({"field": "dropoff", "message": exc.message})
        if pickup is not None:
            try:
                pickup_node = snap_to_graph(pickup, self.graph, self.config.snap_radius_m)
            except ServiceError as exc:
                errors.append({"field": "pickup", "message": exc.message})
        if dropoff is not None:
            try:
                dropoff_node = snap_to_graph(dropoff, self.graph, self.config.snap_radius_m)
            except ServiceError as exc:
                errors.append({"field": "dropoff", "message": exc.message})
        if errors:
            raise ValidationError(errors)
        return pickup, dropoff, pickup_node, dropoff_node

    def confirm_ride(self, session: Session, body: "ConfirmBody") -> dict:
        self.dispatcher.expire_offers(self.clock.now())
        pickup, dropoff, pickup_node, dropoff_node = self._validated_points(body)
        req, position = self.dispatcher.enqueue_request(
            rider_id=session.account_id,
            pickup=pickup,
            dropoff=dropoff,
            seats=body.seats,
            pickup_node=pickup_node,
            dropoff_node=dropoff_node,
        )
        preview = shortest_route(
            self.graph, pickup_node, dropoff_node, self.config.campus_speed_mps
        )
        return {
            "request_id": req.request_id,
            "status": "queued",
            "position": position,
            "distance_m": preview.distance,
            "duration_s": estimate_eta(preview, self.config.campus_speed_mps),
        }

    def route_preview(self, frm: GeoPoint, to: GeoPoint) -> dict:
        route = fetch_external_route(
            self.external_router,
            self.graph,
            frm,
            to,
            snap_radius_m=self.config.snap_radius_m,
            speed_mps=self.config.campus_speed_mps,
        )
        return {
            "route": route.to_dict(),
            "distance_m": route.distance,
            "duration_s": estimate_eta(route, self.config.campus_speed_mps),
        }

    def accept_ride(self, session: Session, request_id: str) -> Ride:
        self.dispatcher.expire_offers(self.clock.now())
        car_id = self._car_for(session)
        return self.dispatcher.claim_request(request_id, car_id)

    def reject_ride(self, session: Session, request_id: str) -> Optional[str]:
        self.dispatcher.expire_offers(self.clock.now())
        car_id = self._car_for(session)
        return self.dispatcher.reject_request(request_id, car_id)

    def _car_for(self, session: Session) -> str:
        account = self.accounts.get_account(session.account_id)
        if account is None or account.car_id is None:
            raise Forbidden("driver session has no car bound")
        return account.car_id

    def get_ride(self, ride_id: str) -> Ride:
        found = self.store.get(RIDES, ride_id)
        if found is None:
            raise UnknownRide(f"no ride {ride_id!r}")
        return Ride.from_dict(found[0])

    def post_stage(self, session: Session, ride_id: str, target: RideStage) -> Ride:
        ride = self.get_ride(ride_id)
        if self._car_for(session) != ride.car_id:
            raise Forbidden("not the assigned driver for this ride")
        ride = self._advance(ride_id, Actor.DRIVER, target)
        if ride.stage is RideStage.I_HAVE_ARRIVED:
            self.gateway.notify(ride, "driver-arrived")
        elif ride.stage is RideStage.END_RIDE:
            self.gateway.notify(ride, "ride-ended")
            ride = self._advance(ride_id, Actor.SYSTEM, RideStage.FINISHED)
            self._finish_ride(ride)
        return ride

    def _advance(self, ride_id: str, actor: Actor, target: RideStage) -> Ride:
        """Compare-and-set stage transition; exactly one concurrent winner."""
        while True:
            found = self.store.get(RIDES, ride_id)
            if found is None:
                raise UnknownRide(f"no ride {ride_id!r}")
            doc, version = found
            ride = Ride.from_dict(doc)
            at = self.stamper.stamp()
            if ride.history and at <= ride.history[-1][1]:
                # restarted service clock behind persisted history; keep strict order
                at = ride.history[-1][1] + 1e-6
            updated = advance_stage(ride, actor, target, at=at)
            if self.store.cas(RIDES, ride_id, version, updated.to_dict()):
                return updated
            # lost the race; re-read and let advance_stage decide (StaleRide)

    def _finish_ride(self, ride: Ride) -> None:
        self.fleet.release_seats(ride.car_id, ride.request.seats)
        self.gateway.drop_track_state(ride.ride_id)
        self.dispatcher.clear_rider_active(ride.request.rider_id)
        self.dispatcher.on_car_freed(ride.car_id)

    def publish_location(self, session: Session, lat: float, lon: float, recorded_at: Optional[float]) -> bool:
        car_id = self._car_for(session)
        point = GeoPoint(lat, lon)
        at = recorded_at if recorded_at is not None else self.stamper.stamp()
        return self.gateway.publish_location(car_id, point, at)

    def track(self, session: Session, ride_id: str) -> dict:
        ride = self.get_ride(ride_id)
        account = self.accounts.get_account(session.account_id)
        is_rider = ride.request.rider_id == session.account_id
        is_driver = account is not None and account.car_id == ride.car_id
        if not (is_rider or is_driver):
            raise NotParticipant("only the ride's rider or driver may track it")
        if not ride.active:
            raise RideNotActive("ride is finished")
        car = self.fleet.get(ride.car_id)
        sample, route, meta = self.gateway.poll_location(ride, car.position)
        return {
            "ride_id": ride.ride_id,
            "stage": ride.stage.value,
            "pickup_status": ride.pickup_status.value,
            "dropoff_status": ride.dropoff_status.value,
            "sample": sample.to_dict() if sample else None,
            "route": route.to_dict(),
            "target": meta["target"],
            "route_version": meta["route_version"],
            "reroutes": meta["reroutes"],
            "poll_interval_ms": self.config.track_poll_ms,
        }

    def graph_payload(self) -> dict:
        return {
            "version": self.graph.version,
            "bbox": self.graph.bounding_box(),
            "nodes": [
                {"id": nid, "lat": p.lat, "lon": p.lon}
                for nid, p in sorted(self.graph.nodes.items())
            ],
            "edges": [
                {"from": f, "to": t, "length_m": l, "bidirectional": b}
                for f, t, l, b in self.graph.edges
            ],
            "places": self.places,
        }

    def close(self) -> None:
        self.store.close()


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


class PointBody(BaseModel):
    lat: float
    lon: float


class RegisterBody(BaseModel):
    university_id: str
    email: str
    first_name: str
    last_name: str
    phone: str
    password: str


class LoginBody(BaseModel):
    username: str
    password: str


class ReviewBody(BaseModel):
    account_id: str
    decision: str = Field(pattern="^(accept|reject)$")


class CarBody(BaseModel):
    car_id: str
    capacity: int
    password: Optional[str] = None
    at_node: Optional[str] = None


class ConfirmBody(BaseModel):
    pickup: PointBody
    dropoff: PointBody
    seats: int


class RequestRefBody(BaseModel):
    request_id: str


class StageBody(BaseModel):
    target: str


class LocationBody(BaseModel):
    lat: float
    lon: float
    recorded_at: Optional[float] = None


def _public_account(account: UserAccount) -> dict:
    doc = account.to_dict()
    doc.pop("password_digest")
    return doc


def create_app(system: RideSystem) -> FastAPI:
    app = FastAPI(title="campusride", docs_url=None, redoc_url=None)
    app.state.system = system
    # the browser console may be served from any static host
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=status_for(exc), content=exc.to_body())

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        errors = [
            {
                "field": ".".join(str(p) for p in err["loc"] if p != "body"),
                "message": err["msg"],
            }
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=422,
            content={"code": "invalid_request", "message": "request body failed validation", "errors": errors},
        )

    def current_session(request: Request) -> Session:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise Unauthenticated("missing bearer token")
        session = system.accounts.authenticate(header[7:].strip())
        if session is None:
            raise Unauthenticated("invalid or expired session")
        return session

    def require_role(session: Session, *roles: Role) -> Session:
        if session.role not in roles:
            raise Forbidden(f"requires role {' or '.join(r.value for r in roles)}")
        return session

    # -- accounts ----------------------------------------------------------

    @app.post("/register", status_code=201)
    def register(body: RegisterBody):
        account = system.accounts.register(
            university_id=body.university_id,
            email=body.email,
            first_name=body.first_name,
            last_name=body.last_name,
            phone=body.phone,
            password=body.password,
        )
        return {
            "university_id": account.university_id,
            "username": account.username,
            "approval": account.approval.value,
        }

    @app.post("/login")
    def login(body: LoginBody):
        session = system.accounts.login(body.username, body.password)
        account = system.accounts.get_account(session.account_id)
        return {
            "token": session.token,
            "account_id": session.account_id,
            "role": session.role.value,
            "username": account.username,
            "car_id": account.car_id,
            "expires_at": session.expires_at,
        }

    @app.get("/admin/pending")
    def admin_pending(session: Session = Depends(current_session)):
        require_role(session, Role.ADMIN)
        return {"accounts": [_public_account(a) for a in system.accounts.pending_accounts()]}

    @app.post("/admin/review")
    def admin_review(body: ReviewBody, session: Session = Depends(current_session)):
        require_role(session, Role.ADMIN)
        account, email = system.accounts.admin_review(body.account_id, body.decision == "accept")
        return {"account": _public_account(account), "email_queued": email.kind}

    @app.post("/admin/cars", status_code=201)
    def admin_provision_car(body: CarBody, session: Session = Depends(current_session)):
        require_role(session, Role.ADMIN)
        car, password = system.provision_car(
            body.car_id, body.capacity, body.password, body.at_node
        )
        return {"car": car, "driver_username": body.car_id, "password": password}

    @app.get("/admin/cars")
    def admin_list_cars(session: Session = Depends(current_session)):
        require_role(session, Role.ADMIN)
        return {"cars": [c.to_dict() for c in system.fleet.list()]}

    # -- riding --------------------------------------------------------------

    @app.post("/confirm-ride")
    def confirm_ride(body: ConfirmBody, session: Session = Depends(current_session)):
        require_role(session, Role.RIDER)
        return system.confirm_ride(session, body)

    @app.post("/accept-ride")
    def accept_ride(body: RequestRefBody, session: Session = Depends(current_session)):
        require_role(session, Role.DRIVER)
        ride = system.accept_ride(session, body.request_id)
        return {"ride_id": ride.ride_id, "stage": ride.stage.value}

    @app.post("/reject-ride")
    def reject_ride(body: RequestRefBody, session: Session = Depends(current_session)):
        require_role(session, Role.DRIVER)
        outcome = system.reject_ride(session, body.request_id)
        return {"status": outcome or "recorded"}

    @app.post("/rides/{ride_id}/stage")
    def post_stage(ride_id: str, body: StageBody, session: Session = Depends(current_session)):
        require_role(session, Role.DRIVER)
        try:
            target = RideStage(body.target)
        except ValueError:
            raise ValidationError([{"field": "target", "message": f"unknown stage {body.target!r}"}])
        ride = system.post_stage(session, ride_id, target)
        return ride.to_dict()

    @app.post("/location")
    def post_location(body: LocationBody, session: Session = Depends(current_session)):
        require_role(session, Role.DRIVER)
        stored = system.publish_location(session, body.lat, body.lon, body.recorded_at)
        return {"status": "ok", "stored": stored}

    @app.get("/rides/{ride_id}/track")
    def track(ride_id: str, session: Session = Depends(current_session)):
        require_role(session, Role.RIDER, Role.DRIVER)
        return system.track(session, ride_id)

    @app.get("/notifications")
    def notifications(session: Session = Depends(current_session)):
        require_role(session, Role.RIDER)
        return {"notifications": system.gateway.notifications_for(session.account_id)}

    @app.get("/route/preview")
    def route_preview(
        from_lat: float,
        from_lon: float,
        to_lat: float,
        to_lon: float,
        session: Session = Depends(current_session),
    ):
        return system.route_preview(GeoPoint(from_lat, from_lon), GeoPoint(to_lat, to_lon))

    @app.get("/graph")
    def graph(session: Session = Depends(current_session)):
        return system.graph_payload()

    @app.get("/config")
    def config(session: Session = Depends(current_session)):
        cfg = system.config
        return {
            "track_poll_ms": cfg.track_poll_ms,
            "track_publish_ms": cfg.track_publish_ms,
            "max_seats": cfg.max_seats,
            "reroute_threshold_m": cfg.reroute_threshold_m,
            "campus_speed_mps": cfg.campus_speed_mps,
        }

    # -- realtime channel ------------------------------------------------------

    @app.websocket("/events")
    async def events(ws: WebSocket):
        token = ws.query_params.get("token", "")
        session = system.accounts.authenticate(token) if token else None
        if session is None:
            await ws.close(code=4401)
            return
        account = system.accounts.get_account(session.account_id)
        if account is not None and account.role is Role.DRIVER and account.car_id:
            principal = car_principal(account.car_id)
        else:
            principal = rider_principal(session.account_id)
        await ws.accept()
        loop = asyncio.get_running_loop()
        outgoing: asyncio.Queue = asyncio.Queue()
        conn = system.gateway.attach(
            principal, lambda frame: loop.call_soon_threadsafe(outgoing.put_nowait, frame)
        )
        if principal.startswith("car:"):
            await asyncio.to_thread(system.dispatcher.on_driver_connected)

        async def pump_outgoing():
            while True:
                frame = await outgoing.get()
                await ws.send_bytes(frame)

        sender = asyncio.create_task(pump_outgoing())
        try:
            while True:
                data = await ws.receive_bytes()
                try:
                    envelope = decode_event(data)
                except MalformedFrame as exc:
                    logger.warning("dropping malformed frame from %s: %s", principal, exc.message)
                    continue
                if not conn.accept_incoming(envelope):
                    logger.warning("dropping non-monotone frame from %s", principal)
                    continue
                if envelope.type == "location-update" and principal.startswith("car:"):
                    payload = envelope.payload
                    try:
                        point = GeoPoint(float(payload["lat"]), float(payload["lon"]))
                    except (KeyError, TypeError, ValueError, GeoPointError):
                        continue
                    at = payload.get("recorded_at", envelope.sent_at)
                    await asyncio.to_thread(
                        system.gateway.publish_location, principal[4:], point, float(at)
                    )
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            system.gateway.detach(conn)

    return app


def build_system(config: Optional[Config] = None, **kwargs) -> RideSystem:
    return RideSystem(config or Config.from_env(), **kwargs)
