"""FIFO dispatch: queueing, broadcast offers, and atomic claims.

The dispatcher is the single serialized decision point. Offers are issued
strictly in created_at order (ties by request id); a request is only
broadcast when every earlier unresolved request has been broadcast first,
and a car holding an unanswered offer receives no further offers, which
keeps the offer stream monotone in creation order. Exactly one car ever
wins a request; later claims fail with AlreadyClaimed.
"""

from __future__ import annotations

import logging
import threading
from enum import Enum
from typing import Optional

from .clock import MonotonicStamper
from .config import Config
from .domain import CarAgent, GeoPoint, RequestState, Ride, RideRequest
from .errors import ServiceError
from .fleet import Fleet, SeatAccounting
from .ids import IdSource
from .protocol import Gateway
from .store import DocumentStore

logger = logging.getLogger(__name__)

REQUESTS = "requests"
RIDES = "rides"


class DuplicateRequest(ServiceError):
    code = "duplicate_request"


class UnknownRequest(ServiceError):
    code = "unknown_request"


class AlreadyClaimed(ServiceError):
    code = "already_claimed"


class SeatMismatch(ServiceError):
    code = "seat_mismatch"


class NotOffered(ServiceError):
    code = "not_offered"


class RiderBusy(ServiceError):
    code = "rider_busy"


class Acceptance(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


def evaluate_acceptance(car: CarAgent, req: RideRequest) -> Acceptance:
    """Seat-compatibility rule shared by driver consoles and the server."""
    return Acceptance.ACCEPT if req.seats <= car.seats_available else Acceptance.REJECT


class _Offer:
    __slots__ = ("offered", "rejected", "deadline")

    def __init__(self, offered: set[str], deadline: float):
        self.offered = offered
        self.rejected: set[str] = set()
        self.deadline = deadline

    def remaining(self) -> set[str]:
        return self.offered - self.rejected


class Dispatcher:
    def __init__(
        self,
        store: DocumentStore,
        stamper: MonotonicStamper,
        ids: IdSource,
        fleet: Fleet,
        gateway: Gateway,
        config: Config,
    ):
        self._store = store
        self._stamper = stamper
        self._ids = ids
        self._fleet = fleet
        self._gateway = gateway
        self._config = config
        self._lock = threading.RLock()
        self._queue: dict[str, RideRequest] = {}
        self._offers: dict[str, _Offer] = {}
        self._rider_active: dict[str, tuple[str, str]] = {}  # rider -> (kind, id)
        self._rehydrate()

    def _rehydrate(self) -> None:
        """Rebuild queue and activity indexes after a restart.

        In-flight offers do not survive a crash; their requests return to the
        queue and are re-broadcast when drivers reconnect.
        """
        for key, doc in self._store.scan(REQUESTS):
            req = RideRequest.from_dict(doc)
            if req.state in (RequestState.QUEUED, RequestState.OFFERED):
                req = self._set_state(req, RequestState.QUEUED)
                self._queue[req.request_id] = req
                self._rider_active[req.rider_id] = ("request", req.request_id)
        for key, doc in self._store.scan(RIDES):
            ride = Ride.from_dict(doc)
            if ride.active:
                self._rider_active[ride.request.rider_id] = ("ride", ride.ride_id)

    # -- helpers -------------------------------------------------------------

    def _set_state(self, req: RideRequest, state: RequestState, **extra) -> RideRequest:
        updated = RideRequest.from_dict({**req.to_dict(), "state": state.value, **extra})
        self._store.put(REQUESTS, req.request_id, updated.to_dict())
        return updated

    def _ordered_queue(self) -> list[RideRequest]:
        return sorted(self._queue.values(), key=lambda r: (r.created_at, r.request_id))

    def _offer_locked_cars(self) -> set[str]:
        locked: set[str] = set()
        for offer in self._offers.values():
            locked |= offer.remaining()
        return locked

    # -- operations ----------------------------------------------------------

    def enqueue_request(
        self,
        rider_id: str,
        pickup: GeoPoint,
        dropoff: GeoPoint,
        seats: int,
        pickup_node: str,
        dropoff_node: str,
    ) -> tuple[RideRequest, int]:
        """Validate, persist, and queue a request; returns its 0-based rank."""
        with self._lock:
            active = self._rider_active.get(rider_id)
            if active is not None:
                raise RiderBusy(f"rider already has an active {active[0]}")
            request_id = self._ids.new_request_id()
            if self._store.get(REQUESTS, request_id) is not None:
                raise DuplicateRequest(f"request {request_id!r} already known")
            req = RideRequest(
                request_id=request_id,
                rider_id=rider_id,
                pickup=pickup,
                dropoff=dropoff,
                seats=seats,
                created_at=self._stamper.stamp(),
                state=RequestState.QUEUED,
                pickup_node=pickup_node,
                dropoff_node=dropoff_node,
            )
            req.validate()
            self._store.put(REQUESTS, request_id, req.to_dict())
            self._queue[request_id] = req
            self._rider_active[rider_id] = ("request", request_id)
            position = [r.request_id for r in self._ordered_queue()].index(request_id)
            logger.info("request %s queued at position %d", request_id, position)
            self._pump()
            current = self._store.get(REQUESTS, request_id)
            return RideRequest.from_dict(current[0]), position

    def claim_request(self, request_id: str, car_id: str) -> Ride:
        """First valid claim wins; the claim, seat debit, and ride creation
        are one atomic step under the dispatch lock."""
        with self._lock:
            found = self._store.get(REQUESTS, request_id)
            if found is None:
                raise UnknownRequest(f"no request {request_id!r}")
            req = RideRequest.from_dict(found[0])
            if req.state is RequestState.ACCEPTED:
                raise AlreadyClaimed("another car already won this request")
            if req.state is RequestState.REJECTED:
                raise UnknownRequest("request is no longer open")
            offer = self._offers.get(request_id)
            if offer is None or req.state is not RequestState.OFFERED:
                raise NotOffered("request was not offered yet")
            if car_id not in offer.offered:
                raise NotOffered("this car was not offered the request")
            if car_id in offer.rejected:
                raise NotOffered("this car already rejected the request")
            car = self._fleet.get(car_id)
            if evaluate_acceptance(car, req) is Acceptance.REJECT:
                # server-side re-validation failed; counts as this car's rejection
                self._record_rejection(req, offer, car_id)
                raise SeatMismatch(
                    f"car has {car.seats_available} seats free, request needs {req.seats}"
                )
            try:
                self._fleet.claim_seats(car_id, req.seats)
            except SeatAccounting as exc:
                raise SeatMismatch(str(exc)) from exc
            req = self._set_state(req, RequestState.ACCEPTED)
            ride = Ride.create(
                self._ids.new_ride_id(), req, car_id, at=self._stamper.stamp()
            )
            self._store.cas(RIDES, ride.ride_id, 0, ride.to_dict())
            del self._queue[request_id]
            losers = sorted(offer.remaining() - {car_id})
            del self._offers[request_id]
            self._rider_active[req.rider_id] = ("ride", ride.ride_id)
            logger.info("request %s claimed by car %s as %s", request_id, car_id, ride.ride_id)
            self._gateway.emit_to_rider(
                req.rider_id,
                "ride-accepted",
                ride.ride_id,
                key_id=request_id,
                payload={"ride_id": ride.ride_id, "request_id": request_id, "car_id": car_id},
            )
            if losers:
                self._gateway.retract_offer(request_id, losers)
            self._pump()
            return ride

    def reject_request(self, request_id: str, car_id: str) -> Optional[str]:
        """Record one car's rejection; returns "rejected" once the outcome is
        terminal for the rider, None while other cars may still answer."""
        with self._lock:
            found = self._store.get(REQUESTS, request_id)
            if found is None:
                raise UnknownRequest(f"no request {request_id!r}")
            req = RideRequest.from_dict(found[0])
            if req.state is RequestState.ACCEPTED:
                raise AlreadyClaimed("another car already won this request")
            if req.state is RequestState.REJECTED:
                raise UnknownRequest("request is no longer open")
            offer = self._offers.get(request_id)
            if offer is None:
                raise NotOffered("request was not offered yet")
            if car_id not in offer.offered:
                raise NotOffered("this car was not offered the request")
            terminal = self._record_rejection(req, offer, car_id)
            self._pump()
            return "rejected" if terminal else None

    def _record_rejection(self, req: RideRequest, offer: _Offer, car_id: str) -> bool:
        offer.rejected.add(car_id)
        logger.info("car %s rejected request %s", car_id, req.request_id)
        if offer.remaining():
            return False
        self._resolve_rejected(req, reason="rejected")
        return True

    def _resolve_rejected(self, req: RideRequest, reason: str) -> None:
        self._set_state(req, RequestState.REJECTED)
        self._queue.pop(req.request_id, None)
        self._offers.pop(req.request_id, None)
        self._rider_active.pop(req.rider_id, None)
        self._gateway.emit_to_rider(
            req.rider_id,
            "ride-rejected",
            None,
            key_id=req.request_id,
            payload={"request_id": req.request_id, "reason": reason},
        )

    def _resolve_no_cars(self, req: RideRequest) -> None:
        self._set_state(req, RequestState.REJECTED)
        self._queue.pop(req.request_id, None)
        self._rider_active.pop(req.rider_id, None)
        self._gateway.emit_to_rider(
            req.rider_id,
            "no-cars-available",
            None,
            key_id=req.request_id,
            payload={"request_id": req.request_id},
        )

    def expire_offers(self, now: float) -> int:
        """Time out unanswered offers; the request resolves as rejected."""
        with self._lock:
            expired = [
                rid for rid, offer in self._offers.items() if now >= offer.deadline
            ]
            for rid in expired:
                req = self._queue.get(rid)
                if req is not None:
                    logger.info("offer for %s timed out", rid)
                    self._resolve_rejected(req, reason="timeout")
            if expired:
                self._pump()
            return len(expired)

    def on_car_freed(self, car_id: str) -> None:
        with self._lock:
            self._pump()

    def on_driver_connected(self) -> None:
        with self._lock:
            self._pump()

    # -- the pump ------------------------------------------------------------

    def _pump(self) -> None:
        """Broadcast offers for queued requests, oldest first.

        Stops at the first request that cannot be broadcast: offering a later
        request while an earlier one waits would invert the FIFO order.
        """
        fleet_empty = not self._fleet.list()
        for req in self._ordered_queue():
            if req.state is RequestState.OFFERED:
                continue
            if fleet_empty:
                self._resolve_no_cars(req)
                continue
            locked = self._offer_locked_cars()
            eligible = [
                car.car_id
                for car in self._fleet.available_cars()
                if car.car_id not in locked
            ]
            if not eligible:
                break
            delivered = self._gateway.offer_ride(req, eligible)
            if not delivered:
                break  # no live driver connections; wait for one
            updated = self._set_state(req, RequestState.OFFERED)
            self._queue[req.request_id] = updated
            self._offers[req.request_id] = _Offer(
                offered=set(delivered),
                deadline=self._stamper.stamp() + self._config.offer_timeout_s,
            )
            logger.info("request %s offered to %s", req.request_id, sorted(delivered))

    # -- introspection ---------------------------------------------------------

    def active_for_rider(self, rider_id: str) -> Optional[tuple[str, str]]:
        with self._lock:
            return self._rider_active.get(rider_id)

    def clear_rider_active(self, rider_id: str) -> None:
        with self._lock:
            self._rider_active.pop(rider_id, None)

    def queue_snapshot(self) -> list[dict]:
        with self._lock:
            return [r.to_dict() for r in self._ordered_queue()]

    def offered_cars(self, request_id: str) -> set[str]:
        with self._lock:
            offer = self._offers.get(request_id)
            return set(offer.remaining()) if offer else set()

    def check_invariants(self) -> None:
        """Test hook: FIFO ordering, exactly-once assignment, seat balance."""
        with self._lock:
            ordered = self._ordered_queue()
            ats = [r.created_at for r in ordered]
            assert ats == sorted(ats)
            rides = [Ride.from_dict(doc) for _, doc in self._store.scan(RIDES)]
            by_request: dict[str, int] = {}
            for ride in rides:
                by_request[ride.request.request_id] = (
                    by_request.get(ride.request.request_id, 0) + 1
                )
            assert all(n == 1 for n in by_request.values()), "request assigned twice"
            held: dict[str, int] = {}
            for ride in rides:
                if ride.active:
                    held[ride.car_id] = held.get(ride.car_id, 0) + ride.request.seats
            for car in self._fleet.list():
                assert held.get(car.car_id, 0) + car.seats_available == car.capacity, (
                    f"seat conservation violated for {car.car_id}"
                )
