"""Core domain types and the ride lifecycle state machine.

Types are immutable values; `advance_stage` returns a new Ride and the
service layer applies it with a compare-and-set keyed on the prior stage, so
concurrent duplicate transitions yield exactly one success.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .config import MAX_SEATS
from .errors import ServiceError, ValidationError


class GeoPointError(ServiceError):
    code = "invalid_geopoint"


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeoPointError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise GeoPointError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise GeoPointError(f"longitude {self.lon} outside [-180, 180]")

    def to_dict(self) -> dict:
        return {"lat": self.lat, "lon": self.lon}

    @staticmethod
    def from_dict(d: dict) -> "GeoPoint":
        return GeoPoint(float(d["lat"]), float(d["lon"]))


class RideStage(str, Enum):
    """The six lifecycle stages, reachable only in this linear order."""

    START_JOURNEY = "StartJourney"
    HEAD_TO_PICKUP = "HeadToPickup"
    I_HAVE_ARRIVED = "IHaveArrived"
    START_RIDE = "StartRide"
    END_RIDE = "EndRide"
    FINISHED = "Finished"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]

    @property
    def successor(self) -> Optional["RideStage"]:
        i = _STAGE_ORDER[self]
        return _STAGES[i + 1] if i + 1 < len(_STAGES) else None


_STAGES = list(RideStage)
_STAGE_ORDER = {s: i for i, s in enumerate(_STAGES)}


class LegStatus(str, Enum):
    PENDING = "pending"
    ENROUTE = "enroute"
    ARRIVED = "arrived"
    COMPLETED = "completed"


class Actor(str, Enum):
    """Who may drive a stage transition."""

    DRIVER = "driver"
    SYSTEM = "system"


class RequestState(str, Enum):
    QUEUED = "Queued"
    OFFERED = "Offered"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


class Approval(str, Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"


class Role(str, Enum):
    RIDER = "Rider"
    DRIVER = "Driver"
    ADMIN = "Admin"


# ---------------------------------------------------------------------------
# Leg status derivation
# ---------------------------------------------------------------------------

_LEG_TABLE = {
    RideStage.START_JOURNEY: (LegStatus.PENDING, LegStatus.PENDING),
    RideStage.HEAD_TO_PICKUP: (LegStatus.ENROUTE, LegStatus.PENDING),
    RideStage.I_HAVE_ARRIVED: (LegStatus.ARRIVED, LegStatus.PENDING),
    RideStage.START_RIDE: (LegStatus.COMPLETED, LegStatus.ENROUTE),
    RideStage.END_RIDE: (LegStatus.COMPLETED, LegStatus.COMPLETED),
    RideStage.FINISHED: (LegStatus.COMPLETED, LegStatus.COMPLETED),
}


def derive_leg_statuses(stage: RideStage) -> tuple[LegStatus, LegStatus]:
    """Return (pickup_status, dropoff_status) for a stage. Total, pure."""
    return _LEG_TABLE[stage]


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RideRequest:
    request_id: str
    rider_id: str
    pickup: GeoPoint
    dropoff: GeoPoint
    seats: int
    created_at: float
    state: RequestState = RequestState.QUEUED
    pickup_node: Optional[str] = None
    dropoff_node: Optional[str] = None

    def validate(self) -> None:
        """Raise ValidationError listing every violated field rule."""
        errors = []
        if not isinstance(self.seats, int) or self.seats < 1:
            errors.append({"field": "seats", "message": "seats must be at least 1"})
        elif self.seats > MAX_SEATS:
            errors.append({"field": "seats", "message": f"seats must be at most {MAX_SEATS}"})
        if self.pickup == self.dropoff:
            errors.append({"field": "dropoff", "message": "pickup and dropoff must differ"})
        if errors:
            raise ValidationError(errors)

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "rider_id": self.rider_id,
            "pickup": self.pickup.to_dict(),
            "dropoff": self.dropoff.to_dict(),
            "seats": self.seats,
            "created_at": self.created_at,
            "state": self.state.value,
            "pickup_node": self.pickup_node,
            "dropoff_node": self.dropoff_node,
        }

    @staticmethod
    def from_dict(d: dict) -> "RideRequest":
        return RideRequest(
            request_id=d["request_id"],
            rider_id=d["rider_id"],
            pickup=GeoPoint.from_dict(d["pickup"]),
            dropoff=GeoPoint.from_dict(d["dropoff"]),
            seats=d["seats"],
            created_at=d["created_at"],
            state=RequestState(d["state"]),
            pickup_node=d.get("pickup_node"),
            dropoff_node=d.get("dropoff_node"),
        )


@dataclass(frozen=True)
class Ride:
    ride_id: str
    request: RideRequest
    car_id: str
    stage: RideStage
    pickup_status: LegStatus
    dropoff_status: LegStatus
    history: tuple[tuple[RideStage, float], ...] = ()

    @staticmethod
    def create(ride_id: str, request: RideRequest, car_id: str, at: float) -> "Ride":
        pickup, dropoff = derive_leg_statuses(RideStage.START_JOURNEY)
        return Ride(
            ride_id=ride_id,
            request=request,
            car_id=car_id,
            stage=RideStage.START_JOURNEY,
            pickup_status=pickup,
            dropoff_status=dropoff,
            history=((RideStage.START_JOURNEY, at),),
        )

    @property
    def active(self) -> bool:
        return self.stage is not RideStage.FINISHED

    def check_invariants(self) -> None:
        assert (self.pickup_status, self.dropoff_status) == derive_leg_statuses(self.stage)
        for (s1, t1), (s2, t2) in zip(self.history, self.history[1:]):
            assert t2 > t1, "history timestamps must strictly increase"
            assert s2.order > s1.order, "history stages must strictly increase"

    def to_dict(self) -> dict:
        return {
            "ride_id": self.ride_id,
            "request": self.request.to_dict(),
            "car_id": self.car_id,
            "stage": self.stage.value,
            "pickup_status": self.pickup_status.value,
            "dropoff_status": self.dropoff_status.value,
            "history": [[s.value, t] for s, t in self.history],
        }

    @staticmethod
    def from_dict(d: dict) -> "Ride":
        return Ride(
            ride_id=d["ride_id"],
            request=RideRequest.from_dict(d["request"]),
            car_id=d["car_id"],
            stage=RideStage(d["stage"]),
            pickup_status=LegStatus(d["pickup_status"]),
            dropoff_status=LegStatus(d["dropoff_status"]),
            history=tuple((RideStage(s), t) for s, t in d["history"]),
        )


@dataclass(frozen=True)
class CarAgent:
    car_id: str
    capacity: int
    seats_available: int
    available: bool
    position: GeoPoint
    position_updated_at: float

    def __post_init__(self):
        if self.capacity < 1:
            raise ValidationError([{"field": "capacity", "message": "capacity must be positive"}])
        if not 0 <= self.seats_available <= self.capacity:
            raise ValidationError(
                [{"field": "seats_available", "message": "seats_available outside [0, capacity]"}]
            )

    def to_dict(self) -> dict:
        return {
            "car_id": self.car_id,
            "capacity": self.capacity,
            "seats_available": self.seats_available,
            "available": self.available,
            "position": self.position.to_dict(),
            "position_updated_at": self.position_updated_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "CarAgent":
        return CarAgent(
            car_id=d["car_id"],
            capacity=d["capacity"],
            seats_available=d["seats_available"],
            available=d["available"],
            position=GeoPoint.from_dict(d["position"]),
            position_updated_at=d["position_updated_at"],
        )


@dataclass(frozen=True)
class UserAccount:
    university_id: str
    email: str
    first_name: str
    last_name: str
    phone: str
    username: str
    password_digest: str
    approval: Approval = Approval.PENDING
    role: Role = Role.RIDER
    car_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "university_id": self.university_id,
            "email": self.email,
            "first_name": self.first_name,
            "last_name": self.last_name,
            "phone": self.phone,
            "username": self.username,
            "password_digest": self.password_digest,
            "approval": self.approval.value,
            "role": self.role.value,
            "car_id": self.car_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "UserAccount":
        return UserAccount(
            university_id=d["university_id"],
            email=d["email"],
            first_name=d["first_name"],
            last_name=d["last_name"],
            phone=d["phone"],
            username=d["username"],
            password_digest=d["password_digest"],
            approval=Approval(d["approval"]),
            role=Role(d["role"]),
            car_id=d.get("car_id"),
        )


# ---------------------------------------------------------------------------
# Stage machine
# ---------------------------------------------------------------------------


class IllegalTransition(ServiceError):
    code = "illegal_transition"


class WrongActor(ServiceError):
    code = "wrong_actor"


class StaleRide(ServiceError):
    code = "stale_ride"


def required_actor(target: RideStage) -> Actor:
    """EndRide -> Finished happens automatically; everything else is manual."""
    return Actor.SYSTEM if target is RideStage.FINISHED else Actor.DRIVER


def advance_stage(ride: Ride, actor: Actor, target: RideStage, at: float) -> Ride:
    """Move a ride to the next stage, returning the updated value.

    Raises StaleRide when the ride is already at or past the target,
    IllegalTransition when the target skips ahead, and WrongActor when the
    wrong party attempts the transition.
    """
    if target.order <= ride.stage.order:
        raise StaleRide(f"ride already at or past {target.value}")
    if ride.stage.successor is not target:
        raise IllegalTransition(f"cannot go from {ride.stage.value} to {target.value}")
    needed = required_actor(target)
    if actor is not needed:
        raise WrongActor(f"{target.value} transition requires {needed.value}")
    last_ts = ride.history[-1][1] if ride.history else float("-inf")
    if at <= last_ts:
        raise StaleRide("transition timestamp not after last history entry")
    pickup, dropoff = derive_leg_statuses(target)
    return replace(
        ride,
        stage=target,
        pickup_status=pickup,
        dropoff_status=dropoff,
        history=ride.history + ((target, at),),
    )
