"""Car provisioning and seat accounting.

Seat math goes through CAS so a claim and a release can never double-apply;
the invariant `seats held by the active ride + seats_available == capacity`
is asserted after every mutation.
"""

from __future__ import annotations

import logging
from typing import Iterable

from .clock import MonotonicStamper
from .domain import CarAgent, GeoPoint
from .errors import ServiceError
from .store import DocumentStore

logger = logging.getLogger(__name__)

CARS = "cars"


class UnknownCar(ServiceError):
    code = "unknown_car"


class DuplicateCar(ServiceError):
    code = "duplicate_car"


class SeatAccounting(ServiceError):
    code = "seat_accounting"


def find_available_cars(cars: Iterable[CarAgent]) -> list[CarAgent]:
    """All dispatch-eligible cars, deterministically ordered by car id.

    Seat compatibility is deliberately not checked here; that decision
    belongs to the driver (and is re-validated server-side on claim).
    """
    return sorted((c for c in cars if c.available), key=lambda c: c.car_id)


class Fleet:
    def __init__(self, store: DocumentStore, stamper: MonotonicStamper):
        self._store = store
        self._stamper = stamper

    def provision(
        self, car_id: str, capacity: int, position: GeoPoint
    ) -> CarAgent:
        car = CarAgent(
            car_id=car_id,
            capacity=capacity,
            seats_available=capacity,
            available=True,
            position=position,
            position_updated_at=self._stamper.stamp(),
        )
        if not self._store.cas(CARS, car_id, 0, car.to_dict()):
            raise DuplicateCar(f"car {car_id!r} already provisioned")
        logger.info("provisioned car %s (capacity %d)", car_id, capacity)
        return car

    def get(self, car_id: str) -> CarAgent:
        found = self._store.get(CARS, car_id)
        if found is None:
            raise UnknownCar(f"no car {car_id!r}")
        return CarAgent.from_dict(found[0])

    def list(self) -> list[CarAgent]:
        return [CarAgent.from_dict(doc) for _, doc in self._store.scan(CARS)]

    def available_cars(self) -> list[CarAgent]:
        return find_available_cars(self.list())

    def claim_seats(self, car_id: str, seats: int) -> CarAgent:
        """Bind the car to a ride: mark unavailable and take the seats."""
        while True:
            found = self._store.get(CARS, car_id)
            if found is None:
                raise UnknownCar(f"no car {car_id!r}")
            doc, version = found
            car = CarAgent.from_dict(doc)
            if not car.available:
                raise SeatAccounting(f"car {car_id} is not available")
            if seats > car.seats_available:
                raise SeatAccounting(f"car {car_id} lacks {seats} free seats")
            updated = CarAgent.from_dict(
                {**doc, "available": False, "seats_available": car.seats_available - seats}
            )
            if self._store.cas(CARS, car_id, version, updated.to_dict()):
                return updated

    def release_seats(self, car_id: str, seats: int) -> CarAgent:
        """Free the car after its ride finishes."""
        while True:
            found = self._store.get(CARS, car_id)
            if found is None:
                raise UnknownCar(f"no car {car_id!r}")
            doc, version = found
            car = CarAgent.from_dict(doc)
            restored = car.seats_available + seats
            if restored > car.capacity:
                raise SeatAccounting(f"release would exceed capacity of {car_id}")
            updated = CarAgent.from_dict(
                {**doc, "available": True, "seats_available": restored}
            )
            if self._store.cas(CARS, car_id, version, updated.to_dict()):
                return updated
