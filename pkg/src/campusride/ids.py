"""Identifier generation.

Request and ride ids come from an injectable source so the simulation
harness can produce reproducible transcripts; production uses UUIDs.
"""

from __future__ import annotations

import itertools
import threading
import uuid


class IdSource:
    def new_request_id(self) -> str:
        raise NotImplementedError

    def new_ride_id(self) -> str:
        raise NotImplementedError


class UuidSource(IdSource):
    def new_request_id(self) -> str:
        return f"req-{uuid.uuid4()}"

    def new_ride_id(self) -> str:
        return f"ride-{uuid.uuid4()}"


class SequentialIdSource(IdSource):
    """Deterministic counters, one sequence per kind."""

    def __init__(self):
        self._req = itertools.count(1)
        self._ride = itertools.count(1)
        self._lock = threading.Lock()

    def new_request_id(self) -> str:
        with self._lock:
            return f"req-{next(self._req):06d}"

    def new_ride_id(self) -> str:
        with self._lock:
            return f"ride-{next(self._ride):06d}"
