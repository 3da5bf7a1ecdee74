"""Injectable time sources.

The service never calls time.time() directly; every timestamp comes from a
Clock handed in at construction. The simulation harness swaps in a
VirtualClock so timeout- and cadence-dependent behavior runs instantly and
deterministically.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Time source interface. now() returns epoch seconds as a float."""

    def now(self) -> float:
        raise NotImplementedError


class SystemClock(Clock):
    """Wall-clock time."""

    def now(self) -> float:
        return time.time()


class VirtualClock(Clock):
    """Manually advanced clock. Time moves only when advance() is called."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("cannot move time backwards")
        self._now += seconds
        return self._now


class MonotonicStamper:
    """Issues strictly increasing timestamps from an underlying clock.

    Ride history and FIFO ordering require strict timestamp order even when
    several stamps are taken within one virtual-clock instant; successive
    stamps at the same clock reading are nudged forward by a microsecond.
    """

    _STEP = 1e-6

    def __init__(self, clock: Clock):
        self._clock = clock
        self._last = float("-inf")
        self._lock = threading.Lock()

    def stamp(self) -> float:
        with self._lock:
            t = self._clock.now()
            if t <= self._last:
                t = self._last + self._STEP
            self._last = t
            return t
