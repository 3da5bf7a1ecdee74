"""Service configuration.

All tunables live here with their defaults; `Config.from_env` reads the
documented environment variables so `campusride serve` can be configured
without flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

MAX_SEATS = 4                 # per-request seat cap
CAMPUS_SPEED_MPS = 5.0        # assumed vehicle speed for ETA, meters/second
SNAP_RADIUS_M = 500.0         # max pin-to-node distance before SnapTooFar
REROUTE_THRESHOLD_M = 30.0    # deviation from route polyline that triggers a reroute
OFFER_TIMEOUT_S = 30.0        # unanswered offers expire after this long
TRACK_PUBLISH_MS = 1000       # driver-side GPS publish cadence
TRACK_POLL_MS = 2000          # rider-side tracking poll cadence
SESSION_TTL_S = 24 * 3600     # session lifetime, renewed on use


def default_graph_path() -> str:
    return str(resources.files("campusride.data") / "campus_graph.txt")


def default_places_path() -> str:
    return str(resources.files("campusride.data") / "campus_places.json")


@dataclass
class Config:
    bind_addr: str = "127.0.0.1:8000"
    graph_file: str = field(default_factory=default_graph_path)
    places_file: str = field(default_factory=default_places_path)
    store_path: Optional[str] = None        # None = in-memory only
    outbox_dir: Optional[str] = None        # None = no file sink, store only
    routing_api_url: Optional[str] = None   # external directions API, optional
    routing_api_key: Optional[str] = None
    offer_timeout_s: float = OFFER_TIMEOUT_S
    campus_speed_mps: float = CAMPUS_SPEED_MPS
    snap_radius_m: float = SNAP_RADIUS_M
    reroute_threshold_m: float = REROUTE_THRESHOLD_M
    track_publish_ms: int = TRACK_PUBLISH_MS
    track_poll_ms: int = TRACK_POLL_MS
    max_seats: int = MAX_SEATS
    session_ttl_s: float = SESSION_TTL_S

    @classmethod
    def from_env(cls, env: Optional[dict] = None) -> "Config":
        env = os.environ if env is None else env
        cfg = cls()
        cfg.bind_addr = env.get("BIND_ADDR", cfg.bind_addr)
        cfg.graph_file = env.get("GRAPH_FILE", cfg.graph_file)
        cfg.places_file = env.get("PLACES_FILE", cfg.places_file)
        cfg.store_path = env.get("STORE_PATH", cfg.store_path)
        cfg.outbox_dir = env.get("OUTBOX_DIR", cfg.outbox_dir)
        cfg.routing_api_url = env.get("ROUTING_API_URL", cfg.routing_api_url)
        cfg.routing_api_key = env.get("ROUTING_API_KEY", cfg.routing_api_key)
        if "OFFER_TIMEOUT_S" in env:
            cfg.offer_timeout_s = float(env["OFFER_TIMEOUT_S"])
        if "CAMPUS_SPEED_MPS" in env:
            cfg.campus_speed_mps = float(env["CAMPUS_SPEED_MPS"])
        if "SNAP_RADIUS_M" in env:
            cfg.snap_radius_m = float(env["SNAP_RADIUS_M"])
        if "REROUTE_THRESHOLD_M" in env:
            cfg.reroute_threshold_m = float(env["REROUTE_THRESHOLD_M"])
        if "TRACK_PUBLISH_MS" in env:
            cfg.track_publish_ms = int(env["TRACK_PUBLISH_MS"])
        if "TRACK_POLL_MS" in env:
            cfg.track_poll_ms = int(env["TRACK_POLL_MS"])
        return cfg
