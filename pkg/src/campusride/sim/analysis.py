"""Pure transcript analyses: FIFO and exactly-once checks, the reroute
audit, metrics, and expectation evaluation for scenario files."""

from __future__ import annotations

import io
from typing import Optional

from ..domain import GeoPoint
from ..routing import Route, deviation_from_route


def assert_fifo(transcript) -> list[dict]:
    """Offers must go out in created_at order; returns the violating pairs."""
    offers = transcript.events(type="ride-request")
    violations = []
    for prev, cur in zip(offers, offers[1:]):
        a = prev["envelope"]["payload"]["created_at"]
        b = cur["envelope"]["payload"]["created_at"]
        if b < a:
            violations.append(
                {
                    "earlier_offer": prev["envelope"]["payload"]["request_id"],
                    "later_offer": cur["envelope"]["payload"]["request_id"],
                    "created_at": [a, b],
                }
            )
    return violations


def assert_exactly_once(transcript, type: str, to_prefix: str = "user:") -> list[dict]:
    """Each (key, type) pair must be delivered exactly once to its rider."""
    seen: dict[tuple, int] = {}
    for record in transcript.events(type=type, to_prefix=to_prefix):
        envelope = record["envelope"]
        key = (
            envelope.get("ride_id")
            or envelope["payload"].get("request_id")
            or envelope.get("to"),
            envelope["type"],
        )
        seen[key] = seen.get(key, 0) + 1
    return [
        {"key": list(k), "count": n} for k, n in sorted(seen.items()) if n != 1
    ]


def _track_polls(transcript) -> list[dict]:
    return [
        r
        for r in transcript.http(method="GET")
        if r["path"].endswith("/track") and r["status"] == 200
    ]


def reroute_audit(transcript, threshold_m: float) -> dict:
    """Recount reroutes from raw polls instead of trusting the counter.

    For consecutive polls of one ride with an unchanged leg target, a version
    bump must coincide with the polled sample deviating beyond the threshold
    from the previous route, and no bump with it staying within.
    """
    polls = _track_polls(transcript)
    by_ride: dict[str, list[dict]] = {}
    for record in polls:
        by_ride.setdefault(record["response"]["ride_id"], []).append(record)
    recount = 0
    violations = []
    server_count = 0
    for ride_id, records in sorted(by_ride.items()):
        server_count += max(r["response"]["reroutes"] for r in records)
        for prev, cur in zip(records, records[1:]):
            if prev["response"]["target"] != cur["response"]["target"]:
                continue
            bumped = cur["response"]["route_version"] > prev["response"]["route_version"]
            sample = cur["response"]["sample"]
            if sample is None:
                continue
            pos = GeoPoint(sample["point"]["lat"], sample["point"]["lon"])
            prev_route = Route.from_dict(prev["response"]["route"])
            deviation = deviation_from_route(pos, prev_route)
            if bumped:
                recount += 1
                if deviation <= threshold_m:
                    violations.append(
                        {"ride_id": ride_id, "why": "reroute without deviation",
                         "deviation_m": deviation}
                    )
            elif deviation > threshold_m:
                violations.append(
                    {"ride_id": ride_id, "why": "deviation without reroute",
                     "deviation_m": deviation}
                )
    return {"server_count": server_count, "recount": recount, "violations": violations}


def compute_metrics(transcript, threshold_m: float = 30.0) -> dict:
    """Wait-time and acceptance-latency statistics plus reroute count."""
    offered_at: dict[str, float] = {}
    created_at: dict[str, float] = {}
    accepted_at: dict[str, float] = {}
    for record in transcript.events(type="ride-request"):
        payload = record["envelope"]["payload"]
        rid = payload["request_id"]
        offered_at.setdefault(rid, record["envelope"]["sent_at"])
        created_at.setdefault(rid, payload["created_at"])
    for record in transcript.events(type="ride-accepted", to_prefix="user:"):
        payload = record["envelope"]["payload"]
        accepted_at.setdefault(payload["request_id"], record["envelope"]["sent_at"])

    waits = [accepted_at[r] - created_at[r] for r in accepted_at if r in created_at]
    latencies = [accepted_at[r] - offered_at[r] for r in accepted_at if r in offered_at]
    audit = reroute_audit(transcript, threshold_m)
    event_counts: dict[str, int] = {}
    for record in transcript.events():
        t = record["envelope"]["type"]
        event_counts[t] = event_counts.get(t, 0) + 1
    return {
        "requests_offered": len(offered_at),
        "rides_accepted": len(accepted_at),
        "wait_time": _stats(waits),
        "acceptance_latency": _stats(latencies),
        "reroutes": audit["recount"],
        "reroute_violations": len(audit["violations"]),
        "events": dict(sorted(event_counts.items())),
    }


def _stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": 0.0, "min": 0.0, "max": 0.0}
    return {
        "count": len(values),
        "mean": sum(values) / len(values),
        "min": min(values),
        "max": max(values),
    }


def metrics_to_csv(metrics: dict) -> str:
    out = io.StringIO()
    out.write("metric,value\n")
    out.write(f"requests_offered,{metrics['requests_offered']}\n")
    out.write(f"rides_accepted,{metrics['rides_accepted']}\n")
    for group in ("wait_time", "acceptance_latency"):
        for k, v in metrics[group].items():
            out.write(f"{group}_{k},{v}\n")
    out.write(f"reroutes,{metrics['reroutes']}\n")
    out.write(f"reroute_violations,{metrics['reroute_violations']}\n")
    for t, n in metrics["events"].items():
        out.write(f"events_{t},{n}\n")
    return out.getvalue()


def format_metrics(metrics: dict) -> str:
    lines = [
        f"requests offered:   {metrics['requests_offered']}",
        f"rides accepted:     {metrics['rides_accepted']}",
        "wait time (s):      mean {mean:.3f}  min {min:.3f}  max {max:.3f}  n={count}".format(
            **metrics["wait_time"]
        ),
        "accept latency (s): mean {mean:.3f}  min {min:.3f}  max {max:.3f}  n={count}".format(
            **metrics["acceptance_latency"]
        ),
        f"reroutes:           {metrics['reroutes']} (audit violations: {metrics['reroute_violations']})",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Scenario expectations
# ---------------------------------------------------------------------------


def evaluate_expectation(runner, expectation) -> dict:
    kind, args = expectation.kind, expectation.args
    transcript = runner.transcript
    ok, detail = False, ""

    if kind == "stage":
        target = args[0]
        rides = [doc for _, doc in runner.system.store.scan("rides")]
        bad = [r["ride_id"] for r in rides if r["stage"] != target]
        ok = bool(rides) and not bad
        detail = f"{len(rides)} rides, off-target: {bad}" if not ok else f"{len(rides)} rides at {target}"
    elif kind == "exactly-once":
        violations = assert_exactly_once(transcript, args[0])
        count = len(transcript.events(type=args[0], to_prefix="user:"))
        ok = not violations and count >= 1
        detail = f"count={count} violations={violations}"
    elif kind == "order":
        rider_events = [
            r["envelope"]["type"] for r in transcript.events(to_prefix="user:")
        ]
        firsts = []
        for t in args:
            firsts.append(rider_events.index(t) if t in rider_events else -1)
        ok = all(i >= 0 for i in firsts) and firsts == sorted(firsts)
        detail = f"first occurrences {dict(zip(args, firsts))}"
    elif kind == "fifo":
        violations = assert_fifo(transcript)
        ok = not violations
        detail = f"{len(violations)} inversions" + (f"; first: {violations[0]}" if violations else "")
    elif kind == "accepted-count":
        count = len(transcript.events(type="ride-accepted", to_prefix="user:"))
        ok = count == int(args[0])
        detail = f"accepted={count} expected={args[0]}"
    elif kind == "no-double-assignment":
        rides = [doc for _, doc in runner.system.store.scan("rides")]
        by_request: dict[str, int] = {}
        for r in rides:
            rid = r["request"]["request_id"]
            by_request[rid] = by_request.get(rid, 0) + 1
        dupes = {k: v for k, v in by_request.items() if v > 1}
        ok = not dupes
        detail = f"double-assigned: {dupes}" if dupes else f"{len(rides)} rides all unique"
    elif kind == "reroutes":
        audit = reroute_audit(transcript, runner.system.config.reroute_threshold_m)
        expected = int(args[0])
        ok = (
            audit["recount"] == expected
            and audit["server_count"] == expected
            and not audit["violations"]
        )
        detail = (
            f"recount={audit['recount']} server={audit['server_count']} "
            f"violations={audit['violations']}"
        )
    elif kind == "arrived":
        node, limit_m = args[0], float(args[1])
        target = runner.system.graph.nodes[node]
        drivers = [a for a in runner.actors.values() if a.role == "driver"]
        dists = {
            d.actor_id: deviation_m(d.position, target) for d in drivers if d.position
        }
        ok = bool(dists) and all(v <= limit_m for v in dists.values())
        detail = f"distances {dists}"
    elif kind == "outbox-count":
        count = len(runner.system.accounts.outbox_emails())
        ok = count == int(args[0])
        detail = f"outbox={count} expected={args[0]}"
    elif kind == "http-count":
        method, path, status, expected = args
        records = [
            r
            for r in transcript.http(method=method, path=path)
            if r["status"] == int(status)
        ]
        ok = len(records) == int(expected)
        detail = f"{method} {path} {status}: {len(records)} expected {expected}"
    else:
        detail = f"unknown expectation kind {kind!r}"

    return {"kind": kind, "args": list(args), "ok": ok, "detail": detail}


def deviation_m(pos: Optional[GeoPoint], target: GeoPoint) -> float:
    from ..routing import haversine_distance

    return haversine_distance(pos, target)
