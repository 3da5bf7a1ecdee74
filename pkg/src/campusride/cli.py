"""Command-line entry points: serve, provisioning, graph checks, and the
simulation runner."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time

from .config import Config
from .errors import ServiceError
from .routing import GraphError, load_graph
from .service import build_system, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="campusride")
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="run the HTTP + realtime service")
    serve_p.add_argument("--bind", default=None, help="host:port (default from BIND_ADDR)")

    admin_p = sub.add_parser("admin", help="administrative commands")
    admin_sub = admin_p.add_subparsers(dest="admin_command", required=True)
    bootstrap_p = admin_sub.add_parser("bootstrap", help="create an admin login")
    bootstrap_p.add_argument("--username", required=True)
    bootstrap_p.add_argument("--password", required=True)

    car_p = sub.add_parser("car", help="fleet commands")
    car_sub = car_p.add_subparsers(dest="car_command", required=True)
    provision_p = car_sub.add_parser("provision", help="create a car and its driver login")
    provision_p.add_argument("--id", required=True)
    provision_p.add_argument("--capacity", type=int, required=True)
    provision_p.add_argument("--password", default=None)
    provision_p.add_argument("--at-node", default=None)

    graph_p = sub.add_parser("graph", help="road-graph tools")
    graph_sub = graph_p.add_subparsers(dest="graph_command", required=True)
    validate_p = graph_sub.add_parser("validate", help="check a graph fixture file")
    validate_p.add_argument("file")

    sim_p = sub.add_parser("sim", help="deterministic scenario runner")
    sim_sub = sim_p.add_subparsers(dest="sim_command", required=True)
    run_p = sim_sub.add_parser("run", help="run a scenario")
    run_p.add_argument("scenario", help="bundled name or path to a .scenario file")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--csv", default=None, help="write metrics CSV here")
    run_p.add_argument("--transcript", default=None, help="write the JSONL transcript here")
    sim_sub.add_parser("list", help="list bundled scenarios")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        return _dispatch(args)
    except ServiceError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "serve":
        return _serve(args)
    if args.command == "admin":
        system = build_system()
        account = system.bootstrap_admin(args.username, args.password)
        system.close()
        print(f"admin account ready: username={account.username}")
        return 0
    if args.command == "car":
        system = build_system()
        car, password = system.provision_car(
            args.id, args.capacity, password=args.password, at_node=args.at_node
        )
        system.close()
        print(f"car {car['car_id']} provisioned (capacity {car['capacity']})")
        print(f"driver login: username={args.id} password={password}")
        return 0
    if args.command == "graph":
        return _graph_validate(args.file)
    if args.command == "sim":
        return _sim(args)
    return 2


def _serve(args) -> int:
    import uvicorn

    config = Config.from_env()
    if args.bind:
        config.bind_addr = args.bind
    host, _, port = config.bind_addr.rpartition(":")
    system = build_system(config)
    app = create_app(system)

    def tick_offers():
        while True:
            time.sleep(1.0)
            system.dispatcher.expire_offers(system.clock.now())

    threading.Thread(target=tick_offers, daemon=True).start()
    # access logs are disabled: websocket URLs carry session tokens
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), access_log=False)
    return 0


def _graph_validate(path: str) -> int:
    try:
        graph = load_graph(path)
    except (GraphError, OSError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    bbox = graph.bounding_box()
    print(f"ok: {len(graph.nodes)} nodes, {len(graph.edges)} edges, connected")
    print(
        "bbox: lat [{min_lat:.6f}, {max_lat:.6f}] lon [{min_lon:.6f}, {max_lon:.6f}]".format(**bbox)
    )
    return 0


def _sim(args) -> int:
    from .sim import (
        compute_metrics,
        list_bundled,
        load_scenario,
        run_scenario,
    )
    from .sim.analysis import format_metrics, metrics_to_csv

    if args.sim_command == "list":
        for name in list_bundled():
            print(name)
        return 0

    scenario = load_scenario(args.scenario)
    transcript, results = run_scenario(scenario, seed=args.seed)
    all_ok = True
    for r in results:
        status = "PASS" if r["ok"] else "FAIL"
        all_ok &= r["ok"]
        print(f"{status}  {r['kind']} {' '.join(r['args'])}  [{r['detail']}]")
    metrics = compute_metrics(transcript)
    print()
    print(format_metrics(metrics))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(metrics_to_csv(metrics))
        print(f"metrics written to {args.csv}")
    if args.transcript:
        with open(args.transcript, "w", encoding="utf-8") as fh:
            fh.write(transcript.to_jsonl())
        print(f"transcript written to {args.transcript}")
    if not all_ok:
        failing = next(r for r in results if not r["ok"])
        print(f"\nscenario failed on: {failing['kind']} {' '.join(failing['args'])}", file=sys.stderr)
        _print_excerpt(transcript)
        return 1
    return 0


def _print_excerpt(transcript, n: int = 10) -> None:
    print(f"last {n} transcript records:", file=sys.stderr)
    for record in transcript.records[-n:]:
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
