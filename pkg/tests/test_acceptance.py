"""Acceptance criteria, one test per criterion.

Each test prints `ACCEPTANCE <criterion>: PASS|FAIL` (run with -s to stream
them). Tolerances are pinned here and nowhere else.
"""

import asyncio
import contextlib
import math
import random
import threading
import time

import httpx
import pytest
from fastapi.testclient import TestClient

from campusride.clock import VirtualClock
from campusride.domain import GeoPoint, RideStage
from campusride.routing import haversine_distance, shortest_route
from campusride.service import create_app
from campusride.sim import (
    assert_exactly_once,
    assert_fifo,
    load_scenario,
    run_scenario,
)
from campusride.store import FileStore, SqliteStore

from conftest import Api, Sink, make_system
from test_routing import brute_force_min_cost, random_graph


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL")
        raise
    else:
        print(f"\nACCEPTANCE {name}: PASS")


class TestFullRide:
    def test_full_ride_scenario(self):
        with criterion("full-ride"):
            started = time.monotonic()
            transcript, results = run_scenario(load_scenario("full_ride"), seed=0)
            elapsed = time.monotonic() - started
            failures = [r for r in results if not r["ok"]]
            assert not failures, failures
            # events exactly once and in order
            for type in ("ride-accepted", "driver-arrived", "ride-ended"):
                assert assert_exactly_once(transcript, type) == []
            rider_events = [
                r["envelope"]["type"] for r in transcript.events(to_prefix="user:")
            ]
            idx = [rider_events.index(t) for t in
                   ("ride-accepted", "driver-arrived", "ride-ended")]
            assert idx == sorted(idx)
            assert elapsed < 5.0, f"took {elapsed:.2f}s (limit 5s)"


class TestFifoHundred:
    def test_fifo_100_twenty_seeds(self):
        with criterion("fifo-100-x20-seeds"):
            scenario = load_scenario("fifo_100")
            for seed in range(20):
                transcript, results = run_scenario(scenario, seed=seed)
                failures = [r for r in results if not r["ok"]]
                assert not failures, f"seed {seed}: {failures}"
                assert assert_fifo(transcript) == [], f"seed {seed}: inversion"


class TestRaceSafety:
    TRIALS = 1000

    def test_simultaneous_claims(self, tmp_path, vclock):
        with criterion("race-safety-1000-trials"):
            system = make_system(tmp_path, vclock)
            app = create_app(system)
            client = TestClient(app)
            api = Api(client, system)
            admin = api.admin_token()
            rider = api.approved_rider(admin)
            d1 = api.provision_car(admin, car_id="car-1", at_node="a")
            d2 = api.provision_car(admin, car_id="car-2", at_node="a")
            for car in ("car-1", "car-2"):
                system.gateway.attach(f"car:{car}", Sink())
            system.dispatcher.on_driver_connected()

            loop = asyncio.new_event_loop()
            transport = httpx.ASGITransport(app=app)
            aclient = httpx.AsyncClient(transport=transport, base_url="http://t")

            async def accept(token, request_id):
                return await aclient.post(
                    "/accept-ride",
                    json={"request_id": request_id},
                    headers={"Authorization": f"Bearer {token}"},
                )

            async def trial():
                resp = await aclient.post(
                    "/confirm-ride",
                    json={
                        "pickup": {"lat": 0.0, "lon": 0.01},
                        "dropoff": {"lat": 0.0, "lon": 0.02},
                        "seats": 1,
                    },
                    headers={"Authorization": f"Bearer {rider['token']}"},
                )
                assert resp.status_code == 200, resp.text
                request_id = resp.json()["request_id"]
                r1, r2 = await asyncio.gather(
                    accept(d1["token"], request_id), accept(d2["token"], request_id)
                )
                statuses = sorted([r1.status_code, r2.status_code])
                assert statuses == [200, 409], statuses
                winner = r1 if r1.status_code == 200 else r2
                wtoken = d1["token"] if winner is r1 else d2["token"]
                ride_id = winner.json()["ride_id"]
                for target in ("HeadToPickup", "IHaveArrived", "StartRide", "EndRide"):
                    resp = await aclient.post(
                        f"/rides/{ride_id}/stage",
                        json={"target": target},
                        headers={"Authorization": f"Bearer {wtoken}"},
                    )
                    assert resp.status_code == 200, resp.text

            try:
                for i in range(self.TRIALS):
                    loop.run_until_complete(trial())
                    if i % 100 == 99:
                        system.dispatcher.check_invariants()
                system.dispatcher.check_invariants()
                for car_id in ("car-1", "car-2"):
                    car = system.fleet.get(car_id)
                    assert car.seats_available == car.capacity
                    assert car.available is True
            finally:
                loop.run_until_complete(aclient.aclose())
                loop.close()


class TestStateMachine:
    def test_exhaustive_matrix_and_table(self):
        with criterion("state-machine-36-pairs"):
            from itertools import product

            from campusride.domain import (
                Actor,
                IllegalTransition,
                LegStatus,
                StaleRide,
                advance_stage,
                derive_leg_statuses,
            )
            from test_domain import make_ride

            stages = list(RideStage)
            legal = 0
            for frm, to in product(stages, stages):
                ride = make_ride(frm)
                actor = Actor.SYSTEM if to is RideStage.FINISHED else Actor.DRIVER
                if frm.successor is to:
                    advanced = advance_stage(ride, actor, to, at=999.0)
                    assert advanced.stage is to
                    legal += 1
                else:
                    with pytest.raises((IllegalTransition, StaleRide)):
                        advance_stage(ride, actor, to, at=999.0)
            assert legal == 5
            table = {
                RideStage.START_JOURNEY: (LegStatus.PENDING, LegStatus.PENDING),
                RideStage.HEAD_TO_PICKUP: (LegStatus.ENROUTE, LegStatus.PENDING),
                RideStage.I_HAVE_ARRIVED: (LegStatus.ARRIVED, LegStatus.PENDING),
                RideStage.START_RIDE: (LegStatus.COMPLETED, LegStatus.ENROUTE),
                RideStage.END_RIDE: (LegStatus.COMPLETED, LegStatus.COMPLETED),
                RideStage.FINISHED: (LegStatus.COMPLETED, LegStatus.COMPLETED),
            }
            for stage in stages:
                assert derive_leg_statuses(stage) == table[stage]


class TestRoutingOracle:
    def test_dijkstra_vs_brute_force_200_graphs(self):
        with criterion("routing-oracle-200-graphs"):
            from campusride.routing import Unreachable

            checked = 0
            for seed in range(200):
                g = random_graph(random.Random(seed))
                ids = sorted(g.nodes)
                for src in ids:
                    for dst in ids:
                        expected = brute_force_min_cost(g, src, dst)
                        if expected is None:
                            with pytest.raises(Unreachable):
                                shortest_route(g, src, dst)
                        else:
                            got = shortest_route(g, src, dst).distance
                            assert math.isclose(got, expected, rel_tol=1e-9), (
                                seed, src, dst, got, expected,
                            )
                        checked += 1
            assert checked >= 200 * 4


class TestHaversine:
    def test_fixtures_and_metric_properties(self):
        with criterion("haversine-fixtures-and-properties"):
            d1 = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(0.01, 0.0))
            assert abs(d1 - 1111.95) <= 0.01
            d2 = haversine_distance(GeoPoint(30.00, 31.40), GeoPoint(30.00, 31.41))
            assert abs(d2 - 963.1) <= 1.0
            rng = random.Random(20240809)
            for _ in range(10_000):
                a, b, c = (
                    GeoPoint(rng.uniform(-89.9, 89.9), rng.uniform(-179.9, 179.9))
                    for _ in range(3)
                )
                dab, dba = haversine_distance(a, b), haversine_distance(b, a)
                assert dab == dba
                dac, dcb = haversine_distance(a, c), haversine_distance(c, b)
                assert dab <= (dac + dcb) * (1.0 + 1e-6) + 1e-9


class TestBlockageReroute:
    def test_blockage_scenario(self):
        with criterion("blockage-reroute"):
            transcript, results = run_scenario(load_scenario("blockage"), seed=0)
            by_kind = {r["kind"]: r for r in results}
            assert by_kind["reroutes"]["ok"], by_kind["reroutes"]["detail"]
            assert by_kind["arrived"]["ok"], by_kind["arrived"]["detail"]
            assert by_kind["stage"]["ok"], by_kind["stage"]["detail"]
            failures = [r for r in results if not r["ok"]]
            assert not failures, failures


class TestAccountsCriterion:
    def test_accounts_rules(self, tmp_path, vclock):
        with criterion("accounts-rules"):
            from campusride.accounts import (
                AccountService,
                NotPending,
                NotYetApproved,
                WeakPassword,
            )
            from campusride.clock import MonotonicStamper
            from campusride.store import MemoryStore

            svc = AccountService(
                MemoryStore(), MonotonicStamper(vclock), scrypt_n=2**11
            )

            def register(uid, first, last, pw):
                return svc.register(uid, f"{uid}@uni.example", first, last, "+201", pw)

            # password boundary: 5 rejected, 6 accepted
            with pytest.raises(WeakPassword):
                register("u-1", "Ann", "Lee", "12345")
            register("u-1", "Ann", "Lee", "123456")
            # username fixtures
            assert register("u-2", "John", "Doe", "secret1").username == "john.doe"
            assert register("u-3", "John", "Doe", "secret1").username == "john.doe-2"
            assert register("u-4", "  Ana ", "Lee", "secret1").username == "ana.lee"
            # login before approval
            with pytest.raises(NotYetApproved):
                svc.login("john.doe", "secret1")
            # concurrent reviews: one state change, one email
            results = []
            barrier = threading.Barrier(8)

            def review():
                barrier.wait()
                try:
                    svc.admin_review("u-2", accept=True)
                    results.append("win")
                except NotPending:
                    results.append("lose")

            threads = [threading.Thread(target=review) for _ in range(8)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert results.count("win") == 1
            assert len(svc.outbox_emails()) == 1
            svc.login("john.doe", "secret1")


class TestPersistenceConformance:
    def exercise(self, store):
        """The operation battery every store must satisfy."""
        assert store.get("c", "k") is None
        assert store.put("c", "k", {"v": 1}) == 1
        assert store.put("c", "k", {"v": 2}) == 2
        assert store.get("c", "k") == ({"v": 2}, 2)
        assert store.cas("c", "k", 2, {"v": 3}) is True
        assert store.cas("c", "k", 2, {"v": 9}) is False
        assert store.cas("c", "new", 0, {"v": 0}) is True
        assert store.cas("c", "new", 0, {"v": 9}) is False
        assert store.delete("c", "new") is True
        store.put("c", "b", {})
        store.put("c", "a", {})
        assert [k for k, _ in store.scan("c")] == ["a", "b", "k"]

    def test_conformance_and_crash_recovery_both_stores(self, tmp_path, vclock):
        with criterion("persistence-conformance"):
            for make in (
                lambda: FileStore(str(tmp_path / "accept.log")),
                lambda: SqliteStore(str(tmp_path / "accept.sqlite")),
            ):
                store = make()
                self.exercise(store)
                store.close()

            # crash-recovery: acknowledged state survives an abrupt restart,
            # exercised end-to-end against both persistent store kinds
            for suffix, reopen in (
                ("ride.log", lambda p: FileStore(p)),
                ("ride.sqlite", lambda p: SqliteStore(p)),
            ):
                path = str(tmp_path / suffix)
                clock = VirtualClock(start=5_000.0)
                sys1 = make_system(tmp_path, clock, store=reopen(path))
                client1 = TestClient(create_app(sys1))
                api1 = Api(client1, sys1)
                admin = api1.admin_token()
                rider = api1.approved_rider(admin)
                driver = api1.provision_car(admin, at_node="a")
                sys1.gateway.attach("car:car-1", Sink())
                sys1.dispatcher.on_driver_connected()
                req = api1.confirm(rider["token"]).json()["request_id"]
                ride_id = api1.accept(driver["token"], req).json()["ride_id"]
                clock.advance(1.0)
                assert api1.stage(driver["token"], ride_id, "HeadToPickup").status_code == 200
                assert api1.publish(driver["token"], 0.0, 0.003, 10.0).status_code == 200
                # no close(): abrupt stop, then rebuild from disk
                sys2 = make_system(tmp_path, clock, store=reopen(path))
                client2 = TestClient(create_app(sys2))
                api2 = Api(client2, sys2)
                ride = sys2.get_ride(ride_id)
                assert ride.stage is RideStage.HEAD_TO_PICKUP
                assert sys2.gateway.latest_location("car-1").recorded_at == 10.0
                assert api2.track(rider["token"], ride_id).status_code == 200
                resp = api2.stage(driver["token"], ride_id, "HeadToPickup")
                assert resp.status_code == 409
