"""API surface: REST endpoints, websocket stream, command round-trips."""

import time

import pytest
from fastapi.testclient import TestClient

from shuttlelab.service import Snapshot, create_app
from shuttlelab.sim import build_scenario


def make_client(duration_s=30, rate=100.0):
    config = build_scenario({
        "duration_s": duration_s, "rng_seed": 3,
        "pedestrians": {"crossing": {"rate_per_s": 0.0},
                        "stops": {"rate_per_s": 0.0}},
    })
    return TestClient(create_app(config, rate=rate))


def wait_for(predicate, timeout_s=5.0, interval_s=0.02):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval_s)
    raise AssertionError("condition not met in time")


def read_until(ws, predicate, limit=2000):
    for _ in range(limit):
        frame = ws.receive_json()
        if predicate(frame):
            return frame
    raise AssertionError("expected frame never arrived")


class TestRest:
    def test_health_reports_running_simulation(self):
        with make_client() as client:
            body = wait_for(lambda: (lambda r: r if r["sim_time_ns"] > 0
                                     else None)(client.get("/health").json()))
            assert body["status"] == "ok"
            assert not body["done"]

    def test_scenario_endpoint(self):
        with make_client() as client:
            body = client.get("/scenario").json()
            assert body == {"name": "default", "duration_s": 30.0,
                            "tick_ms": 100, "schema_v": 1}

    def test_map_geometry(self):
        with make_client() as client:
            body = client.get("/map").json()
            assert set(body["routes"]) == {"outbound", "return"}
            assert len(body["routes"]["outbound"]) >= 2
            assert len(body["conflict_zone"]) >= 3
            assert [s["name"] for s in body["stops"]] == ["bus_stop_0",
                                                          "bus_stop_1"]

    def test_snapshot_matches_published_schema(self):
        with make_client() as client:
            body = wait_for(lambda: (lambda r: r if r["shuttle"] else None)(
                client.get("/snapshot").json()))
            snapshot = Snapshot.model_validate(body)
            assert snapshot.v == 1
            assert not snapshot.crossing.stale

    def test_command_round_trip_over_rest(self):
        with make_client() as client:
            queued = client.post("/command", json={
                "name": "set_intersection_mode",
                "args": {"mode": "PEDESTRIAN_PRIORITY"}}).json()
            assert queued["status"] == "queued"
            ack = wait_for(lambda: (lambda r: r if r["status"] == "applied"
                                    else None)(
                client.get(f"/command/{queued['id']}").json()))
            assert ack["ok"]
            snap = client.get("/snapshot").json()
            assert snap["crossing"]["mode"] == "PEDESTRIAN_PRIORITY"

    def test_unknown_command_rejected_not_queued(self):
        with make_client() as client:
            body = client.post("/command",
                               json={"name": "warp_drive"}).json()
            assert body == {"id": None, "name": "warp_drive",
                            "status": "rejected"}

    def test_unissued_command_id_is_404(self):
        with make_client() as client:
            assert client.get("/command/41").status_code == 404


class TestWebsocket:
    def test_first_frame_is_a_snapshot(self):
        with make_client() as client:
            with client.websocket_connect("/ws") as ws:
                frame = ws.receive_json()
                assert frame["type"] == "snapshot"
                Snapshot.model_validate(frame)

    def test_stream_advances_sim_time(self):
        with make_client() as client:
            with client.websocket_connect("/ws") as ws:
                first = read_until(ws, lambda f: f["type"] == "snapshot")
                later = read_until(
                    ws, lambda f: f["type"] == "snapshot"
                    and f["sim_time_ns"] > first["sim_time_ns"] + 10**9)
                assert later["v"] == 1

    def test_command_queued_acked_and_visible_in_stream(self):
        with make_client() as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_json({"name": "set_intersection_mode",
                              "args": {"mode": "PEDESTRIAN_PRIORITY"}})
                queued = read_until(ws, lambda f: f["type"] == "queued")
                assert queued["status"] == "queued"
                ack = read_until(ws, lambda f: f["type"] == "ack"
                                 and f["id"] == queued["id"])
                assert ack["ok"]
                changed = read_until(
                    ws, lambda f: f["type"] == "snapshot"
                    and f["crossing"]["mode"] == "PEDESTRIAN_PRIORITY")
                # ack precedes the frame showing the effect: within 2 ticks
                assert (changed["sim_time_ns"] - ack["sim_time_ns"]
                        <= 2 * 100_000_000)

    def test_malformed_command_gets_error_frame(self):
        with make_client() as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_json({"args": {}})
                frame = read_until(ws, lambda f: f["type"] == "error")
                assert "name" in frame["reason"]

    def test_finished_run_emits_end_frame(self):
        with make_client(duration_s=2) as client:
            with client.websocket_connect("/ws") as ws:
                end = read_until(ws, lambda f: f["type"] == "end")
                assert end["sim_time_ns"] == 1_900_000_000
            health = client.get("/health").json()
            assert health["done"]
