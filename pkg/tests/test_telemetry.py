"""Hub behavior: aggregation from received traffic only, command relay."""

import json

import pytest

from shuttlelab.sim import World, build_scenario
from shuttlelab.telemetry import SCHEMA_V, TelemetryHub

TICK_NS = 100_000_000


def make_hub(overrides=None, seed=3):
    mapping = {
        "duration_s": 60, "rng_seed": seed,
        "pedestrians": {"crossing": {"rate_per_s": 0.0},
                        "stops": {"rate_per_s": 0.0}},
    }
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            mapping.setdefault(key, {}).update(value)
        else:
            mapping[key] = value
    world = World(build_scenario(mapping))
    return TelemetryHub(world), world


def advance(hub, ticks):
    for _ in range(ticks):
        hub.step()


class TestSnapshotAggregation:
    def test_live_feeds_clear_all_stale_flags(self):
        hub, _ = make_hub()
        advance(hub, 30)
        snap = hub.snapshot()
        assert snap["v"] == SCHEMA_V
        assert not snap["shuttle"]["stale"]
        assert not snap["crossing"]["stale"]
        assert not any(s["stale"] for s in snap["bus_stops"])
        assert not any(h["stale"] for h in snap["health"].values())

    def test_snapshot_serializes_to_json(self):
        hub, _ = make_hub()
        advance(hub, 20)
        parsed = json.loads(json.dumps(hub.snapshot()))
        assert parsed["v"] == SCHEMA_V

    def test_unseen_feeds_start_stale_and_empty(self):
        hub, _ = make_hub()
        snap = hub.snapshot()
        assert snap["shuttle"] is None
        assert snap["crossing"]["phase"] is None
        assert snap["crossing"]["received_ns"] is None
        assert snap["crossing"]["stale"]
        assert all(s["stale"] and s["received_ns"] is None
                   for s in snap["bus_stops"])
        assert all(h["last_seen_ns"] is None and h["stale"]
                   for h in snap["health"].values())

    def test_shuttle_section_follows_cam_within_two_ticks(self):
        hub, world = make_hub({"trips": {"sequence": ["outbound"]}})
        advance(hub, 200)
        snap = hub.snapshot()
        shuttle = snap["shuttle"]
        assert shuttle["driving_status"] == "autonomous"
        assert shuttle["mission_id"] == 1
        assert 0 < shuttle["progress_permille"] < 1000
        # freshness invariant: under live feeds the CAM is at most 2 ticks old
        assert snap["sim_time_ns"] - shuttle["received_ns"] <= 2 * TICK_NS
        assert abs(shuttle["x_m"] - world.agent.state.x) < 0.6
        assert abs(shuttle["speed_mps"] - world.agent.state.speed) < 0.5

    def test_all_timestamps_at_or_before_sim_time(self):
        hub, _ = make_hub({"trips": {"sequence": ["outbound"]}})
        advance(hub, 150)
        snap = hub.snapshot()
        now = snap["sim_time_ns"]
        stamped = [snap["shuttle"]["received_ns"],
                   snap["crossing"]["received_ns"],
                   *(s["received_ns"] for s in snap["bus_stops"]),
                   *(h["last_seen_ns"] for h in snap["health"].values())]
        assert all(ns is not None and ns <= now for ns in stamped)

    def test_crossing_phase_mirrors_spatem(self):
        hub, world = make_hub()
        advance(hub, 30)
        crossing = hub.snapshot()["crossing"]
        assert crossing["phase"] == "PED_GREEN"
        assert crossing["mode"] == "SHUTTLE_PRIORITY"
        groups = {m["signal_group_id"]: m["event_state"]
                  for m in crossing["movements"]}
        assert groups == {1: 3, 2: 6}

    def test_detected_pedestrians_become_count_and_anonymous_boxes(self):
        hub, world = make_hub()
        px, py = world.cfg.bus_stops[0].platform
        ax, ay = world.cfg.bus_stops[0].platform_axis
        positions = [(px + k * ax, py + k * ay) for k in (-1.5, 0.0, 1.5)]
        hub, world = make_hub({"pedestrians": {"scripted": [
            {"at_s": 0.0, "duration_s": 60.0, "position": list(p)}
            for p in positions]}})
        advance(hub, 30)
        section = hub.snapshot()["bus_stops"][0]
        assert section["pedestrian_count"] == 3
        assert len(section["boxes"]) == 3
        for box in section["boxes"]:
            assert set(box) == {"x_m", "y_m", "radius_m"}
            nearest = min(abs(box["x_m"] - x) + abs(box["y_m"] - y)
                          for x, y in positions)
            assert nearest < 1.0

    def test_silent_bus_stop_goes_stale_alone(self):
        hub, world = make_hub()
        sx, sy = world.cfg.bus_stops[1].sensor
        poly = [[sx - 1, sy - 1], [sx + 1, sy - 1],
                [sx + 1, sy + 1], [sx - 1, sy + 1]]
        hub, world = make_hub({"netbus": {"zones": [
            {"polygon": poly, "extra_loss": 1.0, "mode": "sender_in"}]}})
        advance(hub, 25)
        snap = hub.snapshot()
        stop0, stop1 = snap["bus_stops"]
        assert stop1["stale"] and stop1["received_ns"] is None
        assert not stop0["stale"]
        assert not snap["shuttle"]["stale"]
        assert not snap["crossing"]["stale"]
        assert snap["health"][str(stop1["station_id"])]["stale"]

    def test_snapshot_reads_do_not_mutate_state(self):
        hub, _ = make_hub()
        advance(hub, 15)
        assert hub.snapshot() == hub.snapshot()


class TestCommandRelay:
    def test_mode_switch_acked_and_applied_next_tick(self):
        hub, world = make_hub()
        advance(hub, 10)
        queued = hub.command({"name": "set_intersection_mode",
                              "args": {"mode": "PEDESTRIAN_PRIORITY"}})
        assert queued["status"] == "queued"
        assert hub.result(queued["id"]) is None
        hub.step()
        acks = hub.drain_acks()
        assert len(acks) == 1
        assert acks[0]["ok"] and acks[0]["applied_tick"] == 10
        assert hub.snapshot()["crossing"]["mode"] == "PEDESTRIAN_PRIORITY"
        assert world.rows[9].mode == "SHUTTLE_PRIORITY"
        assert world.rows[10].mode == "PEDESTRIAN_PRIORITY"

    def test_dispatch_during_active_trip_rejected_with_reason(self):
        hub, _ = make_hub()
        advance(hub, 5)
        hub.command({"name": "dispatch_mission",
                     "args": {"direction": "outbound"}})
        advance(hub, 10)
        assert hub.drain_acks()[0]["ok"]
        hub.command({"name": "dispatch_mission",
                     "args": {"direction": "outbound"}})
        hub.step()
        ack = hub.drain_acks()[0]
        assert not ack["ok"]
        assert "active" in ack["reason"]

    def test_pause_resume_round_trip(self):
        hub, world = make_hub()
        advance(hub, 5)
        hub.command({"name": "dispatch_mission",
                     "args": {"direction": "outbound"}})
        advance(hub, 30)
        hub.drain_acks()
        hub.command({"name": "pause_shuttle"})
        hub.step()
        assert hub.drain_acks()[0]["ok"]
        advance(hub, 10)
        assert hub.snapshot()["shuttle"]["driving_status"] == "paused"
        hub.command({"name": "resume_shuttle"})
        hub.step()
        assert hub.drain_acks()[0]["ok"]
        advance(hub, 5)
        assert hub.snapshot()["shuttle"]["driving_status"] == "autonomous"

    def test_external_trajectory_selected_by_broker(self):
        hub, world = make_hub()
        advance(hub, 5)
        hub.command({"name": "dispatch_mission",
                     "args": {"direction": "outbound"}})
        advance(hub, 30)
        hub.drain_acks()
        state = world.agent.state
        samples = [[t, state.x + state.speed * t, state.y,
                    state.heading, state.speed] for t in (0.0, 1.5, 3.0)]
        hub.command({"name": "send_external_trajectory",
                     "args": {"samples": samples}})
        hub.step()
        assert hub.drain_acks()[0]["ok"]
        hub.step()
        assert world.rows[-1].trajectory_source == "external"

    def test_expired_trajectory_rejected(self):
        hub, world = make_hub()
        advance(hub, 5)
        hub.command({"name": "dispatch_mission",
                     "args": {"direction": "outbound"}})
        advance(hub, 30)
        hub.drain_acks()
        hub.command({"name": "send_external_trajectory",
                     "args": {"samples": [[-5.0, 0.0, 0.0, 0.0, 1.0]]}})
        hub.step()
        ack = hub.drain_acks()[0]
        assert not ack["ok"]
        assert "expired" in ack["reason"]

    def test_unknown_command_never_reaches_the_world(self):
        hub, world = make_hub()
        advance(hub, 5)
        before = len(world.command_audit)
        queued = hub.command({"name": "self_destruct"})
        assert queued == {"id": None, "name": "self_destruct",
                          "status": "rejected"}
        ack = hub.drain_acks()[0]
        assert not ack["ok"] and "unknown command" in ack["reason"]
        hub.step()
        assert len(world.command_audit) == before

    def test_audit_entry_precedes_every_effect(self):
        hub, world = make_hub()
        advance(hub, 10)
        queued = hub.command({"name": "set_intersection_mode",
                              "args": {"mode": "PEDESTRIAN_PRIORITY"}})
        advance(hub, 5)
        entry = next(e for e in world.command_audit
                     if e["id"] == queued["id"])
        first_effect = next(i for i, row in enumerate(world.rows)
                            if row.mode == "PEDESTRIAN_PRIORITY")
        assert entry["applied_tick"] <= first_effect
