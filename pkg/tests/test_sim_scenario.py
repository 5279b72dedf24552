import math

import pytest

from shuttlelab.intersection import PriorityMode
from shuttlelab.netbus import ZoneMode
from shuttlelab.shuttle.planning import Direction
from shuttlelab.sim import ConfigError, build_scenario, load_scenario
from shuttlelab.sim.scenario import with_seed


class TestDefaults:
    def test_empty_mapping_is_a_runnable_scenario(self):
        cfg = build_scenario({})
        assert cfg.tick_ns == 100_000_000
        assert cfg.duration_s == 600.0
        assert set(cfg.routes) == {Direction.OUTBOUND, Direction.RETURN}

    def test_outbound_route_is_the_straight_lane(self):
        cfg = build_scenario({})
        out = cfg.routes[Direction.OUTBOUND]
        assert out.lane.length == pytest.approx(100.0)
        assert out.turning_interval is None

    def test_return_route_has_turnarounds_at_both_ends(self):
        cfg = build_scenario({})
        ret = cfg.routes[Direction.RETURN]
        # two teardrop loops add roughly 2 * (2*pi*3 - 2*3) over the straight
        assert ret.lane.length > 100.0 + 2 * (2 * math.pi * 3.0 - 6.0) - 5.0
        lo, hi = ret.turning_interval
        assert 0.0 <= lo < hi < ret.lane.length

    def test_return_route_lands_exactly_on_the_near_stop(self):
        cfg = build_scenario({})
        end = cfg.routes[Direction.RETURN].lane.points[-1]
        assert end == pytest.approx((0.0, 0.0), abs=1e-9)

    def test_return_route_end_heading_faces_the_lane(self):
        cfg = build_scenario({})
        lane = cfg.routes[Direction.RETURN].lane
        heading = lane.heading_at(lane.length - 0.01)
        # last chord of the rejoin arc leaves a few degrees of residual
        assert abs(heading) < math.radians(6.0)

    def test_crosswalk_cuts_both_routes(self):
        cfg = build_scenario({})
        (ax, ay), (bx, by) = cfg.crosswalk
        assert ax == pytest.approx(50.0) and bx == pytest.approx(50.0)
        assert sorted((ay, by)) == pytest.approx([-6.0, 6.0])

    def test_platforms_sit_on_opposite_sides(self):
        cfg = build_scenario({})
        s0, s1 = cfg.bus_stops
        assert s0.platform[1] > 0 > s1.platform[1]
        assert s0.sensor[1] > 0 > s1.sensor[1]

    def test_cam_period_follows_tick(self):
        assert build_scenario({}).shuttle.cam_period_ticks == 1
        assert build_scenario({"tick_ms": 50}).shuttle.cam_period_ticks == 2
        assert build_scenario({"tick_ms": 20}).shuttle.cam_period_ticks == 5


class TestValidation:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'bogus'"):
            build_scenario({"bogus": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="map.range_m"):
            build_scenario({"map": {"range_m": 5}})

    def test_tick_must_divide_emission_period(self):
        with pytest.raises(ConfigError, match="emission period"):
            build_scenario({"tick_ms": 30})

    def test_duration_positive(self):
        with pytest.raises(ConfigError, match="duration"):
            build_scenario({"duration_s": 0})

    def test_stops_too_close(self):
        with pytest.raises(ConfigError, match="40 m"):
            build_scenario({"map": {"stop1_pose": [30.0, 0.0, 0.0]}})

    def test_stop_pose_must_face_along_the_lane(self):
        with pytest.raises(ConfigError, match="face along the lane"):
            build_scenario({"map": {"stop1_pose": [100.0, 0.0, math.pi]}})

    def test_crossing_offset_keeps_clear_of_stops(self):
        with pytest.raises(ConfigError, match="crossing_offset"):
            build_scenario({"map": {"crossing_offset_m": 5.0}})

    def test_zone_narrower_than_crosswalk(self):
        with pytest.raises(ConfigError, match="conflict zone"):
            build_scenario({"map": {"zone_lat_half_m": 6.0}})

    def test_platform_clearance(self):
        with pytest.raises(ConfigError, match="platform_offset"):
            build_scenario({"map": {"platform_offset_m": 1.0}})

    def test_loss_probability_range(self):
        with pytest.raises(ConfigError, match="outside"):
            build_scenario({"netbus": {"base_loss": 1.5}})

    def test_loss_zone_polygon_needs_three_points(self):
        zone = {"polygon": [[0, 0], [1, 1]], "extra_loss": 0.2}
        with pytest.raises(ConfigError):
            build_scenario({"netbus": {"zones": [zone]}})

    def test_loss_zone_modes_parse(self):
        zone = {"polygon": [[90.0, -8.0], [104.0, -8.0], [104.0, 8.0],
                            [90.0, 8.0]],
                "extra_loss": 0.2, "mode": "receiver_in"}
        cfg = build_scenario({"netbus": {"zones": [zone]}})
        assert cfg.loss.zones[0].mode is ZoneMode.RECEIVER_IN

    def test_unknown_priority_mode(self):
        with pytest.raises(ConfigError, match="priority mode"):
            build_scenario({"intersection": {"mode": "GREEN_WAVE"}})

    def test_mode_schedule_orders_by_time(self):
        cfg = build_scenario({"intersection": {"mode_schedule": [
            {"at_s": 60.0, "mode": "SHUTTLE_PRIORITY"},
            {"at_s": 30.0, "mode": "PEDESTRIAN_PRIORITY"},
        ]}})
        assert [at for at, _ in cfg.mode_schedule] == [30.0, 60.0]
        assert cfg.mode_schedule[0][1] is PriorityMode.PEDESTRIAN_PRIORITY

    def test_p_compliant_range(self):
        with pytest.raises(ConfigError, match="p_compliant"):
            build_scenario({"pedestrians": {"crossing": {"p_compliant": 1.2}}})

    def test_walk_speed_range(self):
        with pytest.raises(ConfigError, match="walk speed"):
            build_scenario({"pedestrians": {"crossing": {"speed_min": 2.0,
                                                         "speed_max": 1.0}}})

    def test_scripted_duration_positive(self):
        agent = {"at_s": 10.0, "duration_s": 0.0, "position": [50.0, 0.0]}
        with pytest.raises(ConfigError, match="duration_s"):
            build_scenario({"pedestrians": {"scripted": [agent]}})

    def test_trip_sequence_must_alternate(self):
        with pytest.raises(ConfigError, match="alternate"):
            build_scenario({"trips": {"sequence": ["outbound", "outbound"]}})

    def test_trip_sequence_must_start_outbound(self):
        with pytest.raises(ConfigError, match="alternate"):
            build_scenario({"trips": {"sequence": ["return"]}})

    def test_headway_floor(self):
        with pytest.raises(ConfigError, match="headway"):
            build_scenario({"trips": {"headway_s": 0.1}})


class TestFileLoading:
    def test_yaml_round(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text("name: corridor\nrng_seed: 7\nduration_s: 120\n")
        cfg = load_scenario(path)
        assert cfg.name == "corridor"
        assert cfg.rng_seed == 7
        assert cfg.loss.rng_seed == 7

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_scenario(path).name == "default"

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="not a mapping"):
            load_scenario(path)


class TestSeedRebinding:
    def test_with_seed_rebinds_loss_stream(self):
        cfg = build_scenario({"rng_seed": 1})
        other = with_seed(cfg, 42)
        assert other.rng_seed == 42
        assert other.loss.rng_seed == 42
        assert cfg.rng_seed == 1
