"""Metric oracles: loss, travel-time, compliance arithmetic checked by hand.

Synthetic datasets are built as in-memory tables so every expected number
is computable on paper; a handful of live runs check that the dataset and
run-log code paths agree on real data.
"""

import csv
import json
import math
import random
import shutil
import statistics
from pathlib import Path

import pytest

from shuttlelab import analysis
from shuttlelab.analysis import (
    NoPhaseLog,
    heatmap_csv,
    immediate_cross_fraction,
    non_compliance,
    package_loss,
    red_fraction,
    travel_times,
)
from shuttlelab.datastore import Dataset, Table, TripRecord, write_dataset
from shuttlelab.sim import build_scenario, run

TICK_NS = 100_000_000


def table(columns, rows):
    return Table(list(columns), [[str(c) for c in row] for row in rows])


def pose_table(stamps, xs, ys=None):
    ys = ys if ys is not None else [0.0] * len(stamps)
    return table(["timestamp_ns", "x_m", "y_m", "heading_rad"],
                 [[t, f"{x:.3f}", f"{y:.3f}", "0.000000"]
                  for t, x, y in zip(stamps, xs, ys)])


def cpm_table(stamps, seqs, station_id):
    return table(["timestamp_ns", "sequence", "station_id"],
                 [[t, s, station_id] for t, s in zip(stamps, seqs)])


def received_table(entries):
    """entries: (timestamp_ns, station_id, sequence)."""
    return table(["timestamp_ns", "station_id", "sequence"], entries)


def loss_dataset(n, lost, speed_mps=1.0, station_id=3):
    """One trip, one stop, sequences 0..n-1 at 10 Hz, given set lost."""
    stamps = [i * TICK_NS for i in range(n)]
    xs = [speed_mps * 0.1 * i for i in range(n)]
    trip = TripRecord("1970-01-01", 0,
                      {"pose": pose_table(stamps, xs)},
                      {"bus_stop_0": {"cpm": cpm_table(stamps, range(n),
                                                       station_id)}},
                      {})
    rx = received_table([(t + 5_000_000, station_id, s)
                         for t, s in zip(stamps, range(n)) if s not in lost])
    return Dataset(Path("."), [trip], None, rx)


class TestPackageLoss:
    def test_every_fifth_sequence_lost_is_twenty_percent(self):
        lost = set(range(0, 500, 5))
        report = package_loss(loss_dataset(500, lost))
        assert report.total_sent == 500
        assert report.total_received == 400
        assert report.loss_pct == pytest.approx(20.0, abs=1e-12)
        assert report.trips[0].method == "sequence"

    def test_per_station_breakdown_and_weighted_total(self):
        stamps = [i * TICK_NS for i in range(100)]
        xs = [0.1 * i for i in range(100)]
        trip = TripRecord(
            "1970-01-01", 0, {"pose": pose_table(stamps, xs)},
            {"bus_stop_0": {"cpm": cpm_table(stamps, range(100), 3)},
             "bus_stop_1": {"cpm": cpm_table(stamps, range(100, 200), 4)}},
            {})
        rx = received_table(
            [(t, 3, s) for t, s in zip(stamps, range(100))]
            + [(t, 4, s) for t, s in zip(stamps, range(100, 200))
               if s % 2 == 0])
        report = package_loss(Dataset(Path("."), [trip], None, rx))
        by_station = {s.station_id: s for s in report.trips[0].stations}
        assert by_station[3].loss_pct == 0.0
        assert by_station[4].loss_pct == pytest.approx(50.0)
        assert report.loss_pct == pytest.approx(25.0)

    def test_heatmap_attributes_losses_to_send_position_cells(self):
        # 5 m/s: sequence i sent from x = 0.5 i, so cells hold 10 sends each
        lost = set(range(20, 30))
        report = package_loss(loss_dataset(100, lost, speed_mps=5.0))
        assert report.heatmap[(2, 0)] == (10, 10)
        for cell, (sent, cell_lost) in report.heatmap.items():
            assert sent == 10
            if cell != (2, 0):
                assert cell_lost == 0
        assert report.max_cell() == ((2, 0), 10, 10)
        assert report.cell_center((2, 0)) == (12.5, 2.5)

    def test_heatmap_conserves_totals_on_random_walks(self):
        rng = random.Random(31)
        for trial in range(5):
            n = rng.randint(50, 300)
            lost = {s for s in range(n) if rng.random() < 0.3}
            x = rng.uniform(-40.0, 40.0)
            xs = []
            for _ in range(n):
                x += rng.uniform(-2.0, 2.0)
                xs.append(x)
            data = loss_dataset(n, lost)
            data.trips[0].shuttle["pose"] = pose_table(
                [i * TICK_NS for i in range(n)], xs)
            report = package_loss(data)
            assert sum(s for s, _ in report.heatmap.values()) \
                == report.total_sent == n
            assert sum(l for _, l in report.heatmap.values()) \
                == report.total_sent - report.total_received == len(lost)

    def test_lossless_report_has_no_max_cell(self):
        report = package_loss(loss_dataset(50, set()))
        assert report.loss_pct == 0.0
        assert report.max_cell() is None

    def test_missing_receive_log_raises(self):
        data = loss_dataset(50, set())
        with pytest.raises(FileNotFoundError, match="received_cpm"):
            package_loss(Dataset(Path("."), data.trips, None, None))


# -- live fixtures ---------------------------------------------------------


@pytest.fixture(scope="module")
def busy(tmp_path_factory):
    cfg = build_scenario({
        "duration_s": 240, "rng_seed": 7,
        "pedestrians": {"crossing": {"rate_per_s": 0.1},
                        "stops": {"rate_per_s": 0.05}},
        "trips": {"round_trips": 1},
    })
    log = run(cfg)
    root = tmp_path_factory.mktemp("busy") / "dataset"
    write_dataset(log, root)
    return log, root


@pytest.fixture(scope="module")
def priority_pair(tmp_path_factory):
    """Same quiet single-trip scenario under both crossing modes."""
    roots = {}
    for mode in ("SHUTTLE_PRIORITY", "PEDESTRIAN_PRIORITY"):
        cfg = build_scenario({
            "duration_s": 180, "rng_seed": 11,
            "intersection": {"mode": mode},
            "pedestrians": {"crossing": {"rate_per_s": 0.0},
                            "stops": {"rate_per_s": 0.0}},
            "trips": {"sequence": ["outbound"]},
        })
        root = tmp_path_factory.mktemp(mode.lower()) / "dataset"
        write_dataset(run(cfg), root)
        roots[mode] = root
    return roots


class TestPackageLossLive:
    def test_measured_loss_tracks_configured_base_loss(self, busy):
        _, root = busy
        report = package_loss(root)
        assert all(t.method == "sequence" for t in report.trips)
        assert 0.5 < report.loss_pct < 4.5     # base_loss 0.02, n ~ 2400
        assert sum(s for s, _ in report.heatmap.values()) == report.total_sent
        assert sum(l for _, l in report.heatmap.values()) \
            == report.total_sent - report.total_received

    def test_missing_tx_sequence_falls_back_to_expected_count(
            self, busy, tmp_path):
        _, root = busy
        mutated = tmp_path / "ds"
        shutil.copytree(root, mutated)
        for path in mutated.rglob("cpm.csv"):
            rows = list(csv.reader(path.open()))
            drop = rows[0].index("sequence")
            with path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(
                    [[c for i, c in enumerate(r) if i != drop]
                     for r in rows])
        report = package_loss(mutated)
        assert all(t.method == "expected_count" for t in report.trips)
        assert any("lower confidence" in note for note in report.notes)
        assert not report.heatmap
        for trip in report.trips:
            assert 0.0 <= trip.loss_pct < 15.0

    def test_missing_rx_sequence_falls_back_for_all_trips(
            self, busy, tmp_path):
        _, root = busy
        mutated = tmp_path / "ds"
        shutil.copytree(root, mutated)
        path = mutated / "received_cpm.csv"
        rows = list(csv.reader(path.open()))
        drop = rows[0].index("sequence")
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(
                [[c for i, c in enumerate(r) if i != drop] for r in rows])
        report = package_loss(mutated)
        assert all(t.method == "expected_count" for t in report.trips)
        assert "received_cpm" in report.notes[0]

    def test_renamed_sequence_column_resolves_via_aliases(
            self, busy, tmp_path):
        _, root = busy
        mutated = tmp_path / "ds"
        shutil.copytree(root, mutated)
        for path in mutated.rglob("cpm.csv"):
            rows = list(csv.reader(path.open()))
            rows[0][rows[0].index("sequence")] = "seq_no"
            with path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
        report = package_loss(mutated, aliases={"sequence": ("seq_no",)})
        assert all(t.method == "sequence" for t in report.trips)


# -- travel times ----------------------------------------------------------


def travel_dataset(trips, trace_modes=None):
    """trips: (direction, seconds, complete). Depart times spaced 300 s."""
    records = []
    for i, (direction, seconds, complete) in enumerate(trips):
        start = (10 + 300 * i) * 10**9
        end = start + round(seconds * 10**9)
        status = table(["timestamp_ns", "driving_status"],
                       [[start, "autonomous"], [end, "autonomous"]])
        progress = table(["timestamp_ns", "progress_permille"],
                         [[start, 0], [end, 1000 if complete else 900]])
        mission = table(["timestamp_ns", "mission_id", "direction"],
                        [[start, i + 1, direction]])
        records.append(TripRecord(
            "1970-01-01", i,
            {"pose": pose_table([start, end], [0.0, 100.0]),
             "driving_status": status, "mission_progress": progress,
             "current_mission": mission},
            {}, {}))
    trace_modes = trace_modes or [(0, "SHUTTLE_PRIORITY")]
    trace = table(["sim_time_ns", "mode"], trace_modes)
    return Dataset(Path("."), records, trace, None)


class TestTravelTimes:
    def test_mean_median_std_oracle(self):
        report = travel_times(travel_dataset(
            [("outbound", 100.0, True), ("outbound", 120.0, True)]))
        group = report.groups[0]
        assert group.n == 2
        assert group.mean_s == pytest.approx(110.0, abs=1e-9)
        assert group.median_s == pytest.approx(110.0, abs=1e-9)
        assert group.std_s == pytest.approx(math.sqrt(200.0), abs=1e-9)

    def test_quartiles_linear_interpolation(self):
        report = travel_times(travel_dataset(
            [("outbound", v, True) for v in (10.0, 20.0, 30.0, 40.0)]))
        group = report.groups[0]
        assert group.q1_s == pytest.approx(17.5)
        assert group.q3_s == pytest.approx(32.5)
        assert group.outliers_s == []

    def test_outliers_beyond_whiskers(self):
        values = [100.0] * 10 + [200.0]
        report = travel_times(travel_dataset(
            [("outbound", v, True) for v in values]))
        assert report.groups[0].outliers_s == [200.0]

    def test_incomplete_trips_excluded_and_counted(self):
        report = travel_times(travel_dataset(
            [("outbound", 100.0, True), ("outbound", 105.0, False),
             ("return", 130.0, True)]))
        assert report.total_trips == 3
        assert report.incomplete == 1
        assert report.included == 2
        assert sum(g.n for g in report.groups) == report.included

    def test_single_sample_group_flagged_with_zero_std(self):
        report = travel_times(travel_dataset([("return", 80.0, True)]))
        group = report.groups[0]
        assert group.single_sample
        assert group.std_s == 0.0

    def test_mode_read_from_trace_at_departure(self):
        report = travel_times(travel_dataset(
            [("outbound", 50.0, True), ("outbound", 60.0, True)],
            trace_modes=[(0, "SHUTTLE_PRIORITY"),
                         (200 * 10**9, "PEDESTRIAN_PRIORITY")]))
        modes = {g.mode: g.n for g in report.groups}
        assert modes == {"SHUTTLE_PRIORITY": 1, "PEDESTRIAN_PRIORITY": 1}

    def test_stats_agree_with_reference_implementation(self):
        rng = random.Random(9)
        for _ in range(25):
            values = [rng.uniform(40.0, 240.0)
                      for _ in range(rng.randint(2, 40))]
            group = analysis._stats("d", "m", values)
            assert group.mean_s == pytest.approx(statistics.fmean(values))
            assert group.median_s == pytest.approx(statistics.median(values))
            assert group.std_s == pytest.approx(statistics.stdev(values))
            ordered = sorted(values)
            for q, got in ((0.25, group.q1_s), (0.75, group.q3_s)):
                h = (len(ordered) - 1) * q
                lo, hi = math.floor(h), math.ceil(h)
                want = ordered[lo] + (ordered[hi] - ordered[lo]) * (h - lo)
                assert got == pytest.approx(want)

    def test_live_run_groups_by_direction(self, busy):
        _, root = busy
        report = travel_times(root)
        directions = {g.direction for g in report.groups}
        assert directions == {"outbound", "return"}
        assert report.incomplete == 0
        assert all(g.mode == "SHUTTLE_PRIORITY" for g in report.groups)

    def test_mode_inferred_without_world_trace(self, priority_pair,
                                               tmp_path):
        for mode, root in priority_pair.items():
            mutated = tmp_path / mode
            shutil.copytree(root, mutated)
            (mutated / "world_trace.csv").unlink()
            report = travel_times(mutated)
            assert [g.mode for g in report.groups] == [mode]


# -- non-compliance --------------------------------------------------------

TRACE_COLUMNS = ["sim_time_ns", "peds_in_zone", "crosswalk_state",
                 "dist_to_crossing_m", "speed", "shuttle_signal_state",
                 "peds_in_zone_ahead", "crossings_total", "crossings_red"]


def trace_dataset(rows, trips=()):
    trace = table(TRACE_COLUMNS, rows)
    return Dataset(Path("."), list(trips), trace, None)


def trace_row(tick, in_zone=0, state=6, dist=50.0, speed=2.0, signal=3,
              ahead=0, total=0, red=0):
    return [tick * TICK_NS, in_zone, state, f"{dist:.3f}", f"{speed:.3f}",
            signal, ahead, total, red]


class TestNonCompliance:
    def test_rate_oracle_65_of_208(self):
        rows = [trace_row(t) for t in range(9)]
        rows.append(trace_row(9, total=208, red=65))
        report = non_compliance(trace_dataset(rows))
        assert report.crossings_total == 208
        assert report.crossings_red == 65
        assert report.rate_pct == pytest.approx(31.25, abs=1e-12)

    def test_incident_interval_boundaries(self):
        rows = [trace_row(t, in_zone=1 if 10 <= t < 20 else 0,
                          state=3 if 10 <= t < 20 else 6,
                          dist=5.0) for t in range(40)]
        report = non_compliance(trace_dataset(rows))
        assert len(report.incidents) == 1
        incident = report.incidents[0]
        assert incident.start_ns == 10 * TICK_NS
        assert incident.end_ns == 20 * TICK_NS
        assert incident.duration_s == pytest.approx(1.0)
        assert incident.min_dist_m == pytest.approx(5.0)

    def test_separate_bursts_are_separate_incidents(self):
        active = set(range(5, 9)) | set(range(30, 33))
        rows = [trace_row(t, in_zone=int(t in active),
                          state=3 if t in active else 6, dist=8.0)
                for t in range(50)]
        report = non_compliance(trace_dataset(rows))
        assert len(report.incidents) == 2

    def test_incident_needs_all_three_conditions(self):
        variants = [
            dict(in_zone=0, state=3, dist=5.0),     # nobody in the zone
            dict(in_zone=1, state=6, dist=5.0),     # crosswalk shows go
            dict(in_zone=1, state=3, dist=45.0),    # shuttle far away
        ]
        for kwargs in variants:
            rows = [trace_row(t, **kwargs) for t in range(20)]
            assert non_compliance(trace_dataset(rows)).incidents == []

    def test_delay_counts_blocked_standstill_inside_trip_window(self):
        trip = TripRecord("1970-01-01", 0,
                          {"pose": pose_table([0, 10 * 10**9], [0.0, 50.0])},
                          {}, {})
        rows = [trace_row(t, speed=0.0 if t < 130 else 2.0,
                          signal=6, ahead=1 if t < 130 else 0)
                for t in range(200)]
        report = non_compliance(trace_dataset(rows, [trip]))
        # window ends at 10 s, standstill lasts 13 s: only 10.1 s count
        assert report.delays_s[0] == pytest.approx(10.1)
        assert report.max_delay_s == pytest.approx(10.1)

    def test_dataset_without_trace_raises(self):
        with pytest.raises(NoPhaseLog):
            non_compliance(Dataset(Path("."), [], None, None))

    def test_log_and_dataset_paths_agree(self, busy):
        log, root = busy
        from_log = non_compliance(log)
        from_ds = non_compliance(root)
        assert len(from_ds.incidents) == len(from_log.incidents)
        for got, want in zip(from_ds.incidents, from_log.incidents):
            assert (got.start_ns, got.end_ns) == (want.start_ns, want.end_ns)
            # trace distances round-trip through 3-decimal formatting
            assert got.min_dist_m == pytest.approx(want.min_dist_m, abs=1e-3)
        assert from_ds.crossings_total == from_log.crossings_total
        assert from_ds.crossings_red == from_log.crossings_red
        assert from_ds.delays_s == pytest.approx(from_log.delays_s)

    def test_compliant_population_produces_no_incidents(self, tmp_path):
        cfg = build_scenario({
            "duration_s": 120, "rng_seed": 13,
            "pedestrians": {"crossing": {"rate_per_s": 0.3,
                                         "p_compliant": 1.0},
                            "stops": {"rate_per_s": 0.0}},
            "trips": {"sequence": ["outbound"]},
        })
        root = tmp_path / "ds"
        write_dataset(run(cfg), root)
        report = non_compliance(root)
        assert report.incidents == []
        assert report.crossings_red == 0
        assert report.crossings_total > 0


# -- red fraction ----------------------------------------------------------


class TestRedFraction:
    def test_field_trial_scale_arithmetic(self):
        # 63 min 33 s of red over 19 h 56 min of operation
        fraction = immediate_cross_fraction(3813.0, 71760.0)
        assert 100 * fraction == pytest.approx(94.686, abs=0.001)

    def test_zero_horizon_means_always_crossable(self):
        assert immediate_cross_fraction(0.0, 0.0) == 1.0

    def test_synthetic_trace_fraction(self):
        rows = [trace_row(t, state=3 if t < 25 else 6) for t in range(100)]
        report = red_fraction(trace_dataset(rows))
        assert report.red_seconds == pytest.approx(2.5)
        assert report.horizon_seconds == pytest.approx(10.0)
        assert report.fraction_immediate_cross == pytest.approx(0.75)

    def test_log_and_dataset_paths_agree(self, busy):
        log, root = busy
        assert red_fraction(root).to_dict() == red_fraction(log).to_dict()

    def test_dataset_without_trace_raises(self):
        with pytest.raises(NoPhaseLog):
            red_fraction(Dataset(Path("."), [], None, None))


# -- emitters --------------------------------------------------------------


class TestEmitters:
    def test_reports_serialize_to_json(self, busy):
        log, root = busy
        for report in (package_loss(root), travel_times(root),
                       non_compliance(root), red_fraction(root)):
            parsed = json.loads(json.dumps(report.to_dict()))
            assert isinstance(parsed, dict)

    def test_loss_csv_one_row_per_trip(self, busy):
        _, root = busy
        report = package_loss(root)
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "date,trip,method,sent,received,loss_pct"
        assert len(lines) == 1 + len(report.trips)

    def test_heatmap_csv_one_row_per_cell(self, busy):
        _, root = busy
        report = package_loss(root)
        lines = heatmap_csv(report).strip().split("\n")
        assert lines[0] == "x_m,y_m,sent,lost,loss_pct"
        assert len(lines) == 1 + len(report.heatmap)

    def test_travel_csv_one_row_per_group(self, busy):
        _, root = busy
        report = travel_times(root)
        lines = report.to_csv().strip().split("\n")
        assert len(lines) == 1 + len(report.groups)

    def test_compliance_and_red_csv_headers(self, busy):
        _, root = busy
        assert non_compliance(root).to_csv().startswith(
            "start_s,end_s,duration_s,min_dist_m")
        assert red_fraction(root).to_csv().startswith(
            "red_seconds,horizon_seconds,fraction_immediate_cross")
