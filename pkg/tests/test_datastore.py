import random
import shutil

import pytest

from shuttlelab.codec import CamPayload
from shuttlelab.datastore import (
    ParseError,
    SchemaError,
    Table,
    dataset_info,
    read_dataset,
    read_table,
    segment_trips,
    validate_dataset,
    write_dataset,
    write_table,
)
from shuttlelab.sim import build_scenario, run

NS = 1_000_000_000


def cam_stream(entries):
    """(t_s, mission_id, progress) triples -> (ns, CamPayload) stream."""
    return [(int(t * NS), CamPayload(
        generation_delta_time=0, latitude=0, longitude=0,
        mission_id=mission, mission_progress=progress))
        for t, mission, progress in entries]


@pytest.fixture(scope="module")
def three_missions():
    cfg = build_scenario({
        "duration_s": 230.0,
        "rng_seed": 3,
        "pedestrians": {"crossing": {"rate_per_s": 0.1},
                        "stops": {"rate_per_s": 0.05}},
        "trips": {"sequence": ["outbound", "return", "outbound"]},
    })
    return run(cfg)


@pytest.fixture(scope="module")
def dataset_root(three_missions, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "dataset"
    spans, flags = write_dataset(three_missions, root)
    assert flags == []
    return root


def file_tree(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*")
                  if p.is_file())


class TestTableRoundTrip:
    def test_empty_table(self, tmp_path):
        path = tmp_path / "empty.csv"
        table = Table(["timestamp_ns", "x_m"], [])
        write_table(path, table)
        assert read_table(path, ["timestamp_ns", "x_m"]) == table

    def test_randomized_rows_rewrite_byte_identical(self, tmp_path):
        rng = random.Random(7)
        rows = [[str(k * 100), f"{rng.uniform(-50, 50):.3f}",
                 f"{rng.uniform(-3.2, 3.2):.6f}"] for k in range(1000)]
        table = Table(["timestamp_ns", "x_m", "heading_rad"], rows)
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        write_table(first, table)
        write_table(second, read_table(first))
        assert first.read_bytes() == second.read_bytes()

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bare.csv"
        path.write_text("")
        with pytest.raises(SchemaError, match="missing header"):
            read_table(path)

    def test_row_arity_mismatch(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ParseError, match="ragged.csv:3"):
            read_table(path)

    def test_shuffled_columns_rejected(self, tmp_path):
        path = tmp_path / "shuffled.csv"
        write_table(path, Table(["x_m", "timestamp_ns"], [["1.000", "0"]]))
        with pytest.raises(SchemaError, match="column 0"):
            read_table(path, ["timestamp_ns", "x_m"])

    def test_alias_resolves_renamed_column(self, tmp_path):
        path = tmp_path / "alias.csv"
        write_table(path, Table(["stamp", "x_m"], [["0", "1.000"]]))
        aliases = {"timestamp_ns": ("stamp",)}
        table = read_table(path, ["timestamp_ns", "x_m"], aliases)
        assert table.ints("timestamp_ns", aliases) == [0]
        with pytest.raises(SchemaError):
            read_table(path, ["timestamp_ns", "x_m"])

    def test_unmodeled_trailing_columns_preserved(self, tmp_path):
        path = tmp_path / "extra.csv"
        original = Table(["timestamp_ns", "x_m", "vendor_flag"],
                         [["0", "1.000", "yes"]])
        write_table(path, original)
        table = read_table(path, ["timestamp_ns", "x_m"])
        assert table == original


class TestSegmentation:
    def test_single_mission(self):
        stream = cam_stream([(0, 0, 0), (1, 7, 0), (2, 7, 500),
                             (3, 7, 1000), (4, 0, 0)])
        spans, flags = segment_trips(stream)
        assert flags == []
        assert [(s.mission_id, s.start_ns, s.end_ns) for s in spans] == [
            (7, 1 * NS, 3 * NS)]

    def test_no_mission_no_trips(self):
        spans, flags = segment_trips(cam_stream([(t, 0, 0)
                                                 for t in range(5)]))
        assert spans == [] and flags == []

    def test_dwell_broadcasts_do_not_reopen(self):
        stream = cam_stream([(0, 0, 0), (1, 7, 0), (2, 7, 1000),
                             (3, 7, 1000), (4, 7, 1000), (5, 0, 0)])
        spans, flags = segment_trips(stream)
        assert len(spans) == 1
        assert spans[0].end_ns == 2 * NS

    def test_overlapping_missions_close_and_flag(self):
        stream = cam_stream([(0, 0, 0), (1, 7, 0), (2, 7, 400),
                             (3, 8, 0), (4, 8, 1000)])
        spans, flags = segment_trips(stream)
        assert [s.index for s in spans] == [0, 1]
        assert [s.mission_id for s in spans] == [7, 8]
        assert spans[0].end_ns == 3 * NS == spans[1].start_ns
        assert any("overlapping" in f for f in flags)

    def test_new_mission_after_arrival_without_idle(self):
        stream = cam_stream([(0, 7, 0), (1, 7, 1000), (2, 7, 1000),
                             (3, 8, 0), (4, 8, 1000)])
        spans, flags = segment_trips(stream)
        assert flags == []
        assert [s.mission_id for s in spans] == [7, 8]

    def test_unterminated_mission_flagged(self):
        spans, flags = segment_trips(cam_stream([(0, 0, 0), (1, 7, 0),
                                                 (2, 7, 600)]))
        assert len(spans) == 1
        assert spans[0].end_ns == 2 * NS
        assert any("unterminated" in f for f in flags)

    def test_cam_stream_matches_world_rows(self, three_missions, dataset_root):
        cam_spans, _ = segment_trips(
            (tx.sim_time_ns, tx.message.payload)
            for tx in three_missions.cam_tx)
        assert len(cam_spans) == 3
        info = dataset_info(dataset_root)
        assert [(t["start_ns"], t["end_ns"]) for t in info["per_trip"]] == [
            (s.start_ns, s.end_ns) for s in cam_spans]


class TestWrittenDataset:
    def test_three_missions_give_three_trips(self, dataset_root):
        data = read_dataset(dataset_root)
        assert [t.index for t in data.trips] == [0, 1, 2]
        assert data.dates == ["1970-01-01"]

    def test_layout_validates(self, dataset_root):
        assert validate_dataset(dataset_root) == []

    def test_rewrite_is_byte_identical(self, dataset_root, tmp_path):
        copy_root = tmp_path / "copy"
        data = read_dataset(dataset_root)
        data.write(copy_root)
        assert file_tree(copy_root) == file_tree(dataset_root)
        for rel in file_tree(dataset_root):
            assert ((copy_root / rel).read_bytes()
                    == (dataset_root / rel).read_bytes()), rel

    def test_reread_equals_first_read(self, dataset_root, tmp_path):
        copy_root = tmp_path / "copy"
        data = read_dataset(dataset_root)
        data.write(copy_root)
        again = read_dataset(copy_root)
        assert again.trips == data.trips
        assert again.world_trace == data.world_trace
        assert again.received_cpm == data.received_cpm

    def test_trip_timestamps_lie_between_mission_cams(self, dataset_root):
        data = read_dataset(dataset_root)
        for trip in data.trips:
            cam = trip.shuttle["cam"]
            start, end = cam.ints("timestamp_ns")[0], cam.ints("timestamp_ns")[-1]
            assert cam.ints("mission_id")[0] != 0
            assert cam.ints("mission_progress")[-1] == 1000
            for tables in (trip.shuttle, trip.crossing,
                           *trip.bus_stops.values()):
                for table in tables.values():
                    stamps = table.ints("timestamp_ns")
                    assert all(start <= t <= end for t in stamps)

    def test_empty_cpm_rows_use_sentinel_index(self, dataset_root):
        data = read_dataset(dataset_root)
        table = data.trips[0].bus_stops["bus_stop_0"]["cpm"]
        index = table.index("object_index")
        id_index = table.index("object_id")
        empties = [row for row in table.rows if row[index] == "-1"]
        assert empties
        assert all(row[id_index] == "" for row in empties)
        # non-sentinel rows carry a full object
        assert all(row[id_index] != "" for row in table.rows
                   if row[index] != "-1")

    def test_run_level_annex_files(self, dataset_root, three_missions):
        data = read_dataset(dataset_root)
        assert len(data.world_trace.rows) == 2300
        assert data.received_cpm.rows
        received = set(data.received_cpm.ints("sequence"))
        sent = {tx.seq for records in three_missions.cpm_tx.values()
                for tx in records}
        assert received < sent  # lossy channel: subset, never invention

    def test_archive_off_is_refused(self):
        cfg = build_scenario({"duration_s": 10.0, "archive_radio": False,
                              "trips": {"sequence": []}})
        with pytest.raises(ValueError, match="archive_radio"):
            write_dataset(run(cfg), "/tmp/unused")

    def test_info_summary(self, dataset_root):
        info = dataset_info(dataset_root)
        assert info["trips"] == 3
        assert info["per_date"] == {"1970-01-01": 3}
        assert info["driving_seconds"] > 100.0
        directions = [t["direction"] for t in info["per_trip"]]
        assert directions == ["outbound", "return", "outbound"]
        assert sum(t["driving_s"] for t in info["per_trip"]) == pytest.approx(
            info["driving_seconds"])


class TestValidatorFindings:
    @pytest.fixture()
    def broken_root(self, dataset_root, tmp_path):
        root = tmp_path / "broken"
        shutil.copytree(dataset_root, root)
        return root

    def test_missing_file(self, broken_root):
        (broken_root / "1970-01-01/trip_0/shuttle/pose.csv").unlink()
        problems = validate_dataset(broken_root)
        assert any("shuttle" in p for p in problems)

    def test_stray_file(self, broken_root):
        (broken_root / "1970-01-01/trip_1/notes.txt").write_text("hi")
        problems = validate_dataset(broken_root)
        assert any("notes.txt" in p for p in problems)

    def test_non_contiguous_trip_indices(self, broken_root):
        (broken_root / "1970-01-01/trip_2").rename(
            broken_root / "1970-01-01/trip_9")
        problems = validate_dataset(broken_root)
        assert any("contiguous" in p for p in problems)

    def test_non_monotone_timestamps(self, broken_root):
        path = broken_root / "1970-01-01/trip_0/shuttle/velocity.csv"
        table = read_table(path)
        table.rows[0], table.rows[1] = table.rows[1], table.rows[0]
        write_table(path, table)
        problems = validate_dataset(broken_root)
        assert any("monotone" in p for p in problems)

    def test_header_tamper_detected(self, broken_root):
        path = broken_root / "1970-01-01/trip_0/pedestrian_crossing/spatem.csv"
        table = read_table(path)
        table.columns[0] = "time"
        write_table(path, table)
        problems = validate_dataset(broken_root)
        assert any("spatem" in p and "column 0" in p for p in problems)
