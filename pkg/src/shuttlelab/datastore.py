"""Per-trip CSV dataset: writer, loader, layout validator, trip segmentation.

Layout (one directory per recording day, one per trip):

    <root>/<date>/trip_<k>/
        infrastructure/bus_stop_{0,1}/{cpm,object_bounding_boxes,object_tracks}.csv
        pedestrian_crossing/{spatem,mapem}.csv
        shuttle/{pose,current_mission,planned_trajectory,velocity,
                 state_of_charge,door_status,mission_progress,driving_status,
                 steering_angle,cam}.csv

Trips are segmented by the mission field the shuttle broadcasts in its CAMs:
a trip opens on the first nonzero mission id after idle and closes when the
mission progress reaches full scale or the mission id returns to zero.

Two run-level files sit next to the date directories: world_trace.csv (one row
per simulation tick) and received_cpm.csv (the shuttle-side receive log that
makes the loss analysis exact). Numeric cells use fixed precision: timestamps
are integer nanoseconds, meters three decimals, radians six decimals, so a
write/read/write cycle is byte-identical.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

from .codec import (
    CamPayload,
    CpmPayload,
    MapemPayload,
    PerceivedObject,
    SpatemPayload,
)
from .sim.world import RunLog, WorldRow

DATE_PATTERN = re.compile(r"\d{4}-\d{2}-\d{2}$")
TRIP_PATTERN = re.compile(r"trip_(\d+)$")

ANNEX_FILES = ("world_trace.csv", "received_cpm.csv")


class SchemaError(ValueError):
    """Header does not match the expected column layout."""


class ParseError(ValueError):
    """A data row does not match the header arity."""


class OverlappingMission(ValueError):
    """A new mission id appeared while a trip was still open."""


# -- tables ----------------------------------------------------------------


@dataclass
class Table:
    """One CSV held verbatim: cells stay strings so rewrites are bytewise."""
    columns: list[str]
    rows: list[list[str]]

    def index(self, role: str, aliases: dict | None = None) -> int:
        for name in (role, *(aliases or {}).get(role, ())):
            if name in self.columns:
                return self.columns.index(name)
        raise SchemaError(f"no column for {role!r} in {self.columns}")

    def column(self, role: str, aliases: dict | None = None) -> list[str]:
        i = self.index(role, aliases)
        return [row[i] for row in self.rows]

    def ints(self, role: str, aliases: dict | None = None) -> list[int]:
        return [int(v) for v in self.column(role, aliases)]

    def floats(self, role: str, aliases: dict | None = None) -> list[float]:
        return [float(v) for v in self.column(role, aliases)]


def read_table(path: str | Path, required: list[str] | None = None,
               aliases: dict | None = None) -> Table:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        rows = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: {len(row)} cells for "
                                 f"{len(header)} columns")
            rows.append(row)
    table = Table(header, rows)
    if required is not None:
        _check_header(table, required, aliases, str(path))
    return table


def write_table(path: str | Path, table: Table) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(table.columns)
        writer.writerows(table.rows)


def _check_header(table: Table, required: list[str], aliases: dict | None,
                  where: str) -> None:
    # modeled columns must lead in canonical order; extras may follow and
    # are preserved opaquely
    aliases = aliases or {}
    for pos, role in enumerate(required):
        accepted = (role, *aliases.get(role, ()))
        found = table.columns[pos] if pos < len(table.columns) else "<missing>"
        if found not in accepted:
            raise SchemaError(f"{where}: column {pos} should be "
                              f"{role!r}, found {found!r}")


# -- column layouts --------------------------------------------------------

_CAM_FIELDS = [f.name for f in fields(CamPayload)]
_OBJECT_FIELDS = [f.name for f in fields(PerceivedObject)]

SHUTTLE_SCHEMAS = {
    "pose": ["timestamp_ns", "x_m", "y_m", "heading_rad"],
    "current_mission": ["timestamp_ns", "mission_id", "direction"],
    "planned_trajectory": ["timestamp_ns", "plan_index", "source",
                           "compute_duration_ns", "sample_index", "t_ns",
                           "x_m", "y_m", "heading_rad", "speed_mps"],
    "velocity": ["timestamp_ns", "speed_mps"],
    "state_of_charge": ["timestamp_ns", "soc_percent"],
    "door_status": ["timestamp_ns", "door_open"],
    "mission_progress": ["timestamp_ns", "progress_permille"],
    "driving_status": ["timestamp_ns", "driving_status"],
    "steering_angle": ["timestamp_ns", "steering_rad"],
    "cam": ["timestamp_ns", "sequence", "station_id", *_CAM_FIELDS],
}

BUS_STOP_SCHEMAS = {
    "cpm": ["timestamp_ns", "sequence", "station_id", "reference_time",
            "latitude", "longitude", "object_index", *_OBJECT_FIELDS],
    "object_tracks": ["timestamp_ns", "track_id", "x_m", "y_m",
                      "vx_mps", "vy_mps", "confidence"],
    "object_bounding_boxes": ["timestamp_ns", "track_id", "center_x_m",
                              "center_y_m", "half_extent_m"],
}

CROSSING_SCHEMAS = {
    "spatem": ["timestamp_ns", "sequence", "station_id", "intersection_id",
               "revision", "movement_index", "signal_group_id",
               "event_state", "time_to_change"],
    "mapem": ["timestamp_ns", "sequence", "station_id", "intersection_id",
              "latitude", "longitude", "lane_index", "lane_id", "lane_type",
              "signal_group_id", "node_index", "node_x_cm", "node_y_cm"],
}

WORLD_TRACE_COLUMNS = [f.name for f in fields(WorldRow)]
RECEIVED_CPM_COLUMNS = ["timestamp_ns", "station_id", "sequence"]

_TRACE_FLOAT3 = {"x", "y", "speed", "soc", "dist_to_crossing_m"}
_TRACE_FLOAT6 = {"heading", "steering_angle"}
_TRACE_TEXT = {"driving_status", "trajectory_source", "phase", "mode"}


def _m(value: float) -> str:
    return f"{value:.3f}"


def _rad(value: float) -> str:
    return f"{value:.6f}"


def _i(value) -> str:
    return str(int(value))


# -- mission segmentation --------------------------------------------------


@dataclass(frozen=True)
class TripSpan:
    index: int
    mission_id: int
    start_ns: int
    end_ns: int


def _segment(stream: Iterable[tuple[int, int, int]]
             ) -> tuple[list[TripSpan], list[str]]:
    """Apply the trip rule to a (time, mission_id, progress) stream."""
    spans: list[TripSpan] = []
    flags: list[str] = []
    open_span: tuple[int, int] | None = None   # (mission_id, start_ns)
    settled: int | None = None   # mission already closed but still broadcast
    last_ns: int | None = None

    def close(end_ns: int) -> None:
        mid, start = open_span
        spans.append(TripSpan(len(spans), mid, start, end_ns))

    for ns, mission, progress in stream:
        last_ns = ns
        if open_span is not None:
            mid = open_span[0]
            if mission not in (0, mid):
                flags.append(f"overlapping mission: {mission} opened while "
                             f"{mid} was still running at {ns}")
                close(ns)
                open_span = (mission, ns)
            elif mission == 0:
                close(ns)
                open_span, settled = None, None
            elif progress >= 1000:
                close(ns)
                open_span, settled = None, mid
            continue
        if mission == 0:
            settled = None
        elif mission != settled:
            open_span, settled = (mission, ns), None
    if open_span is not None:
        flags.append(f"unterminated mission {open_span[0]} closed at "
                     "stream end")
        close(last_ns)
    return spans, flags


def segment_trips(cams: Iterable[tuple[int, CamPayload]]
                  ) -> tuple[list[TripSpan], list[str]]:
    """Trip spans from an ordered (time_ns, CAM payload) stream."""
    return _segment((ns, cam.mission_id, cam.mission_progress)
                    for ns, cam in cams)


# -- writing ---------------------------------------------------------------


def _rows_in(rows: list[WorldRow], span: TripSpan) -> Iterator[WorldRow]:
    for row in rows:
        if span.start_ns <= row.sim_time_ns <= span.end_ns:
            yield row


def _tx_in(records, span: TripSpan):
    return [r for r in records if span.start_ns <= r.sim_time_ns <= span.end_ns]


def _shuttle_tables(log: RunLog, span: TripSpan) -> dict[str, Table]:
    direction_of = {t.mission_id: t.direction.value for t in log.trips}
    pose, mission, velocity, soc, door = [], [], [], [], []
    progress, status, steering = [], [], []
    for r in _rows_in(log.rows, span):
        ns = str(r.sim_time_ns)
        pose.append([ns, _m(r.x), _m(r.y), _rad(r.heading)])
        direction = direction_of.get(r.mission_id, "") if r.mission_id else ""
        mission.append([ns, str(r.mission_id), direction])
        velocity.append([ns, _m(r.speed)])
        soc.append([ns, _m(r.soc)])
        door.append([ns, _i(r.door_open)])
        progress.append([ns, str(r.mission_progress)])
        status.append([ns, r.driving_status])
        steering.append([ns, _rad(r.steering_angle)])

    plans = []
    for plan_index, plan in enumerate(
            p for p in log.planned_log
            if span.start_ns <= round(p.computed_at * 1e9) <= span.end_ns):
        computed_ns = str(round(plan.computed_at * 1e9))
        duration_ns = str(round(plan.compute_duration * 1e9))
        for sample_index, s in enumerate(plan.samples):
            plans.append([computed_ns, str(plan_index), plan.source.value,
                          duration_ns, str(sample_index),
                          str(round(s.t * 1e9)), _m(s.x), _m(s.y),
                          _rad(s.heading), _m(s.speed)])

    cam = []
    for tx in _tx_in(log.cam_tx, span):
        payload = tx.message.payload
        cam.append([str(tx.sim_time_ns), str(tx.seq),
                    str(tx.message.header.station_id),
                    *(_i(getattr(payload, name)) for name in _CAM_FIELDS)])

    data = {"pose": pose, "current_mission": mission,
            "planned_trajectory": plans, "velocity": velocity,
            "state_of_charge": soc, "door_status": door,
            "mission_progress": progress, "driving_status": status,
            "steering_angle": steering, "cam": cam}
    return {stem: Table(list(SHUTTLE_SCHEMAS[stem]), rows)
            for stem, rows in data.items()}


def _bus_stop_tables(log: RunLog, station_id: int,
                     span: TripSpan) -> dict[str, Table]:
    cpm = []
    for tx in _tx_in(log.cpm_tx[station_id], span):
        payload = tx.message.payload
        head = [str(tx.sim_time_ns), str(tx.seq),
                str(tx.message.header.station_id),
                str(payload.reference_time), str(payload.latitude),
                str(payload.longitude)]
        if not payload.objects:
            cpm.append([*head, "-1", *[""] * len(_OBJECT_FIELDS)])
        for index, obj in enumerate(payload.objects):
            cpm.append([*head, str(index),
                        *(_i(getattr(obj, name)) for name in _OBJECT_FIELDS)])

    tracks, boxes = [], []
    for snap in _tx_in(log.track_log[station_id], span):
        ns = str(snap.sim_time_ns)
        tracks.append([ns, str(snap.track_id), _m(snap.x), _m(snap.y),
                       _m(snap.vx), _m(snap.vy), str(snap.confidence)])
        boxes.append([ns, str(snap.track_id), _m(snap.x), _m(snap.y),
                      _m(snap.radius)])

    return {"cpm": Table(list(BUS_STOP_SCHEMAS["cpm"]), cpm),
            "object_tracks": Table(list(BUS_STOP_SCHEMAS["object_tracks"]),
                                   tracks),
            "object_bounding_boxes": Table(
                list(BUS_STOP_SCHEMAS["object_bounding_boxes"]), boxes)}


def _crossing_tables(log: RunLog, span: TripSpan) -> dict[str, Table]:
    spatem = []
    for tx in _tx_in(log.spatem_tx, span):
        payload = tx.message.payload
        head = [str(tx.sim_time_ns), str(tx.seq),
                str(tx.message.header.station_id),
                str(payload.intersection_id), str(payload.revision)]
        if not payload.movements:
            spatem.append([*head, "-1", "", "", ""])
        for index, move in enumerate(payload.movements):
            spatem.append([*head, str(index), str(move.signal_group_id),
                           _i(move.event_state), str(move.time_to_change)])

    mapem = []
    for tx in _tx_in(log.mapem_tx, span):
        payload = tx.message.payload
        head = [str(tx.sim_time_ns), str(tx.seq),
                str(tx.message.header.station_id),
                str(payload.intersection_id), str(payload.latitude),
                str(payload.longitude)]
        if not payload.lanes:
            mapem.append([*head, "-1", "", "", "", "", "", ""])
        for lane_index, lane in enumerate(payload.lanes):
            lane_head = [*head, str(lane_index), str(lane.lane_id),
                         _i(lane.lane_type), str(lane.signal_group_id)]
            for node_index, (x_cm, y_cm) in enumerate(lane.nodes):
                mapem.append([*lane_head, str(node_index), str(x_cm),
                              str(y_cm)])

    return {"spatem": Table(list(CROSSING_SCHEMAS["spatem"]), spatem),
            "mapem": Table(list(CROSSING_SCHEMAS["mapem"]), mapem)}


def _world_trace_table(log: RunLog) -> Table:
    rows = []
    for r in log.rows:
        cells = []
        for f in fields(WorldRow):
            v = getattr(r, f.name)
            if f.name in _TRACE_FLOAT3:
                cells.append(_m(v))
            elif f.name in _TRACE_FLOAT6:
                cells.append(_rad(v))
            elif f.name in _TRACE_TEXT:
                cells.append(str(v))
            else:
                cells.append(_i(v))
        rows.append(cells)
    return Table(list(WORLD_TRACE_COLUMNS), rows)


def _received_cpm_table(log: RunLog) -> Table:
    rows = [[str(rx.sim_time_ns), str(rx.sender_id), str(rx.seq)]
            for rx in log.shuttle_rx
            if isinstance(rx.message.payload, CpmPayload)]
    return Table(list(RECEIVED_CPM_COLUMNS), rows)


def write_dataset(log: RunLog, root: str | Path
                  ) -> tuple[list[TripSpan], list[str]]:
    """Write the full per-trip layout plus the run-level annex files.

    Returns the trip spans and any segmentation flags (overlapping or
    unterminated missions).
    """
    if not log.config.archive_radio:
        raise ValueError("dataset export needs archive_radio: the recorded "
                         "CAM/CPM/SPATEM logs are the dataset")
    root = Path(root)
    spans, flags = _segment((r.sim_time_ns, r.mission_id, r.mission_progress)
                            for r in log.rows)
    day = root / log.config.date
    for span in spans:
        trip_dir = day / f"trip_{span.index}"
        for stem, table in _shuttle_tables(log, span).items():
            write_table(trip_dir / "shuttle" / f"{stem}.csv", table)
        for spec in log.config.bus_stops:
            stop_dir = trip_dir / "infrastructure" / f"bus_stop_{spec.stop_id}"
            for stem, table in _bus_stop_tables(log, spec.station_id,
                                                span).items():
                write_table(stop_dir / f"{stem}.csv", table)
        for stem, table in _crossing_tables(log, span).items():
            write_table(trip_dir / "pedestrian_crossing" / f"{stem}.csv",
                        table)
    day.mkdir(parents=True, exist_ok=True)  # zero-trip runs keep the date dir
    write_table(root / "world_trace.csv", _world_trace_table(log))
    write_table(root / "received_cpm.csv", _received_cpm_table(log))
    return spans, flags


# -- reading ---------------------------------------------------------------


@dataclass
class TripRecord:
    date: str
    index: int
    shuttle: dict[str, Table]
    bus_stops: dict[str, dict[str, Table]]
    crossing: dict[str, Table]

    @property
    def start_ns(self) -> int | None:
        stamps = self.shuttle["pose"].ints("timestamp_ns")
        return stamps[0] if stamps else None

    @property
    def end_ns(self) -> int | None:
        stamps = self.shuttle["pose"].ints("timestamp_ns")
        return stamps[-1] if stamps else None


@dataclass
class Dataset:
    root: Path
    trips: list[TripRecord]
    world_trace: Table | None
    received_cpm: Table | None

    @property
    def dates(self) -> list[str]:
        return sorted({t.date for t in self.trips})

    def write(self, out_root: str | Path) -> None:
        """Re-emit every table verbatim under a new root."""
        out_root = Path(out_root)
        for trip in self.trips:
            trip_dir = out_root / trip.date / f"trip_{trip.index}"
            for stem, table in trip.shuttle.items():
                write_table(trip_dir / "shuttle" / f"{stem}.csv", table)
            for stop_name, stop_tables in trip.bus_stops.items():
                for stem, table in stop_tables.items():
                    write_table(trip_dir / "infrastructure" / stop_name
                                / f"{stem}.csv", table)
            for stem, table in trip.crossing.items():
                write_table(trip_dir / "pedestrian_crossing" / f"{stem}.csv",
                            table)
        if self.world_trace is not None:
            write_table(out_root / "world_trace.csv", self.world_trace)
        if self.received_cpm is not None:
            write_table(out_root / "received_cpm.csv", self.received_cpm)


def _date_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir()
                  if p.is_dir() and DATE_PATTERN.match(p.name))


def _trip_dirs(day: Path) -> list[tuple[int, Path]]:
    found = []
    for p in day.iterdir():
        match = TRIP_PATTERN.match(p.name)
        if p.is_dir() and match:
            found.append((int(match.group(1)), p))
    return sorted(found)


def read_trip(trip_dir: str | Path, date: str, index: int,
              aliases: dict | None = None, strict: bool = True) -> TripRecord:
    trip_dir = Path(trip_dir)

    def load(path: Path, required: list[str]) -> Table:
        return read_table(path, required if strict else None, aliases)

    shuttle = {stem: load(trip_dir / "shuttle" / f"{stem}.csv", required)
               for stem, required in SHUTTLE_SCHEMAS.items()}
    bus_stops = {}
    infra = trip_dir / "infrastructure"
    for stop_dir in sorted(p for p in infra.iterdir() if p.is_dir()):
        bus_stops[stop_dir.name] = {
            stem: load(stop_dir / f"{stem}.csv", required)
            for stem, required in BUS_STOP_SCHEMAS.items()}
    crossing = {stem: load(trip_dir / "pedestrian_crossing" / f"{stem}.csv",
                           required)
                for stem, required in CROSSING_SCHEMAS.items()}
    return TripRecord(date, index, shuttle, bus_stops, crossing)


def read_dataset(root: str | Path, aliases: dict | None = None,
                 strict: bool = True) -> Dataset:
    """Load every trip plus the annex tables.

    strict=False skips the header checks so partially conformant data can
    still be analysed by column name; validate_dataset stays the canon gate.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    trips = []
    for day in _date_dirs(root):
        for index, trip_dir in _trip_dirs(day):
            trips.append(read_trip(trip_dir, day.name, index, aliases,
                                   strict))
    world_trace = None
    if (root / "world_trace.csv").exists():
        world_trace = read_table(root / "world_trace.csv",
                                 WORLD_TRACE_COLUMNS if strict else None,
                                 aliases)
    received = None
    if (root / "received_cpm.csv").exists():
        received = read_table(root / "received_cpm.csv",
                              RECEIVED_CPM_COLUMNS if strict else None,
                              aliases)
    return Dataset(root, trips, world_trace, received)


# -- validation ------------------------------------------------------------


def _check_monotone(path: Path, problems: list[str],
                    required: list[str]) -> None:
    try:
        table = read_table(path, required)
    except (SchemaError, ParseError, OSError) as exc:
        problems.append(str(exc))
        return
    stamps = table.ints("timestamp_ns")
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        problems.append(f"{path}: timestamps not monotone")


def validate_dataset(root: str | Path) -> list[str]:
    """Check the tree against the canonical layout; empty list means pass."""
    root = Path(root)
    problems: list[str] = []
    if not root.is_dir():
        return [f"{root} is not a directory"]

    days = _date_dirs(root)
    if not days:
        problems.append(f"{root}: no date directories (YYYY-MM-DD)")
    for entry in root.iterdir():
        if entry in days or entry.name in ANNEX_FILES:
            continue
        problems.append(f"unexpected entry {entry.name!r} at dataset root")

    for day in days:
        indices = [i for i, _ in _trip_dirs(day)]
        if indices != list(range(len(indices))):
            problems.append(f"{day.name}: trip indices {indices} not "
                            "contiguous from 0")
        stray = [p.name for p in day.iterdir()
                 if not TRIP_PATTERN.match(p.name)]
        if stray:
            problems.append(f"{day.name}: unexpected entries {stray}")
        for _, trip_dir in _trip_dirs(day):
            problems.extend(_validate_trip(trip_dir))
    return problems


def _validate_trip(trip_dir: Path) -> list[str]:
    problems: list[str] = []
    label = f"{trip_dir.parent.name}/{trip_dir.name}"
    expected_dirs = {"infrastructure", "pedestrian_crossing", "shuttle"}
    present = {p.name for p in trip_dir.iterdir()}
    if present != expected_dirs:
        problems.append(f"{label}: entries {sorted(present)} != "
                        f"{sorted(expected_dirs)}")

    def check_files(folder: Path, schemas: dict[str, list[str]]) -> None:
        if not folder.is_dir():
            problems.append(f"{label}: missing {folder.name}/")
            return
        expected = {f"{stem}.csv" for stem in schemas}
        names = {p.name for p in folder.iterdir()}
        if names != expected:
            problems.append(f"{label}/{folder.name}: files {sorted(names)} "
                            f"!= {sorted(expected)}")
        for stem, required in schemas.items():
            if f"{stem}.csv" in names:
                _check_monotone(folder / f"{stem}.csv", problems, required)

    infra = trip_dir / "infrastructure"
    if infra.is_dir():
        stops = {p.name for p in infra.iterdir()}
        if stops != {"bus_stop_0", "bus_stop_1"}:
            problems.append(f"{label}/infrastructure: entries "
                            f"{sorted(stops)} != ['bus_stop_0', 'bus_stop_1']")
        for stop in sorted(stops):
            check_files(infra / stop, BUS_STOP_SCHEMAS)
    else:
        problems.append(f"{label}: missing infrastructure/")
    check_files(trip_dir / "pedestrian_crossing", CROSSING_SCHEMAS)
    check_files(trip_dir / "shuttle", SHUTTLE_SCHEMAS)
    return problems


# -- summary ---------------------------------------------------------------


def _driving_seconds(status_table: Table) -> float:
    stamps = status_table.ints("timestamp_ns")
    statuses = status_table.column("driving_status")
    if len(stamps) < 2:
        return 0.0
    deltas = sorted(b - a for a, b in zip(stamps, stamps[1:]) if b > a)
    if not deltas:
        return 0.0
    tick_ns = deltas[len(deltas) // 2]
    return sum(1 for s in statuses if s == "autonomous") * tick_ns / 1e9


def dataset_info(root: str | Path, aliases: dict | None = None) -> dict:
    """Trip count and driving-duration summary of a dataset directory."""
    data = read_dataset(root, aliases)
    per_trip = []
    total_s = 0.0
    for trip in data.trips:
        seconds = _driving_seconds(trip.shuttle["driving_status"])
        total_s += seconds
        directions = [d for d in trip.shuttle["current_mission"]
                      .column("direction") if d]
        per_trip.append({
            "date": trip.date,
            "index": trip.index,
            "driving_s": round(seconds, 3),
            "direction": directions[0] if directions else "",
            "start_ns": trip.start_ns,
            "end_ns": trip.end_ns,
        })
    per_date: dict[str, int] = {}
    for trip in data.trips:
        per_date[trip.date] = per_date.get(trip.date, 0) + 1
    return {
        "root": str(data.root),
        "dates": data.dates,
        "trips": len(data.trips),
        "per_date": per_date,
        "driving_seconds": round(total_s, 3),
        "per_trip": per_trip,
    }
