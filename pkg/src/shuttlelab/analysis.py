"""Metrics over recorded datasets: message loss, travel times, compliance.

All operations accept a dataset directory (or an already loaded Dataset);
non_compliance and red_fraction also work straight off an in-memory RunLog.
Reports are plain dataclasses with to_dict/to_csv emitters so the CLI can
print JSON or gnuplot-ready tables without reformatting.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datastore import Dataset, SchemaError, Table, read_dataset
from .sim.world import RunLog, measure_stop_delay

DEFAULT_CELL_M = 5.0
CPM_RATE_HZ = 10.0
INCIDENT_RANGE_M = 30.0
STANDSTILL_SPEED = 0.05


class MissingSequenceColumn(ValueError):
    """The tx log lacks a sequence column; only count-based loss possible."""


class NoPhaseLog(ValueError):
    """No crossing-phase record available for compliance analysis."""


def _as_dataset(source, aliases: dict | None) -> Dataset:
    # lenient read: analysis goes by column name, validation guards the canon
    if isinstance(source, Dataset):
        return source
    return read_dataset(Path(source), aliases, strict=False)


# -- package loss ----------------------------------------------------------


@dataclass(frozen=True)
class StationLoss:
    station_id: int
    sent: int
    received: int

    @property
    def loss_pct(self) -> float:
        return 100.0 * (1.0 - self.received / self.sent) if self.sent else 0.0


@dataclass
class TripLoss:
    date: str
    index: int
    stations: list[StationLoss]
    method: str                      # "sequence" or "expected_count"

    @property
    def sent(self) -> int:
        return sum(s.sent for s in self.stations)

    @property
    def received(self) -> int:
        return sum(s.received for s in self.stations)

    @property
    def loss_pct(self) -> float:
        return 100.0 * (1.0 - self.received / self.sent) if self.sent else 0.0


@dataclass
class LossReport:
    trips: list[TripLoss]
    cell_size_m: float
    heatmap: dict[tuple[int, int], tuple[int, int]]  # cell -> (sent, lost)
    notes: list[str] = field(default_factory=list)

    @property
    def total_sent(self) -> int:
        return sum(t.sent for t in self.trips)

    @property
    def total_received(self) -> int:
        return sum(t.received for t in self.trips)

    @property
    def loss_pct(self) -> float:
        sent = self.total_sent
        return 100.0 * (1.0 - self.total_received / sent) if sent else 0.0

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return ((cell[0] + 0.5) * self.cell_size_m,
                (cell[1] + 0.5) * self.cell_size_m)

    def max_cell(self) -> tuple[tuple[int, int], int, int] | None:
        """Cell with the most losses as (cell, sent, lost); None if lossless."""
        lossy = [(lost, cell, sent) for cell, (sent, lost)
                 in self.heatmap.items() if lost]
        if not lossy:
            return None
        lost, cell, sent = max(lossy)
        return cell, sent, lost

    def to_dict(self) -> dict:
        return {
            "cell_size_m": self.cell_size_m,
            "total_sent": self.total_sent,
            "total_received": self.total_received,
            "loss_pct": round(self.loss_pct, 3),
            "notes": list(self.notes),
            "trips": [{
                "date": t.date, "trip": t.index, "method": t.method,
                "sent": t.sent, "received": t.received,
                "loss_pct": round(t.loss_pct, 3),
                "stations": [{"station_id": s.station_id, "sent": s.sent,
                              "received": s.received,
                              "loss_pct": round(s.loss_pct, 3)}
                             for s in t.stations],
            } for t in self.trips],
            "heatmap": [{
                "x_m": round(self.cell_center(cell)[0], 3),
                "y_m": round(self.cell_center(cell)[1], 3),
                "sent": sent, "lost": lost,
            } for cell, (sent, lost) in sorted(self.heatmap.items())],
        }

    def to_csv(self) -> str:
        lines = ["date,trip,method,sent,received,loss_pct"]
        lines += [f"{t.date},{t.index},{t.method},{t.sent},{t.received},"
                  f"{t.loss_pct:.3f}" for t in self.trips]
        return "\n".join(lines) + "\n"


def heatmap_csv(report: LossReport) -> str:
    lines = ["x_m,y_m,sent,lost,loss_pct"]
    for cell, (sent, lost) in sorted(report.heatmap.items()):
        x, y = report.cell_center(cell)
        pct = 100.0 * lost / sent if sent else 0.0
        lines.append(f"{x:.3f},{y:.3f},{sent},{lost},{pct:.3f}")
    return "\n".join(lines) + "\n"


def _interpolate_pose(stamps: list[int], xs: list[float], ys: list[float],
                      t_ns: int) -> tuple[float, float]:
    i = bisect_right(stamps, t_ns)
    if i == 0:
        return xs[0], ys[0]
    if i == len(stamps):
        return xs[-1], ys[-1]
    t0, t1 = stamps[i - 1], stamps[i]
    w = (t_ns - t0) / (t1 - t0) if t1 > t0 else 0.0
    return (xs[i - 1] + (xs[i] - xs[i - 1]) * w,
            ys[i - 1] + (ys[i] - ys[i - 1]) * w)


def _sequence_loss(trip, received_seqs: set[int], aliases: dict | None,
                   cell: float, heatmap: dict) -> list[StationLoss]:
    pose = trip.shuttle["pose"]
    stamps = pose.ints("timestamp_ns", aliases)
    xs = pose.floats("x_m", aliases)
    ys = pose.floats("y_m", aliases)
    stations = []
    for stop_tables in trip.bus_stops.values():
        cpm = stop_tables["cpm"]
        try:
            seq_i = cpm.index("sequence", aliases)
        except SchemaError:
            raise MissingSequenceColumn(
                f"trip {trip.index}: cpm.csv has no sequence column")
        ns_i = cpm.index("timestamp_ns", aliases)
        station_i = cpm.index("station_id", aliases)
        station_id = int(cpm.rows[0][station_i]) if cpm.rows else 0
        tx: dict[int, int] = {}      # sequence -> tx time
        for row in cpm.rows:
            tx[int(row[seq_i])] = int(row[ns_i])
        received = sum(1 for seq in tx if seq in received_seqs)
        stations.append(StationLoss(station_id, len(tx), received))
        if stamps:
            for seq, t_ns in tx.items():
                x, y = _interpolate_pose(stamps, xs, ys, t_ns)
                key = (math.floor(x / cell), math.floor(y / cell))
                sent, lost = heatmap.get(key, (0, 0))
                heatmap[key] = (sent + 1,
                                lost + (0 if seq in received_seqs else 1))
    return stations


def _expected_count_loss(trip, data: Dataset,
                         aliases: dict | None) -> list[StationLoss]:
    start, end = trip.start_ns, trip.end_ns
    duration_s = (end - start) / 1e9 if start is not None else 0.0
    expected = round(duration_s * CPM_RATE_HZ) + 1
    rx = data.received_cpm
    rx_ns = rx.ints("timestamp_ns", aliases)
    rx_station = rx.ints("station_id", aliases)
    stations = []
    for stop_tables in trip.bus_stops.values():
        cpm = stop_tables["cpm"]
        station_i = cpm.index("station_id", aliases)
        station_id = int(cpm.rows[0][station_i]) if cpm.rows else 0
        received = sum(1 for ns, st in zip(rx_ns, rx_station)
                       if st == station_id and start <= ns <= end + 10**7)
        stations.append(StationLoss(station_id, expected,
                                    min(received, expected)))
    return stations


def package_loss(source, cell_size_m: float = DEFAULT_CELL_M,
                 aliases: dict | None = None) -> LossReport:
    """Per-trip CPM loss from sequence bookkeeping, plus a spatial heatmap.

    Every transmitted sequence is attributed to the grid cell under the
    shuttle's interpolated position at send time, so cell losses sum to the
    per-trip totals exactly. Trips whose tx log lacks a sequence column fall
    back to an expected-count estimate and are flagged lower-confidence.
    """
    data = _as_dataset(source, aliases)
    if data.received_cpm is None:
        raise FileNotFoundError("received_cpm.csv missing: no receive log "
                                "to compare transmissions against")
    heatmap: dict[tuple[int, int], tuple[int, int]] = {}
    trips, notes = [], []
    try:
        received_seqs = set(data.received_cpm.ints("sequence", aliases))
    except SchemaError:
        received_seqs = None
        notes.append("received_cpm.csv has no sequence column; using "
                     "expected-count for all trips (lower confidence)")
    for trip in data.trips:
        try:
            if received_seqs is None:
                raise MissingSequenceColumn("no receive-side sequences")
            stations = _sequence_loss(trip, received_seqs, aliases,
                                      cell_size_m, heatmap)
            method = "sequence"
        except MissingSequenceColumn as exc:
            stations = _expected_count_loss(trip, data, aliases)
            method = "expected_count"
            if received_seqs is not None:
                notes.append(f"{exc}; fell back to expected-count "
                             "(lower confidence)")
        trips.append(TripLoss(trip.date, trip.index, stations, method))
    return LossReport(trips, cell_size_m, heatmap, notes)


# -- travel times ----------------------------------------------------------


@dataclass
class GroupStats:
    direction: str
    mode: str
    n: int
    mean_s: float
    median_s: float
    std_s: float
    q1_s: float
    q3_s: float
    outliers_s: list[float]
    single_sample: bool = False

    def to_dict(self) -> dict:
        return {"direction": self.direction, "mode": self.mode, "n": self.n,
                "mean_s": round(self.mean_s, 3),
                "median_s": round(self.median_s, 3),
                "std_s": round(self.std_s, 3),
                "q1_s": round(self.q1_s, 3), "q3_s": round(self.q3_s, 3),
                "outliers_s": [round(v, 3) for v in self.outliers_s],
                "single_sample": self.single_sample}


@dataclass
class TravelTimeReport:
    groups: list[GroupStats]
    overall: GroupStats | None
    total_trips: int
    included: int
    incomplete: int

    def to_dict(self) -> dict:
        return {"total_trips": self.total_trips, "included": self.included,
                "incomplete": self.incomplete,
                "overall": self.overall.to_dict() if self.overall else None,
                "groups": [g.to_dict() for g in self.groups]}

    def to_csv(self) -> str:
        lines = ["direction,mode,n,mean_s,median_s,std_s,q1_s,q3_s,outliers"]
        for g in self.groups:
            outliers = ";".join(f"{v:.3f}" for v in g.outliers_s)
            lines.append(f"{g.direction},{g.mode},{g.n},{g.mean_s:.3f},"
                         f"{g.median_s:.3f},{g.std_s:.3f},{g.q1_s:.3f},"
                         f"{g.q3_s:.3f},{outliers}")
        return "\n".join(lines) + "\n"


def _stats(direction: str, mode: str, values: list[float]) -> GroupStats:
    arr = np.asarray(values, dtype=float)
    single = len(values) == 1
    std = float(np.std(arr, ddof=1)) if len(values) > 1 else 0.0
    q1, q3 = (float(v) for v in np.percentile(arr, [25, 75]))
    iqr = q3 - q1
    outliers = [float(v) for v in arr
                if v < q1 - 1.5 * iqr or v > q3 + 1.5 * iqr]
    return GroupStats(direction, mode, len(values), float(np.mean(arr)),
                      float(np.median(arr)), std, q1, q3, outliers,
                      single_sample=single)


def _trace_value_at(trace: Table, column: str, t_ns: int,
                    aliases: dict | None) -> str:
    stamps = trace.ints("sim_time_ns", aliases)
    values = trace.column(column, aliases)
    i = bisect_right(stamps, t_ns) - 1
    return values[max(i, 0)]


def _infer_mode(trip, aliases: dict | None) -> str:
    """Red-on-approach heuristic for datasets without a world trace.

    A trip that stands still with closed doors while its own signal group
    shows stop was held at the light, which only happens without priority.
    """
    spatem = trip.crossing["spatem"]
    group_i = spatem.index("signal_group_id", aliases)
    state_i = spatem.index("event_state", aliases)
    ns_i = spatem.index("timestamp_ns", aliases)
    shuttle_red = {}
    for row in spatem.rows:
        if row[group_i] == "1":
            shuttle_red[int(row[ns_i])] = row[state_i] == "3"
    red_stamps = sorted(shuttle_red)
    if not red_stamps:
        return "unknown"

    speed = trip.shuttle["velocity"]
    doors = trip.shuttle["door_status"].ints("door_open", aliases)
    stamps = speed.ints("timestamp_ns", aliases)
    speeds = speed.floats("speed_mps", aliases)
    held_ns = 0
    tick = stamps[1] - stamps[0] if len(stamps) > 1 else 0
    for t, v, door in zip(stamps, speeds, doors):
        if v >= STANDSTILL_SPEED or door:
            continue
        i = bisect_right(red_stamps, t) - 1
        if i >= 0 and shuttle_red[red_stamps[i]]:
            held_ns += tick
    return ("PEDESTRIAN_PRIORITY" if held_ns >= 2 * 10**9
            else "SHUTTLE_PRIORITY")


def travel_times(source, aliases: dict | None = None) -> TravelTimeReport:
    """Per-(direction, mode) travel-time statistics across dataset trips.

    Travel time spans the first to the last autonomously driven sample of a
    trip. Trips that never reach full mission progress are excluded and
    counted as incomplete.
    """
    data = _as_dataset(source, aliases)
    samples: dict[tuple[str, str], list[float]] = {}
    all_values: list[float] = []
    incomplete = 0
    for trip in data.trips:
        progress = trip.shuttle["mission_progress"].ints(
            "progress_permille", aliases)
        if not progress or progress[-1] < 1000:
            incomplete += 1
            continue
        status = trip.shuttle["driving_status"]
        stamps = status.ints("timestamp_ns", aliases)
        auto = [t for t, s in zip(stamps,
                                  status.column("driving_status", aliases))
                if s == "autonomous"]
        if not auto:
            incomplete += 1
            continue
        seconds = (auto[-1] - auto[0]) / 1e9
        directions = [d for d in trip.shuttle["current_mission"]
                      .column("direction", aliases) if d]
        direction = directions[0] if directions else "unknown"
        if data.world_trace is not None:
            mode = _trace_value_at(data.world_trace, "mode", auto[0], aliases)
        else:
            mode = _infer_mode(trip, aliases)
        samples.setdefault((direction, mode), []).append(seconds)
        all_values.append(seconds)
    groups = [_stats(direction, mode, values)
              for (direction, mode), values in sorted(samples.items())]
    overall = _stats("all", "all", all_values) if all_values else None
    return TravelTimeReport(groups, overall, len(data.trips),
                            len(all_values), incomplete)


# -- non-compliance --------------------------------------------------------


@dataclass(frozen=True)
class Incident:
    start_ns: int
    end_ns: int
    min_dist_m: float

    @property
    def duration_s(self) -> float:
        return (self.end_ns - self.start_ns) / 1e9


@dataclass
class ComplianceReport:
    incidents: list[Incident]
    crossings_total: int
    crossings_red: int
    delays_s: list[float]

    @property
    def rate_pct(self) -> float:
        if not self.crossings_total:
            return 0.0
        return 100.0 * self.crossings_red / self.crossings_total

    @property
    def max_delay_s(self) -> float:
        return max(self.delays_s, default=0.0)

    def to_dict(self) -> dict:
        return {
            "incidents": [{"start_ns": i.start_ns, "end_ns": i.end_ns,
                           "duration_s": round(i.duration_s, 3),
                           "min_dist_m": round(i.min_dist_m, 3)}
                          for i in self.incidents],
            "incident_count": len(self.incidents),
            "crossings_total": self.crossings_total,
            "crossings_red": self.crossings_red,
            "rate_pct": round(self.rate_pct, 3),
            "delays_s": [round(d, 3) for d in self.delays_s],
            "max_delay_s": round(self.max_delay_s, 3),
        }

    def to_csv(self) -> str:
        lines = ["start_s,end_s,duration_s,min_dist_m"]
        lines += [f"{i.start_ns / 1e9:.1f},{i.end_ns / 1e9:.1f},"
                  f"{i.duration_s:.3f},{i.min_dist_m:.3f}"
                  for i in self.incidents]
        return "\n".join(lines) + "\n"


def _intervals(ticks: list[tuple[int, bool, float]],
               tick_ns: int) -> list[Incident]:
    incidents = []
    open_start = None
    min_dist = math.inf
    last_ns = 0
    for ns, active, dist in ticks:
        if active:
            if open_start is None:
                open_start, min_dist = ns, dist
            else:
                min_dist = min(min_dist, dist)
            last_ns = ns
        elif open_start is not None:
            incidents.append(Incident(open_start, last_ns + tick_ns, min_dist))
            open_start = None
    if open_start is not None:
        incidents.append(Incident(open_start, last_ns + tick_ns, min_dist))
    return incidents


def non_compliance(source, aliases: dict | None = None) -> ComplianceReport:
    """Red-crossing incidents and the shuttle delays they caused.

    An incident is a maximal interval with a pedestrian inside the conflict
    zone while the crosswalk shows stop and the shuttle is within 30 m.
    Works off a RunLog directly or off a dataset's world trace.
    """
    if isinstance(source, RunLog):
        log = source
        ticks = [(r.sim_time_ns,
                  r.peds_in_zone > 0 and r.crosswalk_state == 3
                  and r.dist_to_crossing_m <= INCIDENT_RANGE_M,
                  r.dist_to_crossing_m) for r in log.rows]
        incidents = _intervals(ticks, log.config.tick_ns)
        delays = [measure_stop_delay(log, trip) for trip in log.trips
                  if trip.complete_ns is not None]
        last = log.rows[-1] if log.rows else None
        return ComplianceReport(incidents,
                                last.crossings_total if last else 0,
                                last.crossings_red if last else 0, delays)
    data = _as_dataset(source, aliases)
    trace = data.world_trace
    if trace is None or not trace.rows:
        raise NoPhaseLog("no world trace: crossing phases unavailable")
    stamps = trace.ints("sim_time_ns", aliases)
    in_zone = trace.ints("peds_in_zone", aliases)
    state = trace.ints("crosswalk_state", aliases)
    dist = trace.floats("dist_to_crossing_m", aliases)
    speed = trace.floats("speed", aliases)
    signal = trace.ints("shuttle_signal_state", aliases)
    ahead = trace.ints("peds_in_zone_ahead", aliases)
    tick_ns = stamps[1] - stamps[0] if len(stamps) > 1 else 10**8
    tick_s = tick_ns / 1e9
    ticks = [(t, z > 0 and s == 3 and d <= INCIDENT_RANGE_M, d)
             for t, z, s, d in zip(stamps, in_zone, state, dist)]
    incidents = _intervals(ticks, tick_ns)
    delays = []
    for trip in data.trips:
        if trip.start_ns is None:
            continue
        delays.append(sum(
            tick_s for t, v, sig, ah in zip(stamps, speed, signal, ahead)
            if trip.start_ns <= t <= trip.end_ns
            and v < STANDSTILL_SPEED and sig == 6 and ah > 0))
    total = trace.ints("crossings_total", aliases)[-1]
    red = trace.ints("crossings_red", aliases)[-1]
    return ComplianceReport(incidents, total, red, delays)


# -- red fraction ----------------------------------------------------------


@dataclass
class RedFractionReport:
    red_seconds: float
    horizon_seconds: float

    @property
    def fraction_immediate_cross(self) -> float:
        if not self.horizon_seconds:
            return 1.0
        return 1.0 - self.red_seconds / self.horizon_seconds

    def to_dict(self) -> dict:
        return {"red_seconds": round(self.red_seconds, 3),
                "horizon_seconds": round(self.horizon_seconds, 3),
                "fraction_immediate_cross":
                    round(self.fraction_immediate_cross, 5)}

    def to_csv(self) -> str:
        return ("red_seconds,horizon_seconds,fraction_immediate_cross\n"
                f"{self.red_seconds:.3f},{self.horizon_seconds:.3f},"
                f"{self.fraction_immediate_cross:.5f}\n")


def immediate_cross_fraction(red_seconds: float,
                             horizon_seconds: float) -> float:
    """Fraction of the horizon in which pedestrians may cross at once."""
    return RedFractionReport(red_seconds, horizon_seconds) \
        .fraction_immediate_cross


def red_fraction(source, aliases: dict | None = None) -> RedFractionReport:
    """Share of time the crosswalk showed stop, over the whole record."""
    if isinstance(source, RunLog):
        red = sum(1 for r in source.rows if r.crosswalk_state == 3)
        tick_s = source.config.tick_s
        return RedFractionReport(red * tick_s, len(source.rows) * tick_s)
    data = _as_dataset(source, aliases)
    trace = data.world_trace
    if trace is None or not trace.rows:
        raise NoPhaseLog("no world trace: crossing phases unavailable")
    stamps = trace.ints("sim_time_ns", aliases)
    tick_s = (stamps[1] - stamps[0]) / 1e9 if len(stamps) > 1 else 0.1
    red = sum(1 for s in trace.ints("crosswalk_state", aliases) if s == 3)
    return RedFractionReport(red * tick_s, len(stamps) * tick_s)
