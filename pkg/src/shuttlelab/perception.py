"""Bus-stop perception pipeline.

Scan points -> background subtraction -> clustering -> classification ->
tracking -> CPM emission. The learned neural segmentation of the original
deployment is replaced by an occupancy-grid background model plus size
heuristics; synthetic scans carry ground-truth labels for oracle tests only.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .codec import MAX_CPM_OBJECTS, CpmPayload, ObjectClass, PerceivedObject
from .geo import GeoAnchor, to_units
from .geometry import Point

log = logging.getLogger(__name__)

CELL_SIZE = 0.2           # m, background grid
OCCUPANCY_THRESHOLD = 0.5
LEARN_FRAMES = 50
CLUSTER_EPS = 0.4         # m
CLUSTER_MIN_PTS = 5
GATE = 1.0                # m, association gate
VELOCITY_ALPHA = 0.5      # EMA weight of the newest velocity sample
M_CONFIRM = 3
K_DELETE = 5
PED_RADIUS_MIN = 0.1      # m
PED_RADIUS_MAX = 0.5
PED_HEIGHT_SPAN_MIN = 0.8
SENSOR_RANGE = 50.0       # m, horizontal


class Label(enum.Enum):
    BACKGROUND = "background"
    PEDESTRIAN = "pedestrian"
    OTHER = "other"


@dataclass(frozen=True)
class ScanPoint:
    x: float
    y: float
    z: float
    label: Label = Label.OTHER


@dataclass(frozen=True)
class Scan:
    sensor_id: int
    sim_time_ns: int
    points: tuple[ScanPoint, ...]

    def validate(self, sensor_height: float | None = None) -> None:
        for p in self.points:
            if math.hypot(p.x, p.y) > SENSOR_RANGE:
                raise ValueError(f"point ({p.x}, {p.y}) beyond {SENSOR_RANGE} m range")
            if sensor_height is not None and p.z > sensor_height:
                raise ValueError(f"point z={p.z} above sensor height {sensor_height}")


class InsufficientFrames(ValueError):
    """Fewer learning scans than the configured minimum."""


class NonPositiveDt(ValueError):
    pass


def _cell_of(x: float, y: float, cell_size: float) -> tuple[int, int]:
    return (math.floor(x / cell_size), math.floor(y / cell_size))


@dataclass(frozen=True)
class BackgroundModel:
    cell_size: float
    occupancy: dict[tuple[int, int], float]
    frames_learned: int

    def ratio(self, x: float, y: float) -> float:
        return self.occupancy.get(_cell_of(x, y, self.cell_size), 0.0)


def learn_background(scans: list[Scan], cell_size: float = CELL_SIZE,
                     min_frames: int = LEARN_FRAMES) -> BackgroundModel:
    """Occupancy ratio per cell = fraction of scans with >= 1 point in it."""
    if len(scans) < min_frames:
        raise InsufficientFrames(f"{len(scans)} learning scans < minimum {min_frames}")
    counts: dict[tuple[int, int], int] = {}
    for scan in scans:
        seen = {_cell_of(p.x, p.y, cell_size) for p in scan.points}
        for cell in seen:
            counts[cell] = counts.get(cell, 0) + 1
    n = len(scans)
    return BackgroundModel(cell_size, {c: k / n for c, k in counts.items()}, n)


def subtract_background(scan: Scan, model: BackgroundModel,
                        threshold: float = OCCUPANCY_THRESHOLD) -> list[ScanPoint]:
    """Retains exactly the points whose cell occupancy ratio < threshold."""
    return [p for p in scan.points if model.ratio(p.x, p.y) < threshold]


def cluster(points: list[ScanPoint], eps: float = CLUSTER_EPS,
            min_pts: int = CLUSTER_MIN_PTS) -> list[list[ScanPoint]]:
    """Single-linkage Euclidean clustering in the horizontal plane.

    Grid buckets of size eps limit the candidate pairs: two points within eps
    are never more than one cell apart on either axis. Output is ordered by
    cluster centroid (x, then y) for determinism.
    """
    if not points:
        return []
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, p in enumerate(points):
        buckets.setdefault(_cell_of(p.x, p.y, eps), []).append(i)
    visited = [False] * len(points)
    clusters: list[list[ScanPoint]] = []
    for start in range(len(points)):
        if visited[start]:
            continue
        visited[start] = True
        members = [start]
        queue = deque([start])
        while queue:
            i = queue.popleft()
            pi = points[i]
            ci, cj = _cell_of(pi.x, pi.y, eps)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    for j in buckets.get((ci + di, cj + dj), ()):
                        if visited[j]:
                            continue
                        pj = points[j]
                        if math.hypot(pi.x - pj.x, pi.y - pj.y) <= eps:
                            visited[j] = True
                            members.append(j)
                            queue.append(j)
        if len(members) >= min_pts:
            clusters.append([points[i] for i in sorted(members)])
    def centroid(c: list[ScanPoint]) -> tuple[float, float]:
        return (sum(p.x for p in c) / len(c), sum(p.y for p in c) / len(c))
    clusters.sort(key=centroid)
    return clusters


@dataclass(frozen=True)
class Detection:
    position: Point
    footprint_radius: float
    height_span: float
    classification: ObjectClass
    n_points: int


def classify(points: list[ScanPoint]) -> Detection:
    """Pedestrian iff footprint radius in [0.1, 0.5] m and height span >= 0.8 m."""
    cx = sum(p.x for p in points) / len(points)
    cy = sum(p.y for p in points) / len(points)
    radius = max(math.hypot(p.x - cx, p.y - cy) for p in points)
    z_values = [p.z for p in points]
    span = max(z_values) - min(z_values)
    pedestrian = PED_RADIUS_MIN <= radius <= PED_RADIUS_MAX and span >= PED_HEIGHT_SPAN_MIN
    return Detection(
        position=(cx, cy),
        footprint_radius=radius,
        height_span=span,
        classification=ObjectClass.PEDESTRIAN if pedestrian else ObjectClass.UNKNOWN,
        n_points=len(points),
    )


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass
class Track:
    track_id: int
    position: Point
    velocity: tuple[float, float]
    footprint_radius: float
    classification: ObjectClass
    hits: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE

    @property
    def confidence(self) -> int:
        return min(100, 20 * self.hits)

    def predicted(self, dt: float) -> Point:
        return (self.position[0] + self.velocity[0] * dt,
                self.position[1] + self.velocity[1] * dt)


class Tracker:
    """Greedy nearest-neighbor association with M-of-N confirmation.

    Track ids are strictly increasing and never reused within a run.
    """

    def __init__(self, gate: float = GATE, alpha: float = VELOCITY_ALPHA,
                 m_confirm: int = M_CONFIRM, k_delete: int = K_DELETE):
        self.gate = gate
        self.alpha = alpha
        self.m_confirm = m_confirm
        self.k_delete = k_delete
        self.tracks: list[Track] = []
        self.retired: list[Track] = []
        self._next_id = 1
        self.id_switches_guard = 0  # ids handed out, monotone by construction

    def update(self, detections: list[Detection], dt: float) -> list[Track]:
        if dt <= 0:
            raise NonPositiveDt(f"dt={dt}")
        pairs = []
        for ti, track in enumerate(self.tracks):
            px, py = track.predicted(dt)
            for di, det in enumerate(detections):
                d = math.hypot(det.position[0] - px, det.position[1] - py)
                if d <= self.gate:
                    # ties resolved by lower indices to keep runs deterministic
                    pairs.append((d, ti, di))
        pairs.sort()
        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        for d, ti, di in pairs:
            if ti in matched_tracks or di in matched_dets:
                continue
            matched_tracks.add(ti)
            matched_dets.add(di)
            track = self.tracks[ti]
            det = detections[di]
            v_inst = ((det.position[0] - track.position[0]) / dt,
                      (det.position[1] - track.position[1]) / dt)
            track.velocity = (
                self.alpha * v_inst[0] + (1 - self.alpha) * track.velocity[0],
                self.alpha * v_inst[1] + (1 - self.alpha) * track.velocity[1])
            track.position = det.position
            track.footprint_radius = det.footprint_radius
            track.classification = det.classification
            track.hits += 1
            track.misses = 0
            if track.status is TrackStatus.TENTATIVE and track.hits >= self.m_confirm:
                track.status = TrackStatus.CONFIRMED
        survivors: list[Track] = []
        for ti, track in enumerate(self.tracks):
            if ti not in matched_tracks:
                track.misses += 1
                if track.misses >= self.k_delete:
                    track.status = TrackStatus.DEAD
                    self.retired.append(track)
                    continue
            survivors.append(track)
        for di, det in enumerate(detections):
            if di in matched_dets:
                continue
            track = Track(
                track_id=self._next_id,
                position=det.position,
                velocity=(0.0, 0.0),
                footprint_radius=det.footprint_radius,
                classification=det.classification,
            )
            self._next_id += 1
            survivors.append(track)
        self.tracks = survivors
        return self.tracks

    @property
    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]

    def all_ids_ever(self) -> list[int]:
        return sorted({t.track_id for t in self.tracks} | {t.track_id for t in self.retired})


def emit_cpm(tracks: list[Track], sim_time_ns: int, anchor: GeoAnchor,
             station_enu: Point, max_objects: int = MAX_CPM_OBJECTS,
             on_truncate=None) -> CpmPayload:
    """Build one CPM from confirmed tracks; positions are station-relative meters."""
    tracks = sorted(tracks, key=lambda t: t.track_id)
    if len(tracks) > max_objects:
        dropped = len(tracks) - max_objects
        log.warning("CPM truncated: %d objects over the %d cap", dropped, max_objects)
        if on_truncate is not None:
            on_truncate(dropped)
        tracks = tracks[:max_objects]
    lat, lon = anchor.enu_to_units(*station_enu)
    objects = tuple(
        PerceivedObject(
            object_id=t.track_id,
            dx=to_units(t.position[0], 100),
            dy=to_units(t.position[1], 100),
            vx=to_units(t.velocity[0], 100),
            vy=to_units(t.velocity[1], 100),
            footprint_radius=to_units(t.footprint_radius, 100),
            classification=t.classification,
            confidence=t.confidence,
        )
        for t in tracks
    )
    return CpmPayload(reference_time=sim_time_ns // 1_000_000,
                      latitude=lat, longitude=lon, objects=objects)


@dataclass
class PipelineConfig:
    cell_size: float = CELL_SIZE
    occupancy_threshold: float = OCCUPANCY_THRESHOLD
    learn_frames: int = LEARN_FRAMES
    eps: float = CLUSTER_EPS
    min_pts: int = CLUSTER_MIN_PTS
    gate: float = GATE
    alpha: float = VELOCITY_ALPHA
    m_confirm: int = M_CONFIRM
    k_delete: int = K_DELETE


class BusStopPipeline:
    """One bus stop's sequential pipeline over its own scan stream."""

    def __init__(self, sensor_id: int, config: PipelineConfig | None = None):
        self.sensor_id = sensor_id
        self.config = config or PipelineConfig()
        self.model: BackgroundModel | None = None
        self.tracker = Tracker(self.config.gate, self.config.alpha,
                               self.config.m_confirm, self.config.k_delete)
        self.truncated_objects = 0
        self.last_detections: list[Detection] = []

    def learn(self, scans: list[Scan]) -> None:
        self.model = learn_background(scans, self.config.cell_size,
                                      self.config.learn_frames)

    def process_scan(self, scan: Scan, dt: float) -> list[Track]:
        if self.model is None:
            raise RuntimeError("background model not learned")
        foreground = subtract_background(scan, self.model,
                                         self.config.occupancy_threshold)
        clusters = cluster(foreground, self.config.eps, self.config.min_pts)
        self.last_detections = [classify(c) for c in clusters]
        return self.tracker.update(self.last_detections, dt)

    def pedestrian_count(self) -> int:
        return sum(1 for t in self.tracker.confirmed
                   if t.classification is ObjectClass.PEDESTRIAN)

    def emit(self, sim_time_ns: int, anchor: GeoAnchor, station_enu: Point) -> CpmPayload:
        def _count(n: int) -> None:
            self.truncated_objects += n
        return emit_cpm(self.tracker.confirmed, sim_time_ns, anchor, station_enu,
                        on_truncate=_count)


SCAN_COLUMNS = ["sim_time_ns", "point_index", "x_m", "y_m", "z_m", "label"]


def write_scans(path: str | Path, scans: list[Scan]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCAN_COLUMNS)
        for scan in scans:
            for i, p in enumerate(scan.points):
                writer.writerow([scan.sim_time_ns, i,
                                 f"{p.x:.3f}", f"{p.y:.3f}", f"{p.z:.3f}",
                                 p.label.value])


def read_scans(path: str | Path, sensor_id: int = 0) -> list[Scan]:
    scans: dict[int, list[ScanPoint]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SCAN_COLUMNS:
            raise ValueError(f"unexpected scan header {header}")
        for row in reader:
            t = int(row[0])
            scans.setdefault(t, []).append(
                ScanPoint(float(row[2]), float(row[3]), float(row[4]),
                          Label(row[5])))
    return [Scan(sensor_id, t, tuple(points))
            for t, points in sorted(scans.items())]
