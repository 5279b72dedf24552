"""Shuttle agent: a sequential per-tick pipeline.

sense (drain radio inbox) -> fuse obstacles -> plan candidates -> broker ->
act (follow the active trajectory) -> emit CAM. Obstacles arrive from the
onboard sensor and from bus-stop CPMs; signal state arrives as SPATEM/MAPEM
and turns into a stop-line constraint for the cruise planner.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

from ..codec import (
    CamPayload,
    CpmPayload,
    EventState,
    LaneType,
    MapemPayload,
    SpatemPayload,
    message,
)
from ..geo import GeoAnchor, heading_to_compass_units, to_units
from ..geometry import Point, Polyline, angle_diff, dist, segments_intersect
from .broker import BrokerConfig, Outcome, switch_box
from .planning import (
    Direction,
    NoPath,
    OffRoute,
    PlannedObstacle,
    RoutePlan,
    Trajectory,
    TrajectorySource,
    VehicleState,
    cruise_plan,
    docking_plan,
    trajectory_blocked,
)

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


class DrivingStatus(enum.Enum):
    IDLE = "idle"
    AUTONOMOUS = "autonomous"
    PAUSED = "paused"


class ObstacleSource(enum.Enum):
    ONBOARD = "onboard"
    CPM = "cpm"


class UnknownStation(KeyError):
    """CPM from a station without a registered reference position."""


class NoMapMatch(Exception):
    """MAPEM geometry does not intersect the active route."""


@dataclass(frozen=True)
class Obstacle:
    position: Point
    velocity: tuple[float, float]
    radius: float
    source: ObstacleSource
    stale_after_ns: int
    station_id: int | None = None
    object_id: int | None = None

    def predicted(self, now_ns: int, seen_ns: int) -> Point:
        dt = max(now_ns - seen_ns, 0) / NS_PER_S
        return (self.position[0] + self.velocity[0] * dt,
                self.position[1] + self.velocity[1] * dt)


@dataclass
class ObstacleStore:
    """Fuses onboard detections with CPM objects from registered stations."""

    station_positions: dict[int, Point] = field(default_factory=dict)
    cpm_stale_s: float = 0.5
    merge_radius_m: float = 0.5
    unknown_station: int = 0
    _onboard: list[tuple[int, Obstacle]] = field(default_factory=list)
    _cpm: dict[tuple[int, int], tuple[int, Obstacle]] = field(default_factory=dict)

    def set_onboard(self, detections: list[tuple[Point, tuple[float, float], float]],
                    sim_time_ns: int) -> None:
        """Replace the onboard picture; stamped with the sensing time."""
        stale = sim_time_ns + int(self.cpm_stale_s * NS_PER_S)
        self._onboard = [
            (sim_time_ns, Obstacle(pos, vel, radius, ObstacleSource.ONBOARD, stale))
            for pos, vel, radius in detections]

    def ingest_cpm(self, sender_id: int, payload: CpmPayload, rx_time_ns: int,
                   strict: bool = False) -> int:
        """Store objects in ENU; returns how many were accepted."""
        station = self.station_positions.get(sender_id)
        if station is None:
            self.unknown_station += 1
            if strict:
                raise UnknownStation(sender_id)
            return 0
        sx, sy = station
        stale = rx_time_ns + int(self.cpm_stale_s * NS_PER_S)
        for obj in payload.objects:
            obstacle = Obstacle(
                position=(sx + obj.dx / 100.0, sy + obj.dy / 100.0),
                velocity=(obj.vx / 100.0, obj.vy / 100.0),
                radius=obj.footprint_radius / 100.0,
                source=ObstacleSource.CPM,
                stale_after_ns=stale,
                station_id=sender_id,
                object_id=obj.object_id)
            self._cpm[(sender_id, obj.object_id)] = (rx_time_ns, obstacle)
        return len(payload.objects)

    def fused(self, now_ns: int) -> list[PlannedObstacle]:
        """Deduplicated, staleness-purged set, predicted to now."""
        self._cpm = {k: v for k, v in self._cpm.items()
                     if v[1].stale_after_ns >= now_ns}
        onboard = [(seen, ob) for seen, ob in self._onboard
                   if ob.stale_after_ns >= now_ns]
        out: list[PlannedObstacle] = []
        merged_radius = [ob.radius for _, ob in onboard]
        remote: list[tuple[int, Obstacle]] = []
        for seen, ob in self._cpm.values():
            pos = ob.predicted(now_ns, seen)
            near = None
            for i, (oseen, oob) in enumerate(onboard):
                if dist(pos, oob.predicted(now_ns, oseen)) <= self.merge_radius_m:
                    near = i
                    break
            if near is None:
                remote.append((seen, ob))
            else:
                # onboard wins the position; keep the larger footprint
                merged_radius[near] = max(merged_radius[near], ob.radius)
        for i, (seen, ob) in enumerate(onboard):
            out.append(PlannedObstacle(ob.predicted(now_ns, seen), ob.velocity,
                                       merged_radius[i]))
        for seen, ob in remote:
            out.append(PlannedObstacle(ob.predicted(now_ns, seen), ob.velocity,
                                       ob.radius))
        return out


@dataclass(frozen=True)
class MappedCrossing:
    """A MAPEM crosswalk located on the active route."""

    intersection_id: int
    signal_group_id: int   # the shuttle lane's group
    crossing_s: float      # crosswalk centerline arc position on the route
    stop_line_s: float     # crossing_s minus the setback


def _segment_crossing_s(route: Polyline, c: Point, d: Point) -> float | None:
    """Arc position where segment cd first cuts the route, if it does."""
    for i in range(1, len(route.points)):
        a, b = route.points[i - 1], route.points[i]
        if not segments_intersect(a, b, c, d):
            continue
        rx, ry = b[0] - a[0], b[1] - a[1]
        sx, sy = d[0] - c[0], d[1] - c[1]
        denom = rx * sy - ry * sx
        if denom == 0.0:
            t = 0.0  # collinear touch: attribute to the segment start
        else:
            t = ((c[0] - a[0]) * sy - (c[1] - a[1]) * sx) / denom
            t = min(max(t, 0.0), 1.0)
        return route._cum[i - 1] + t * math.hypot(rx, ry)
    return None


def map_crossing(mapem: MapemPayload, route: Polyline, anchor: GeoAnchor,
                 setback_m: float = 4.0) -> MappedCrossing:
    """Associate MAPEM lanes with the route and derive the stop line.

    The signal group comes from the nearest VEHICLE lane; the stop line sits
    setback_m before the first CROSSWALK lane that cuts the route.
    """
    ref_x, ref_y = anchor.units_to_enu(mapem.latitude, mapem.longitude)
    group = None
    group_dist = math.inf
    crossing_s = None
    for lane in mapem.lanes:
        pts = [(ref_x + x / 100.0, ref_y + y / 100.0) for x, y in lane.nodes]
        if lane.lane_type is LaneType.VEHICLE:
            lateral = sum(route.project(p)[1] for p in pts) / len(pts)
            if lateral < group_dist:
                group_dist = lateral
                group = lane.signal_group_id
        elif lane.lane_type is LaneType.CROSSWALK and crossing_s is None:
            for c, d in zip(pts, pts[1:]):
                s = _segment_crossing_s(route, c, d)
                if s is not None:
                    crossing_s = s
                    break
    if group is None or crossing_s is None:
        raise NoMapMatch(
            f"intersection {mapem.intersection_id}: "
            f"{'no vehicle lane' if group is None else 'crosswalk off route'}")
    return MappedCrossing(mapem.intersection_id, group, crossing_s,
                          max(crossing_s - setback_m, 0.0))


HARD_DECEL = 2.5  # m/s^2 commitment bound; comfort braking stays at 0.8


def yield_decision(spatem: SpatemPayload | None, spatem_age_s: float | None,
                   crossing: MappedCrossing, s_vehicle: float, speed: float,
                   hard_decel: float = HARD_DECEL,
                   stale_s: float = 1.0) -> float | None:
    """Stop-line arc constraint when the lane signal demands it, else None.

    A missing or stale SPATEM is treated as red. The proceed test uses the
    hard braking bound, not comfort decel: a comfort profile rides at v_max
    until exactly the comfort braking distance, so a comfort-based test would
    declare every approach committed one tick after braking should begin.
    """
    red = True
    if spatem is not None and spatem_age_s is not None and spatem_age_s <= stale_s:
        movement = next((m for m in spatem.movements
                         if m.signal_group_id == crossing.signal_group_id), None)
        red = movement is None or movement.event_state is EventState.STOP_AND_REMAIN
    if not red:
        return None
    remaining = crossing.stop_line_s - s_vehicle
    if speed > 0.5:
        if remaining < speed * speed / (2.0 * hard_decel) - 1e-9:
            return None
        return crossing.stop_line_s
    # crawling: the commitment test is meaningless within its own tick
    # discretization error, so hold at the line (or where we stand, if the
    # creep overshot it by centimeters)
    if remaining < -0.5:
        return None
    return max(crossing.stop_line_s, s_vehicle)


@dataclass(frozen=True)
class ShuttleConfig:
    station_id: int = 1
    v_max: float = 2.5
    accel: float = 0.6
    decel: float = 0.8
    hard_decel: float = 2.5
    horizon_s: float = 8.0
    tick_ns: int = 100_000_000
    docking_trigger_m: float = 8.0
    docking_max_pops: int = 8000
    docking_retry_ticks: int = 10  # back off after NoPath; cruise covers the gap
    stop_line_setback_m: float = 4.0
    spatem_stale_s: float = 1.0
    cpm_stale_s: float = 0.5
    merge_radius_m: float = 0.5
    arrive_tol_m: float = 0.3
    dwell_s: float = 5.0
    soc_start: float = 100.0
    soc_idle_pct_per_s: float = 0.001
    soc_drive_pct_per_m: float = 0.01
    wheelbase_m: float = 2.5
    planned_log_period_ticks: int = 10
    cam_period_ticks: int = 1  # 10 Hz when the tick itself is 100 ms
    broker: BrokerConfig = field(default_factory=BrokerConfig)


@dataclass(frozen=True)
class TickRecord:
    sim_time_ns: int
    x: float
    y: float
    heading: float
    speed: float
    soc: float
    door_open: bool
    mission_id: int
    mission_progress: int
    driving_status: DrivingStatus
    steering_angle: float
    trajectory_source: TrajectorySource | None


class ShuttleAgent:
    """Owns vehicle state, mission lifecycle, and the plan/act/emit loop."""

    def __init__(self, config: ShuttleConfig, anchor: GeoAnchor,
                 routes: dict[Direction, RoutePlan], start: VehicleState,
                 station_positions: dict[int, Point] | None = None,
                 bus=None, endpoint=None):
        self.cfg = config
        self.anchor = anchor
        self.routes = routes
        for route in routes.values():
            route.validate()
        self.state = start
        self.soc = config.soc_start
        self.status = DrivingStatus.IDLE
        self.bus = bus
        self.endpoint = endpoint
        self.obstacles = ObstacleStore(
            station_positions=dict(station_positions or {}),
            cpm_stale_s=config.cpm_stale_s,
            merge_radius_m=config.merge_radius_m)

        self.mission_id = 0
        self.route: RoutePlan | None = None
        self.progress = 0
        self._s = 0.0
        self._mission_seq = 1

        self.active: Trajectory | None = None
        self.external: Trajectory | None = None
        self._spatem: tuple[int, SpatemPayload] | None = None
        self._mapem: MapemPayload | None = None
        self._crossing_cache: dict[Direction, MappedCrossing | None] = {}

        self.doors_open = False
        self._dwell_until_ns: int | None = None
        self._steering = 0.0
        self._docking_fail_tick: int | None = None

        self.tick_log: list[TickRecord] = []
        self.planned_log: list[Trajectory] = []
        self.events: list[tuple[int, str]] = []
        self.off_route_stops = 0
        self._tick_count = 0

    # -- commands ----------------------------------------------------------

    def dispatch(self, direction: Direction, sim_time_ns: int,
                 mission_id: int | None = None) -> tuple[bool, str]:
        if self.mission_id != 0 or self._dwell_until_ns is not None:
            return False, f"mission {self.mission_id} still active"
        if self.status is DrivingStatus.PAUSED:
            return False, "shuttle is paused"
        route = self.routes.get(direction)
        if route is None:
            return False, f"no route for {direction.value}"
        s0, lateral = route.lane.project(self.state.xy)
        if lateral > 2.0:
            return False, f"vehicle {lateral:.1f} m off the {direction.value} route"
        self.route = route
        self.mission_id = mission_id if mission_id else self._mission_seq
        self._mission_seq = max(self._mission_seq, self.mission_id) + 1
        self.progress = 0
        self._s = s0
        self.status = DrivingStatus.AUTONOMOUS
        self.active = None
        self._docking_fail_tick = None
        self._crossing_cache.pop(direction, None)
        self.events.append((sim_time_ns, f"dispatch mission {self.mission_id} "
                                          f"{direction.value}"))
        return True, f"mission {self.mission_id} dispatched"

    def pause(self, sim_time_ns: int) -> tuple[bool, str]:
        if self.status is DrivingStatus.PAUSED:
            return False, "already paused"
        self.status = DrivingStatus.PAUSED
        self.active = None
        self.events.append((sim_time_ns, "pause"))
        return True, "paused"

    def resume(self, sim_time_ns: int) -> tuple[bool, str]:
        if self.status is not DrivingStatus.PAUSED:
            return False, "not paused"
        self.status = (DrivingStatus.AUTONOMOUS if self.mission_id
                       else DrivingStatus.IDLE)
        self.events.append((sim_time_ns, "resume"))
        return True, "resumed"

    def receive_external(self, trajectory: Trajectory,
                         sim_time_ns: int) -> tuple[bool, str]:
        if trajectory.source is not TrajectorySource.EXTERNAL:
            return False, f"source {trajectory.source.value} is not external"
        try:
            trajectory.validate()
        except ValueError as exc:
            return False, str(exc)
        if trajectory.end_time <= sim_time_ns / NS_PER_S:
            return False, "trajectory already expired"
        self.external = trajectory
        self.events.append((sim_time_ns, "external trajectory accepted"))
        return True, "accepted"

    def observe_onboard(self, detections: list[tuple[Point, tuple[float, float], float]],
                        sim_time_ns: int) -> None:
        self.obstacles.set_onboard(detections, sim_time_ns)

    # -- sensing -----------------------------------------------------------

    def _drain_radio(self) -> None:
        if self.endpoint is None:
            return
        for rec in self.endpoint.drain_inbox():
            payload = rec.message.payload
            if isinstance(payload, SpatemPayload):
                self._spatem = (rec.sim_time_ns, payload)
            elif isinstance(payload, MapemPayload):
                if payload != self._mapem:
                    self._mapem = payload
                    self._crossing_cache.clear()
            elif isinstance(payload, CpmPayload):
                self.obstacles.ingest_cpm(rec.sender_id, payload, rec.sim_time_ns)

    def _crossing_for(self, direction: Direction) -> MappedCrossing | None:
        if self._mapem is None:
            return None
        if direction not in self._crossing_cache:
            route = self.routes[direction]
            try:
                self._crossing_cache[direction] = map_crossing(
                    self._mapem, route.lane, self.anchor,
                    self.cfg.stop_line_setback_m)
            except NoMapMatch as exc:
                log.warning("MAPEM did not match route %s: %s",
                            direction.value, exc)
                self.events.append((0, f"no map match: {exc}"))
                self._crossing_cache[direction] = None
        return self._crossing_cache[direction]

    # -- per-tick pipeline -------------------------------------------------

    def step(self, sim_time_ns: int) -> None:
        self._drain_radio()
        now_s = sim_time_ns / NS_PER_S
        dt = self.cfg.tick_ns / NS_PER_S

        if self._dwell_until_ns is not None:
            if sim_time_ns >= self._dwell_until_ns:
                self.doors_open = False
                self._dwell_until_ns = None
                self.events.append((sim_time_ns,
                                    f"mission {self.mission_id} complete"))
                self.mission_id = 0
                self.route = None
                if self.status is not DrivingStatus.PAUSED:
                    self.status = DrivingStatus.IDLE
        elif self.status is DrivingStatus.AUTONOMOUS and self.route is not None:
            if self._arrived():
                self.progress = 1000
                self.doors_open = True
                self.active = None
                self._dwell_until_ns = sim_time_ns + int(self.cfg.dwell_s * NS_PER_S)
                self.state = replace(self.state, speed=0.0)
            else:
                self._plan_and_follow(sim_time_ns, now_s, dt)
        if self.active is None and not self.doors_open:
            self._coast_down(dt)

        self._burn_soc(dt)
        self._emit_cam(sim_time_ns)
        self._record(sim_time_ns)
        self._tick_count += 1

    def _arrived(self) -> bool:
        assert self.route is not None
        return (dist(self.state.xy, self.route.stop_pose_end.xy)
                <= self.cfg.arrive_tol_m and self.state.speed < 0.05)

    def _plan_and_follow(self, sim_time_ns: int, now_s: float, dt: float) -> None:
        assert self.route is not None
        route = self.route
        s, _lateral = route.lane.project(self.state.xy, s_near=self._s)

        crossing = self._crossing_for(route.direction)
        signal_stop = None
        if crossing is not None:
            age = None
            spatem = None
            if self._spatem is not None:
                rx_ns, spatem = self._spatem
                age = (sim_time_ns - rx_ns) / NS_PER_S
            signal_stop = yield_decision(
                spatem, age, crossing, s, self.state.speed,
                hard_decel=self.cfg.hard_decel,
                stale_s=self.cfg.spatem_stale_s)

        fused = self.obstacles.fused(sim_time_ns)
        candidates: list[Trajectory] = []
        if self.external is not None:
            if self.external.end_time <= now_s:
                self.external = None  # expired: normal priority resumes
            else:
                candidates.append(self.external.trimmed(now_s))

        d_goal = dist(self.state.xy, route.stop_pose_end.xy)
        docked_candidate = False
        if d_goal <= self.cfg.docking_trigger_m and signal_stop is None:
            # a healthy docking plan is followed to the end; the search only
            # reruns when the plan expired or an obstacle moved onto it
            keep = (self.active is not None
                    and self.active.source is TrajectorySource.DOCKING
                    and self.active.end_time > now_s
                    and not trajectory_blocked(self.active, fused, now_s))
            retry_due = (self._docking_fail_tick is None
                         or self._tick_count - self._docking_fail_tick
                         >= self.cfg.docking_retry_ticks)
            if keep:
                docked_candidate = True
            elif retry_due:
                try:
                    candidates.append(docking_plan(
                        self.state, route.stop_pose_end, fused, now_s,
                        max_pops=self.cfg.docking_max_pops))
                    docked_candidate = True
                    self._docking_fail_tick = None
                except NoPath as exc:
                    self._docking_fail_tick = self._tick_count
                    log.debug("docking unavailable: %s", exc)
        if not docked_candidate:
            try:
                candidates.append(cruise_plan(
                    self.state, route, fused, signal_stop, now_s,
                    v_max=self.cfg.v_max, accel=self.cfg.accel,
                    decel=self.cfg.decel, horizon_s=self.cfg.horizon_s))
            except OffRoute as exc:
                self.off_route_stops += 1
                log.warning("cruise off route: %s", exc)

        decision = switch_box(self.active, candidates, self.state, now_s,
                              self.cfg.broker)
        if decision.outcome is Outcome.SELECTED:
            new = decision.trajectory
            if (self.active is None or new.source is not self.active.source
                    or self._tick_count % self.cfg.planned_log_period_ticks == 0):
                self.planned_log.append(new)
            self.active = new
        elif decision.outcome is Outcome.CONTROLLED_STOP:
            self.active = None

        if self.active is not None:
            self._follow(self.active, now_s + dt)
        # progress tracks the post-move pose so records are self-consistent
        self._s, _ = route.lane.project(self.state.xy, s_near=s)
        self.progress = min(1000, max(
            self.progress, to_units(self._s / route.lane.length, 1000)))

    def _follow(self, trajectory: Trajectory, t: float) -> None:
        nxt = trajectory.sample_at(t)
        prev = self.state
        self.state = VehicleState(nxt.x, nxt.y, nxt.heading, nxt.speed)
        ds = dist(prev.xy, self.state.xy)
        if ds > 1e-6:
            kappa = angle_diff(self.state.heading, prev.heading) / ds
            self._steering = math.atan(self.cfg.wheelbase_m * kappa)
        elif self.state.speed < 0.05:
            self._steering = 0.0

    def _coast_down(self, dt: float) -> None:
        """No active trajectory: decelerate in place along the heading."""
        v0 = self.state.speed
        if v0 <= 0.0:
            return
        v1 = max(0.0, v0 - self.cfg.decel * dt)
        step = 0.5 * (v0 + v1) * dt
        self.state = VehicleState(
            self.state.x + step * math.cos(self.state.heading),
            self.state.y + step * math.sin(self.state.heading),
            self.state.heading, v1)

    def _burn_soc(self, dt: float) -> None:
        drain = (self.cfg.soc_idle_pct_per_s
                 + self.cfg.soc_drive_pct_per_m * self.state.speed) * dt
        self.soc = max(0.0, self.soc - drain)

    # -- emission ----------------------------------------------------------

    def indicator_status(self) -> int:
        if self.status is DrivingStatus.PAUSED:
            return 3  # hazard while held
        if (self.route is not None and self.route.turning_interval is not None
                and self.status is DrivingStatus.AUTONOMOUS):
            lo, hi = self.route.turning_interval
            if lo <= self._s <= hi:
                return 1
        return 0

    def emit_cam(self, sim_time_ns: int) -> CamPayload:
        lat, lon = self.anchor.enu_to_units(self.state.x, self.state.y)
        speed_units = min(max(to_units(self.state.speed, 100), 0), 16382)
        heading_units = heading_to_compass_units(self.state.heading)
        return CamPayload(
            generation_delta_time=(sim_time_ns // 1_000_000) % 65536,
            latitude=lat, longitude=lon,
            heading=heading_units, speed=speed_units,
            door_status=1 if self.doors_open else 0,
            indicator_status=self.indicator_status(),
            mission_id=self.mission_id,
            mission_progress=self.progress if self.mission_id else 0)

    def _emit_cam(self, sim_time_ns: int) -> None:
        if self._tick_count % self.cfg.cam_period_ticks != 0:
            return
        cam = self.emit_cam(sim_time_ns)
        if self.bus is not None and self.endpoint is not None:
            self.endpoint.position = self.state.xy
            self.bus.broadcast(self.cfg.station_id,
                               message(self.cfg.station_id, cam), sim_time_ns)

    def _record(self, sim_time_ns: int) -> None:
        self.tick_log.append(TickRecord(
            sim_time_ns=sim_time_ns,
            x=self.state.x, y=self.state.y, heading=self.state.heading,
            speed=self.state.speed, soc=self.soc, door_open=self.doors_open,
            mission_id=self.mission_id, mission_progress=self.progress,
            driving_status=self.status, steering_angle=self._steering,
            trajectory_source=self.active.source if self.active else None))
