"""Scenario configuration: structured text file -> validated world description.

A scenario is a nested mapping (YAML on disk) with defaults for every key, so
an empty file is already a runnable scenario. The map section describes the
corridor abstractly (two stop poses, a crossing offset); lane polylines,
turnaround loops, the conflict zone, and platform geometry are derived from it
here so that every reference resolves by construction. Explicit geometry keys
override the derived shapes where present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..geo import GeoAnchor
from ..geometry import Point, Polyline, Pose, segments_intersect
from ..intersection import CrossingConfig, PriorityMode
from ..netbus import LossModel, LossZone, ZoneMode
from ..shuttle.agent import ShuttleConfig
from ..shuttle.planning import Direction, RoutePlan, VehicleState

# Fixed station ids; the control center must sort last so that adding it never
# perturbs the per-receiver draw order of the loss RNG for the other stations.
SHUTTLE_ID = 1
CROSSING_ID = 2
STOP0_ID = 3
STOP1_ID = 4
CONTROL_ID = 9

EMISSION_PERIOD_MS = 100  # CAM/CPM/SPATEM all run at 10 Hz

LOOP_RADIUS = 3.0         # turnaround arc radius, matches the vehicle R_MIN
ARC_CHORD = 0.5           # m, polyline sampling of loop arcs


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpawnConfig:
    rate_per_s: float = 0.0
    p_compliant: float = 1.0
    speed_min: float = 0.8
    speed_max: float = 1.6


@dataclass(frozen=True)
class StopSpawnConfig:
    rate_per_s: float = 0.0
    cap: int = 6
    speed_min: float = 0.8
    speed_max: float = 1.6


@dataclass(frozen=True)
class ScriptedAgent:
    """Stands at a fixed point for a window, then vanishes (oracle scenarios)."""
    at_s: float
    duration_s: float
    position: Point


@dataclass(frozen=True)
class CommandScript:
    at_s: float
    name: str
    args: tuple[tuple[str, object], ...] = ()


@dataclass(frozen=True)
class BusStopSpec:
    stop_id: int
    station_id: int
    pose: Pose
    sensor: Point
    platform: Point                  # waiting-slot anchor, clear of the lane
    platform_axis: Point             # unit vector the slot row runs along
    shelter_wall: tuple[Point, Point]


@dataclass(frozen=True)
class TripPlan:
    headway_s: float = 5.0
    sequence: tuple[Direction, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    rng_seed: int
    tick_ns: int
    duration_s: float
    date: str
    anchor: GeoAnchor
    lane: Polyline                       # controller lane through the crossing
    crosswalk: tuple[Point, Point]
    conflict_zone: tuple[Point, ...]
    crossing_center: Point
    bus_stops: tuple[BusStopSpec, BusStopSpec]
    rsu_position: Point
    crossing_config: CrossingConfig
    initial_mode: PriorityMode
    mode_schedule: tuple[tuple[float, PriorityMode], ...]
    loss: LossModel
    shuttle: ShuttleConfig
    shuttle_start: VehicleState
    onboard_range_m: float
    sensor_range_m: float
    routes: dict[Direction, RoutePlan] = field(default_factory=dict)
    crossing_spawn: SpawnConfig = SpawnConfig()
    stop_spawn: StopSpawnConfig = StopSpawnConfig()
    scripted: tuple[ScriptedAgent, ...] = ()
    commands: tuple[CommandScript, ...] = ()
    trips: TripPlan = TripPlan()
    archive_radio: bool = True

    @property
    def tick_s(self) -> float:
        return self.tick_ns / 1e9

    def ticks_per_emission(self) -> int:
        return (EMISSION_PERIOD_MS * 1_000_000) // self.tick_ns


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key '{path}{key}'")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def _defaults() -> dict:
    return {
        "name": "default",
        "rng_seed": 1,
        "tick_ms": 100,
        "duration_s": 600.0,
        "date": "1970-01-01",
        "archive_radio": True,
        "anchor": {"lat_deg": 49.0095, "lon_deg": 8.4044},
        "map": {
            "stop0_pose": [0.0, 0.0, 0.0],
            "stop1_pose": [100.0, 0.0, 0.0],
            "crossing_offset_m": 50.0,
            "crosswalk_half_m": 6.0,
            "zone_long_half_m": 2.0,
            "zone_lat_half_m": 2.0,
            "platform_offset_m": 3.0,
            "sensor_offset_m": 4.0,
            "rsu_lateral_m": 8.0,
        },
        "netbus": {
            "base_loss": 0.02,
            "latency_mean_ms": 5.0,
            "latency_jitter_ms": 2.0,
            "zones": [],
        },
        "intersection": {
            "mode": "SHUTTLE_PRIORITY",
            "mode_schedule": [],
            "t_near_s": 12.0,
            "t_far_s": 30.0,
            "t_clear_s": 4.0,
            "hold_w_s": 15.0,
            "exit_margin_m": 2.0,
            "v_floor_ms": 0.5,
            "off_route_m": 5.0,
            "cam_stale_s": 2.0,
        },
        "shuttle": {
            "v_max": 2.5,
            "accel": 0.6,
            "decel": 0.8,
            "dwell_s": 5.0,
            "docking_trigger_m": 8.0,
            "docking_max_pops": 8000,
            "soc_start": 100.0,
            "planned_log_period_ticks": 10,
            "onboard_range_m": 30.0,
        },
        "pedestrians": {
            "crossing": {
                "rate_per_s": 0.05,
                "p_compliant": 0.9,
                "speed_min": 0.8,
                "speed_max": 1.6,
            },
            "stops": {
                "rate_per_s": 0.02,
                "cap": 6,
                "speed_min": 0.8,
                "speed_max": 1.6,
            },
            "scripted": [],
        },
        "commands": [],
        "trips": {"headway_s": 5.0, "round_trips": 2, "sequence": None},
        "sensor_range_m": 20.0,
    }


def _unit(dx: float, dy: float) -> Point:
    n = math.hypot(dx, dy)
    return (dx / n, dy / n)


def _arc(center: Point, radius: float, a0: float, a1: float) -> list[Point]:
    """Inclusive arc sampling at roughly ARC_CHORD spacing; a0/a1 in radians."""
    sweep = a1 - a0
    n = max(2, int(abs(sweep) * radius / ARC_CHORD) + 1)
    return [(center[0] + radius * math.cos(a0 + sweep * i / n),
             center[1] + radius * math.sin(a0 + sweep * i / n))
            for i in range(n + 1)]


def _transform(points: list[Point], origin: Point, u: Point) -> list[Point]:
    """Map canonical frame (origin at 'origin', +x along 'u') into the world."""
    ux, uy = u
    return [(origin[0] + x * ux - y * uy, origin[1] + x * uy + y * ux)
            for x, y in points]


def _build_return_lane(far: Pose, near: Pose) -> tuple[list[Point], tuple[float, float]]:
    """Teardrop turnaround at the far stop, then back along the shared lane.

    Canonical frame: origin at the far stop pose, +x along its heading. The
    turnaround is a 270 degree left arc plus a 90 degree right arc that
    rejoins the lane 2 m short of the stop, now facing backward. A mirrored
    arc pair at the near end lands exactly on the near stop pose facing
    forward again, so the vehicle is aligned for the next outbound departure.
    """
    r = LOOP_RADIUS
    length = math.dist(far.xy, near.xy)

    pts: list[Point] = [(0.0, 0.0)]
    marks: list[float] = []

    def _cum() -> float:
        return sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))

    def _extend(new_points: list[Point]) -> None:
        for p in new_points:
            if math.dist(p, pts[-1]) > 1e-9:
                pts.append(p)

    _extend([(4.0, 0.0)])
    marks.append(_cum())                                        # loop start
    _extend(_arc((4.0, r), r, -0.5 * math.pi, math.pi))         # 270 deg left
    _extend(_arc((-2.0, r), r, 0.0, -0.5 * math.pi))            # 90 deg right
    marks.append(_cum())                                        # rejoin, reversed
    _extend([(-(length + 6.0), 0.0)])                           # long backward run
    _extend(_arc((-(length + 6.0), -r), r, 0.5 * math.pi, 2.0 * math.pi))
    _extend(_arc((-length, -r), r, math.pi, 0.5 * math.pi))     # near stop pose

    turning = (max(0.0, marks[0] - 1.0), marks[1] + 1.0)
    u = (math.cos(far.heading), math.sin(far.heading))
    return _transform(pts, far.xy, u), turning


def _pose_from(raw: list) -> Pose:
    if len(raw) != 3:
        raise ConfigError(f"pose needs [x, y, heading], got {raw}")
    return Pose(float(raw[0]), float(raw[1]), float(raw[2]))


def _point_from(raw: list) -> Point:
    if len(raw) != 2:
        raise ConfigError(f"point needs [x, y], got {raw}")
    return (float(raw[0]), float(raw[1]))


def build_scenario(mapping: dict | None = None) -> ScenarioConfig:
    """Validate a configuration mapping and derive all world geometry."""
    cfg = _merge(_defaults(), mapping or {})

    tick_ms = int(cfg["tick_ms"])
    if tick_ms <= 0 or EMISSION_PERIOD_MS % tick_ms != 0:
        raise ConfigError(
            f"tick {tick_ms} ms must divide the {EMISSION_PERIOD_MS} ms "
            "emission period")
    tick_ns = tick_ms * 1_000_000

    duration_s = float(cfg["duration_s"])
    if duration_s <= 0:
        raise ConfigError("duration_s must be positive")

    anchor = GeoAnchor(float(cfg["anchor"]["lat_deg"]),
                       float(cfg["anchor"]["lon_deg"]))

    m = cfg["map"]
    stop0 = _pose_from(m["stop0_pose"])
    stop1 = _pose_from(m["stop1_pose"])
    length = math.dist(stop0.xy, stop1.xy)
    if length < 40.0:
        raise ConfigError(f"stops {length:.1f} m apart; need >= 40 m")
    u = _unit(stop1.x - stop0.x, stop1.y - stop0.y)
    lane_heading = math.atan2(u[1], u[0])
    for pose, name in ((stop0, "stop0"), (stop1, "stop1")):
        if math.cos(pose.heading - lane_heading) < 0.999:
            raise ConfigError(f"{name} pose heading must face along the lane")
    n = (-u[1], u[0])  # left of travel

    offset = float(m["crossing_offset_m"])
    if not 15.0 <= offset <= length - 15.0:
        raise ConfigError(
            f"crossing_offset_m {offset} conflicts with the stop areas")
    center = (stop0.x + u[0] * offset, stop0.y + u[1] * offset)
    cw_half = float(m["crosswalk_half_m"])
    crosswalk = ((center[0] + n[0] * cw_half, center[1] + n[1] * cw_half),
                 (center[0] - n[0] * cw_half, center[1] - n[1] * cw_half))
    zl = float(m["zone_long_half_m"])
    zt = float(m["zone_lat_half_m"])
    if zt >= cw_half:
        raise ConfigError("conflict zone wider than the crosswalk")
    conflict_zone = tuple(
        (center[0] + u[0] * a + n[0] * b, center[1] + u[1] * a + n[1] * b)
        for a, b in ((-zl, -zt), (zl, -zt), (zl, zt), (-zl, zt)))

    # controller lane spans both stops with margin so approaches are tracked
    lane = Polyline([(stop0.x - u[0] * 10.0, stop0.y - u[1] * 10.0),
                     (stop1.x + u[0] * 10.0, stop1.y + u[1] * 10.0)])

    plat = float(m["platform_offset_m"])
    sens = float(m["sensor_offset_m"])
    if plat < 2.5:
        raise ConfigError("platform_offset_m < 2.5 would foul the lane")
    # platforms sit opposite each stop's turnaround loop
    stops = []
    for stop_id, station_id, pose, side in (
            (0, STOP0_ID, stop0, +1), (1, STOP1_ID, stop1, -1)):
        p_anchor = (pose.x + n[0] * plat * side, pose.y + n[1] * plat * side)
        sensor = (pose.x + n[0] * sens * side, pose.y + n[1] * sens * side)
        wall_off = sens + 1.0
        wall = ((pose.x - u[0] * 4.0 + n[0] * wall_off * side,
                 pose.y - u[1] * 4.0 + n[1] * wall_off * side),
                (pose.x + u[0] * 4.0 + n[0] * wall_off * side,
                 pose.y + u[1] * 4.0 + n[1] * wall_off * side))
        stops.append(BusStopSpec(stop_id, station_id, pose, sensor,
                                 p_anchor, u, wall))
    rsu_position = (center[0] + n[0] * float(m["rsu_lateral_m"]),
                    center[1] + n[1] * float(m["rsu_lateral_m"]))

    outbound_lane = Polyline([stop0.xy, stop1.xy])
    return_points, turning = _build_return_lane(stop1, stop0)
    return_lane = Polyline(return_points)
    routes = {
        Direction.OUTBOUND: RoutePlan(
            mission_id=0, lane=outbound_lane,
            stop_pose_start=stop0, stop_pose_end=stop1,
            direction=Direction.OUTBOUND),
        Direction.RETURN: RoutePlan(
            mission_id=0, lane=return_lane,
            stop_pose_start=stop1,
            stop_pose_end=Pose(stop0.x, stop0.y, stop1.heading),
            direction=Direction.RETURN, turning_interval=turning),
    }
    for route in routes.values():
        route.validate()
        hits = sum(
            1 for a, b in zip(route.lane.points, route.lane.points[1:])
            if segments_intersect(a, b, crosswalk[0], crosswalk[1]))
        if hits == 0:
            raise ConfigError(
                f"crosswalk does not span the {route.direction.value} route")

    nb = cfg["netbus"]
    zones = []
    for z in nb["zones"]:
        polygon = tuple(_point_from(p) for p in z["polygon"])
        mode = ZoneMode(z.get("mode", "segment_crosses"))
        zones.append(LossZone(polygon, float(z["extra_loss"]), mode))
    try:
        loss = LossModel(
            base_loss=float(nb["base_loss"]),
            zones=tuple(zones),
            latency_mean_ms=float(nb["latency_mean_ms"]),
            latency_jitter_ms=float(nb["latency_jitter_ms"]),
            rng_seed=int(cfg["rng_seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    ix = cfg["intersection"]
    try:
        initial_mode = PriorityMode[ix["mode"]]
    except KeyError as exc:
        raise ConfigError(f"unknown priority mode {ix['mode']!r}") from exc
    schedule = []
    for entry in ix["mode_schedule"]:
        try:
            schedule.append((float(entry["at_s"]), PriorityMode[entry["mode"]]))
        except KeyError as exc:
            raise ConfigError(f"bad mode_schedule entry {entry}") from exc
    schedule.sort(key=lambda e: e[0])
    crossing_config = CrossingConfig(
        t_near_s=float(ix["t_near_s"]), t_far_s=float(ix["t_far_s"]),
        t_clear_s=float(ix["t_clear_s"]), hold_w_s=float(ix["hold_w_s"]),
        exit_margin_m=float(ix["exit_margin_m"]),
        v_floor_ms=float(ix["v_floor_ms"]), off_route_m=float(ix["off_route_m"]),
        cam_stale_s=float(ix["cam_stale_s"]))

    sh = cfg["shuttle"]
    shuttle = ShuttleConfig(
        station_id=SHUTTLE_ID,
        v_max=float(sh["v_max"]), accel=float(sh["accel"]),
        decel=float(sh["decel"]), dwell_s=float(sh["dwell_s"]),
        docking_trigger_m=float(sh["docking_trigger_m"]),
        docking_max_pops=int(sh["docking_max_pops"]),
        soc_start=float(sh["soc_start"]),
        planned_log_period_ticks=int(sh["planned_log_period_ticks"]),
        tick_ns=tick_ns,
        cam_period_ticks=(EMISSION_PERIOD_MS * 1_000_000) // tick_ns)
    if shuttle.v_max <= 0 or shuttle.accel <= 0 or shuttle.decel <= 0:
        raise ConfigError("shuttle kinematic limits must be positive")
    shuttle_start = VehicleState(stop0.x, stop0.y, stop0.heading, 0.0)

    ped = cfg["pedestrians"]

    def spawn_common(src: dict, what: str) -> None:
        if float(src["rate_per_s"]) < 0:
            raise ConfigError(f"{what} rate_per_s must be >= 0")
        if not 0 < float(src["speed_min"]) <= float(src["speed_max"]):
            raise ConfigError(f"{what} walk speed range invalid")

    spawn_common(ped["crossing"], "crossing")
    spawn_common(ped["stops"], "stops")
    p_c = float(ped["crossing"]["p_compliant"])
    if not 0.0 <= p_c <= 1.0:
        raise ConfigError(f"p_compliant {p_c} outside [0, 1]")
    crossing_spawn = SpawnConfig(
        rate_per_s=float(ped["crossing"]["rate_per_s"]), p_compliant=p_c,
        speed_min=float(ped["crossing"]["speed_min"]),
        speed_max=float(ped["crossing"]["speed_max"]))
    stop_spawn = StopSpawnConfig(
        rate_per_s=float(ped["stops"]["rate_per_s"]),
        cap=int(ped["stops"]["cap"]),
        speed_min=float(ped["stops"]["speed_min"]),
        speed_max=float(ped["stops"]["speed_max"]))
    scripted = tuple(
        ScriptedAgent(float(s["at_s"]), float(s["duration_s"]),
                      _point_from(s["position"]))
        for s in ped["scripted"])
    for s in scripted:
        if s.duration_s <= 0:
            raise ConfigError("scripted agent duration_s must be positive")

    commands = tuple(
        CommandScript(float(c["at_s"]), str(c["name"]),
                      tuple(sorted((c.get("args") or {}).items())))
        for c in cfg["commands"])

    tr = cfg["trips"]
    if tr["sequence"] is not None:
        try:
            sequence = tuple(Direction(d) for d in tr["sequence"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        sequence = (Direction.OUTBOUND, Direction.RETURN) * int(tr["round_trips"])
    for i, d in enumerate(sequence):
        expect = Direction.OUTBOUND if i % 2 == 0 else Direction.RETURN
        if d is not expect:
            raise ConfigError(
                "trip sequence must alternate outbound/return from the "
                f"shuttle's start stop; index {i} is {d.value}")
    trips = TripPlan(headway_s=float(tr["headway_s"]), sequence=sequence)
    if trips.headway_s < 0.5:
        raise ConfigError("headway_s must be >= 0.5 s")

    return ScenarioConfig(
        name=str(cfg["name"]),
        rng_seed=int(cfg["rng_seed"]),
        tick_ns=tick_ns,
        duration_s=duration_s,
        date=str(cfg["date"]),
        anchor=anchor,
        lane=lane,
        crosswalk=crosswalk,
        conflict_zone=conflict_zone,
        crossing_center=center,
        bus_stops=(stops[0], stops[1]),
        rsu_position=rsu_position,
        crossing_config=crossing_config,
        initial_mode=initial_mode,
        mode_schedule=tuple(schedule),
        loss=loss,
        shuttle=shuttle,
        shuttle_start=shuttle_start,
        onboard_range_m=float(sh["onboard_range_m"]),
        sensor_range_m=float(cfg["sensor_range_m"]),
        routes=routes,
        crossing_spawn=crossing_spawn,
        stop_spawn=stop_spawn,
        scripted=scripted,
        commands=commands,
        trips=trips,
        archive_radio=bool(cfg["archive_radio"]),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"scenario file {path} is not a mapping")
    return build_scenario(data)


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Rebind every seed-derived stream to a new master seed."""
    return replace(config, rng_seed=seed, loss=replace(config.loss, rng_seed=seed))
