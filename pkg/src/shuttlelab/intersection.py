"""Smart pedestrian-crossing controller.

Two priority modes drive a three-phase automaton (pedestrian green,
clearance, pedestrian red) from the shuttle's CAM-derived arrival estimate.
Phase state is broadcast as SPATEM, static lane topology as MAPEM.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

from .codec import (
    TIME_TO_CHANGE_UNKNOWN,
    CamPayload,
    EventState,
    HEADING_UNAVAILABLE,
    LaneType,
    MapemLane,
    MapemPayload,
    MovementState,
    SPEED_UNAVAILABLE,
    SpatemPayload,
)
from .geo import GeoAnchor, compass_units_to_heading, to_units
from .geometry import Point, Polyline, angle_diff

log = logging.getLogger(__name__)

NS_PER_TENTH = 100_000_000  # 0.1 s


class Phase(enum.Enum):
    PED_GREEN = "PED_GREEN"
    PED_CLEARANCE = "PED_CLEARANCE"
    PED_RED = "PED_RED"


class PriorityMode(enum.Enum):
    SHUTTLE_PRIORITY = "SHUTTLE_PRIORITY"
    PEDESTRIAN_PRIORITY = "PEDESTRIAN_PRIORITY"


class EmptyLog(ValueError):
    pass


@dataclass(frozen=True)
class CrossingConfig:
    t_near_s: float = 12.0        # ETA threshold that arms the switch
    t_far_s: float = 30.0         # beyond this the shuttle is "not nearby"
    t_clear_s: float = 4.0        # fixed clearance duration
    hold_w_s: float = 15.0        # pedestrian-priority green hold
    exit_margin_m: float = 2.0
    v_floor_ms: float = 0.5       # ETA denominator floor
    off_route_m: float = 5.0
    cam_stale_s: float = 2.0      # no fresh CAM -> shuttle unknown
    intersection_id: int = 1
    signal_group_shuttle: int = 1
    signal_group_crosswalk: int = 2
    lane_id_shuttle: int = 1
    lane_id_crosswalk: int = 2


@dataclass(frozen=True)
class ShuttleView:
    s: float                 # arc position on the lane
    direction: int           # +1 toward increasing s, -1 decreasing
    speed: float             # m/s
    inside: bool             # reference point within the conflict interval
    past: bool               # beyond the zone in the travel direction
    eta: float | None        # seconds to zone entry; None if past or receding


@dataclass
class PhaseChange:
    sim_time_ns: int
    phase: Phase
    reason: str


def red_time_fraction(segments: list[tuple[float, Phase]], horizon_s: float) -> dict:
    """Phase log -> red seconds and the immediate-crossing fraction.

    segments: (start_time_s, phase) entries, piecewise constant until the next
    entry; the final phase extends to the horizon end.
    """
    if not segments:
        raise EmptyLog("no phase segments")
    if horizon_s <= 0:
        raise EmptyLog("non-positive horizon")
    t0 = segments[0][0]
    end = t0 + horizon_s
    red = 0.0
    for i, (t, phase) in enumerate(segments):
        t_next = segments[i + 1][0] if i + 1 < len(segments) else end
        lo, hi = max(t, t0), min(t_next, end)
        if hi > lo and phase in (Phase.PED_CLEARANCE, Phase.PED_RED):
            red += hi - lo
    return {
        "red_seconds": red,
        "fraction_immediate_cross": 1.0 - red / horizon_s,
    }


class CrossingController:
    """Single intersection automaton, stepped once per simulation tick."""

    def __init__(self, lane: Polyline, conflict_zone: list[Point],
                 crosswalk_line: list[Point], anchor: GeoAnchor,
                 position_enu: Point, mode: PriorityMode = PriorityMode.SHUTTLE_PRIORITY,
                 config: CrossingConfig | None = None):
        self.cfg = config or CrossingConfig()
        self.lane = lane
        self.conflict_zone = list(conflict_zone)
        self.crosswalk_line = list(crosswalk_line)
        self.anchor = anchor
        self.position_enu = position_enu
        self.mode = mode
        interval = lane.arc_interval_in_polygon(self.conflict_zone)
        if interval is None:
            raise ValueError("shuttle lane does not cross the conflict zone")
        self.s_enter, self.s_exit = interval

        self.phase = Phase.PED_GREEN
        self.phase_entered_at_ns = 0
        self.scheduled_change_at_ns: int | None = None
        self.first_detection_ns: int | None = None
        self.revision = 0
        self.phase_log: list[tuple[int, Phase]] = []
        self.shuttle_eta: float | None = None
        self.off_route_count = 0
        self._last_cam: CamPayload | None = None
        self._last_cam_rx_ns: int | None = None
        self._prev_s: float | None = None

    def set_mode(self, mode: PriorityMode) -> None:
        self.mode = mode

    def observe_cam(self, rx_time_ns: int, cam: CamPayload) -> None:
        self._last_cam = cam
        self._last_cam_rx_ns = rx_time_ns

    # -- ETA ---------------------------------------------------------------

    def _view_of(self, cam: CamPayload) -> ShuttleView | None:
        pos = self.anchor.units_to_enu(cam.latitude, cam.longitude)
        s, lateral = self.lane.project(pos)
        if lateral > self.cfg.off_route_m:
            self.off_route_count += 1
            log.debug("shuttle off route: residual %.2f m", lateral)
            self._prev_s = None
            return None
        speed = 0.0 if cam.speed == SPEED_UNAVAILABLE else cam.speed / 100.0
        if cam.heading != HEADING_UNAVAILABLE:
            heading = compass_units_to_heading(cam.heading)
            along = math.cos(angle_diff(heading, self.lane.heading_at(s)))
            direction = 1 if along >= 0 else -1
        elif self._prev_s is not None and abs(s - self._prev_s) > 1e-9:
            direction = 1 if s > self._prev_s else -1
        else:
            # no direction evidence: assume the zone-ward direction
            direction = 1 if s < self.s_enter else -1
        self._prev_s = s
        inside = self.s_enter <= s <= self.s_exit
        if inside:
            return ShuttleView(s, direction, speed, True, False, 0.0)
        past = (direction > 0 and s > self.s_exit) or (direction < 0 and s < self.s_enter)
        if past:
            return ShuttleView(s, direction, speed, False, True, None)
        receding = (direction > 0) != (s < self.s_enter)
        if receding:
            return ShuttleView(s, direction, speed, False, False, None)
        remaining = (self.s_enter - s) if direction > 0 else (s - self.s_exit)
        eta = remaining / max(speed, self.cfg.v_floor_ms)
        return ShuttleView(s, direction, speed, False, False, eta)

    def estimate_eta(self, cam: CamPayload) -> float | None:
        view = self._view_of(cam)
        return None if view is None else view.eta

    def _current_view(self, now_ns: int) -> ShuttleView | None:
        if self._last_cam is None or self._last_cam_rx_ns is None:
            return None
        if now_ns - self._last_cam_rx_ns > int(self.cfg.cam_stale_s * 1e9):
            return None
        return self._view_of(self._last_cam)

    # -- automaton ---------------------------------------------------------

    def _enter(self, phase: Phase, now_ns: int, scheduled: int | None,
               reason: str) -> PhaseChange:
        self.phase = phase
        self.phase_entered_at_ns = now_ns
        self.scheduled_change_at_ns = scheduled
        self.revision = (self.revision + 1) % 256
        self.phase_log.append((now_ns, phase))
        return PhaseChange(now_ns, phase, reason)

    def _release_red(self, view: ShuttleView | None) -> bool:
        if view is None:
            return True  # nothing to protect against
        if view.inside:
            return False
        if view.past:
            if view.direction > 0:
                return view.s >= self.s_exit + self.cfg.exit_margin_m
            return view.s <= self.s_enter - self.cfg.exit_margin_m
        return view.eta is None or view.eta > self.cfg.t_far_s

    def step(self, now_ns: int) -> PhaseChange | None:
        if not self.phase_log:
            self.phase_log.append((now_ns, self.phase))
            self.phase_entered_at_ns = now_ns
        view = self._current_view(now_ns)
        self.shuttle_eta = view.eta if view is not None else None
        eta = self.shuttle_eta
        clear_ns = int(self.cfg.t_clear_s * 1e9)

        if self.phase is Phase.PED_GREEN:
            near = eta is not None and eta <= self.cfg.t_near_s
            if near and self.mode is PriorityMode.SHUTTLE_PRIORITY:
                return self._enter(Phase.PED_CLEARANCE, now_ns,
                                   now_ns + clear_ns, "shuttle near")
            if near and self.mode is PriorityMode.PEDESTRIAN_PRIORITY:
                if self.first_detection_ns is None:
                    # hold window starts now; schedule is immutable once set
                    self.first_detection_ns = now_ns
                    self.scheduled_change_at_ns = (
                        now_ns + int(self.cfg.hold_w_s * 1e9))
            if (self.first_detection_ns is not None
                    and now_ns >= self.first_detection_ns
                    + int(self.cfg.hold_w_s * 1e9)):
                return self._enter(Phase.PED_CLEARANCE, now_ns,
                                   now_ns + clear_ns, "hold window elapsed")
            if (view is None or eta is None
                    or eta > self.cfg.t_far_s) and self.first_detection_ns is not None:
                # shuttle left before the hold ran out
                self.first_detection_ns = None
                self.scheduled_change_at_ns = None
            return None

        if self.phase is Phase.PED_CLEARANCE:
            # clearance always runs its full length, never aborted
            assert self.scheduled_change_at_ns is not None
            if now_ns >= self.scheduled_change_at_ns:
                self.first_detection_ns = None
                return self._enter(Phase.PED_RED, now_ns, None, "clearance done")
            return None

        # PED_RED: held open for the shuttle until it is truly gone
        if self._release_red(view):
            return self._enter(Phase.PED_GREEN, now_ns, None, "shuttle passed")
        return None

    # -- emissions ---------------------------------------------------------

    def time_to_change_units(self, now_ns: int) -> int:
        if self.scheduled_change_at_ns is None:
            return TIME_TO_CHANGE_UNKNOWN
        delta = self.scheduled_change_at_ns - now_ns
        if delta <= 0:
            return 0
        return min(36000, -(-delta // NS_PER_TENTH))

    def emit_spatem(self, now_ns: int) -> SpatemPayload:
        ttc = self.time_to_change_units(now_ns)
        shuttle_state = (EventState.PROTECTED_MOVEMENT_ALLOWED
                         if self.phase is Phase.PED_RED
                         else EventState.STOP_AND_REMAIN)
        crosswalk_state = {
            Phase.PED_GREEN: EventState.PROTECTED_MOVEMENT_ALLOWED,
            Phase.PED_CLEARANCE: EventState.PROTECTED_CLEARANCE,
            Phase.PED_RED: EventState.STOP_AND_REMAIN,
        }[self.phase]
        return SpatemPayload(
            intersection_id=self.cfg.intersection_id,
            revision=self.revision,
            movements=(
                MovementState(self.cfg.signal_group_shuttle, shuttle_state, ttc),
                MovementState(self.cfg.signal_group_crosswalk, crosswalk_state, ttc),
            ))

    def _nodes_cm(self, points: list[Point]) -> tuple[tuple[int, int], ...]:
        ref_x, ref_y = self.position_enu
        return tuple((to_units(x - ref_x, 100), to_units(y - ref_y, 100))
                     for x, y in points)

    def emit_mapem(self) -> MapemPayload:
        lat, lon = self.anchor.enu_to_units(*self.position_enu)
        lane_nodes = self._nodes_cm(self.lane.points)
        cross_nodes = self._nodes_cm(self.crosswalk_line)
        return MapemPayload(
            intersection_id=self.cfg.intersection_id,
            latitude=lat, longitude=lon,
            lanes=(
                MapemLane(self.cfg.lane_id_shuttle, LaneType.VEHICLE,
                          self.cfg.signal_group_shuttle, lane_nodes),
                MapemLane(self.cfg.lane_id_crosswalk, LaneType.CROSSWALK,
                          self.cfg.signal_group_crosswalk, cross_nodes),
            ))

    def phase_segments_s(self) -> list[tuple[float, Phase]]:
        return [(t / 1e9, phase) for t, phase in self.phase_log]
