"""Route types and the two trajectory planners.

cruise_plan follows the lane polyline with a trapezoidal speed profile;
docking_plan searches arc motion primitives on a discretized state lattice
for the terminal positioning at stops and the turning maneuver.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

from ..geometry import Point, Polyline, Pose, angle_diff, dist

V_MAX = 2.5          # m/s
ACCEL = 0.6          # m/s^2
DECEL = 0.8          # m/s^2, comfort braking
HORIZON_S = 8.0
SAMPLE_DT = 0.1
V_DOCK = 0.8
R_MIN = 3.0          # m, minimum turning radius
GRID = 0.25          # m, docking lattice cell
HEADING_BINS = 16
PRIMITIVE_STEP = 0.5  # m of arc per expansion
HEADING_COST = 0.1    # cost per radian of heading change
FOOTPRINT_R = 1.2     # m, vehicle footprint circle
GOAL_POS_TOL = 0.15   # m
GOAL_HEADING_TOL = math.radians(5.0)
LANE_HALFWIDTH = 1.5  # m, obstacles closer than this block the lane
OFFROUTE_LATERAL = 2.0


class TrajectorySource(enum.Enum):
    CRUISE = "cruise"
    DOCKING = "docking"
    EXTERNAL = "external"


class Direction(enum.Enum):
    OUTBOUND = "outbound"
    RETURN = "return"


class OffRoute(Exception):
    pass


class NoPath(Exception):
    pass


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    @property
    def xy(self) -> Point:
        return (self.x, self.y)


@dataclass(frozen=True)
class TrajectorySample:
    t: float        # absolute sim seconds
    x: float
    y: float
    heading: float
    speed: float


@dataclass(frozen=True)
class Trajectory:
    source: TrajectorySource
    samples: tuple[TrajectorySample, ...]
    computed_at: float       # sim seconds
    compute_duration: float  # modeled planner cost, seconds

    def validate(self) -> None:
        if not self.samples:
            raise ValueError("trajectory has no samples")
        for a, b in zip(self.samples, self.samples[1:]):
            if b.t <= a.t:
                raise ValueError("sample times must be strictly increasing")
        if any(s.speed < 0 for s in self.samples):
            raise ValueError("negative speed sample")

    @property
    def start(self) -> TrajectorySample:
        return self.samples[0]

    @property
    def end_time(self) -> float:
        return self.samples[-1].t

    def sample_at(self, t: float) -> TrajectorySample:
        """Linear interpolation; clamped to the first/last sample."""
        samples = self.samples
        if t <= samples[0].t:
            return samples[0]
        if t >= samples[-1].t:
            return samples[-1]
        lo, hi = 0, len(samples) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if samples[mid].t <= t:
                lo = mid
            else:
                hi = mid
        a, b = samples[lo], samples[hi]
        u = (t - a.t) / (b.t - a.t)
        heading = a.heading + u * angle_diff(b.heading, a.heading)
        return TrajectorySample(
            t, a.x + u * (b.x - a.x), a.y + u * (b.y - a.y),
            heading, a.speed + u * (b.speed - a.speed))

    def trimmed(self, t: float) -> "Trajectory":
        """Remaining portion from t on, starting with the interpolated state."""
        rest = tuple(s for s in self.samples if s.t > t)
        head = (self.sample_at(t),) if (not rest or rest[0].t > t) else ()
        return Trajectory(self.source, head + rest, self.computed_at,
                          self.compute_duration)


@dataclass
class RoutePlan:
    mission_id: int
    lane: Polyline
    stop_pose_start: Pose
    stop_pose_end: Pose
    direction: Direction
    turning_interval: tuple[float, float] | None = None  # arc range at v_turn
    v_turn: float = 1.2

    def validate(self) -> None:
        if self.lane.length <= 0:
            raise ValueError("route has zero length")
        if self.direction is Direction.RETURN and self.turning_interval is None:
            raise ValueError("return routes include a turning maneuver")

    def speed_limit(self, s: float, v_max: float = V_MAX) -> float:
        if self.turning_interval is not None:
            lo, hi = self.turning_interval
            if lo <= s <= hi:
                return min(v_max, self.v_turn)
        return v_max


@dataclass(frozen=True)
class PlannedObstacle:
    position: Point
    velocity: tuple[float, float]
    radius: float


def obstacle_stop_points(route: Polyline, s_from: float,
                         obstacles: list[PlannedObstacle],
                         footprint_r: float = FOOTPRINT_R,
                         halfwidth: float = LANE_HALFWIDTH,
                         gap: float = 0.3) -> list[float]:
    """Arc positions where the vehicle must stand to keep clear of obstacles."""
    stops = []
    for obs in obstacles:
        s_obs, lateral = route.project(obs.position, s_near=s_from, window=40.0)
        if lateral > halfwidth + obs.radius:
            continue
        if s_obs <= s_from:
            continue
        stops.append(max(s_from, s_obs - (obs.radius + footprint_r + gap)))
    return stops


def cruise_plan(state: VehicleState, route: RoutePlan,
                obstacles: list[PlannedObstacle],
                signal_stop_s: float | None, now_s: float,
                v_max: float = V_MAX, accel: float = ACCEL,
                decel: float = DECEL, horizon_s: float = HORIZON_S,
                dt: float = SAMPLE_DT,
                compute_duration: float = 0.02) -> Trajectory:
    """Trapezoidal profile along the lane toward the nearest active stop."""
    s0, lateral = route.lane.project(state.xy, s_near=None)
    if lateral > OFFROUTE_LATERAL:
        raise OffRoute(f"lateral error {lateral:.2f} m")
    stops = [route.lane.length]  # the far bus stop ends every route
    if signal_stop_s is not None and signal_stop_s >= s0 - 0.05:
        stops.append(max(signal_stop_s, s0))
    stops.extend(obstacle_stop_points(route.lane, s0, obstacles))
    s_stop = min(stops)

    samples = [TrajectorySample(now_s, state.x, state.y, state.heading, state.speed)]
    s = s0
    v = state.speed
    n = int(round(horizon_s / dt))
    for k in range(1, n + 1):
        d_rem = max(s_stop - s, 0.0)
        v_allow = math.sqrt(2.0 * decel * d_rem)
        v = min(v + accel * dt, route.speed_limit(s, v_max), v_allow)
        if v < 0.02 and d_rem < 0.5:
            v = 0.0
        s = min(s + v * dt, s_stop)
        pose = route.lane.pose_at(s)
        samples.append(TrajectorySample(now_s + k * dt, pose.x, pose.y,
                                        pose.heading, v))
    return Trajectory(TrajectorySource.CRUISE, tuple(samples), now_s,
                      compute_duration)


def _bin_state(x: float, y: float, heading: float,
               kappa: float) -> tuple[int, int, int, int]:
    # one arc step turns 9.55 deg, less than half a 22.5 deg heading bin, so
    # a first turn off a straight chain would alias with its straight sibling;
    # keying on arrival curvature keeps those branches alive
    return (round(x / GRID), round(y / GRID),
            round(heading / (2.0 * math.pi / HEADING_BINS)) % HEADING_BINS,
            0 if kappa == 0.0 else (1 if kappa > 0.0 else 2))


def _advance(x: float, y: float, h: float, kappa: float,
             ds: float) -> tuple[float, float, float]:
    if kappa == 0.0:
        return (x + ds * math.cos(h), y + ds * math.sin(h), h)
    dh = kappa * ds
    return (x + (math.sin(h + dh) - math.sin(h)) / kappa,
            y - (math.cos(h + dh) - math.cos(h)) / kappa,
            h + dh)


def _collides(x: float, y: float, obstacles: list[PlannedObstacle],
              footprint_r: float) -> bool:
    return any(math.hypot(x - o.position[0], y - o.position[1])
               < footprint_r + o.radius for o in obstacles)


def _segment_clear(a: Point, b: Point, obstacles: list[PlannedObstacle],
                   footprint_r: float, step: float = 0.25) -> bool:
    d = dist(a, b)
    n = max(1, int(d / step))
    for i in range(n + 1):
        t = i / n
        if _collides(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]),
                     obstacles, footprint_r):
            return False
    return True


def trajectory_blocked(trajectory: Trajectory,
                       obstacles: list[PlannedObstacle], from_t: float,
                       footprint_r: float = FOOTPRINT_R) -> bool:
    """True when any remaining sample collides with a known obstacle."""
    return any(s.t >= from_t and _collides(s.x, s.y, obstacles, footprint_r)
               for s in trajectory.samples)


def docking_plan(state: VehicleState, target: Pose,
                 obstacles: list[PlannedObstacle], now_s: float,
                 v_dock: float = V_DOCK, max_pops: int = 40000,
                 region_margin: float = 8.0) -> Trajectory:
    """Lattice search with arc primitives at curvature {0, +-1/R_min}.

    Search region is the start/goal bounding box plus region_margin; running
    out of reachable states (or the pop budget) raises NoPath.
    """
    if dist(state.xy, target.xy) > 25.0 + 1e-9:
        raise NoPath(f"target {dist(state.xy, target.xy):.1f} m away (limit 25)")
    x_lo = min(state.x, target.x) - region_margin
    x_hi = max(state.x, target.x) + region_margin
    y_lo = min(state.y, target.y) - region_margin
    y_hi = max(state.y, target.y) + region_margin
    kappas = (0.0, 1.0 / R_MIN, -1.0 / R_MIN)

    def heuristic(x: float, y: float, h: float) -> float:
        # admissible: length >= euclid, and |kappa| <= 1/R implies
        # length >= R * net heading change (with its heading-cost share)
        dh = abs(angle_diff(target.heading, h))
        return (max(math.hypot(target.x - x, target.y - y), R_MIN * dh)
                + HEADING_COST * dh)

    def at_goal(x: float, y: float, h: float) -> bool:
        return (math.hypot(target.x - x, target.y - y) <= GOAL_POS_TOL
                and abs(angle_diff(target.heading, h)) <= GOAL_HEADING_TOL)

    def analytic(x: float, y: float, h: float) -> float | None:
        """Straight shot to the goal point if alignment and clearance allow."""
        d = math.hypot(target.x - x, target.y - y)
        if d < 1e-9:
            return 0.0 if abs(angle_diff(target.heading, h)) <= GOAL_HEADING_TOL else None
        bearing = math.atan2(target.y - y, target.x - x)
        if abs(angle_diff(bearing, h)) > GOAL_HEADING_TOL:
            return None
        if abs(angle_diff(target.heading, h)) > GOAL_HEADING_TOL:
            return None
        if not _segment_clear((x, y), target.xy, obstacles, FOOTPRINT_R):
            return None
        return d

    start = (state.x, state.y, state.heading)
    if _collides(state.x, state.y, obstacles, FOOTPRINT_R):
        raise NoPath("start pose in collision")
    # node: (f, tie, g, x, y, h, parent index, kappa from parent)
    nodes: list[tuple[float, float, float, int, float]] = [
        (state.x, state.y, state.heading, -1, 0.0)]
    open_heap = [(heuristic(state.x, state.y, state.heading), 0, 0.0, 0)]
    closed: set[tuple[int, int, int, int]] = set()
    tie = 0
    pops = 0
    goal_index: int | None = None
    straight_tail = 0.0
    while open_heap:
        _, _, g, idx = heapq.heappop(open_heap)
        x, y, h, _, arrival_kappa = nodes[idx]
        key = _bin_state(x, y, h, arrival_kappa)
        if key in closed:
            continue
        closed.add(key)
        pops += 1
        if pops > max_pops:
            raise NoPath(f"pop budget exhausted after {pops} expansions")
        if at_goal(x, y, h):
            goal_index = idx
            break
        tail = analytic(x, y, h)
        if tail is not None:
            goal_index = idx
            straight_tail = tail
            break
        for kappa in kappas:
            nx, ny, nh = _advance(x, y, h, kappa, PRIMITIVE_STEP)
            if not (x_lo <= nx <= x_hi and y_lo <= ny <= y_hi):
                continue
            if _bin_state(nx, ny, nh, kappa) in closed:
                continue
            mx, my, _ = _advance(x, y, h, kappa, PRIMITIVE_STEP / 2.0)
            if _collides(nx, ny, obstacles, FOOTPRINT_R) or \
                    _collides(mx, my, obstacles, FOOTPRINT_R):
                continue
            cost = PRIMITIVE_STEP + HEADING_COST * abs(kappa * PRIMITIVE_STEP)
            tie += 1
            nodes.append((nx, ny, nh, idx, kappa))
            heapq.heappush(open_heap,
                           (g + cost + heuristic(nx, ny, nh), tie, g + cost,
                            len(nodes) - 1))
    if goal_index is None:
        raise NoPath(f"open set exhausted after {pops} expansions")

    # reconstruct primitive chain, then subdivide into a dense path
    chain = []
    idx = goal_index
    while idx != -1:
        chain.append(nodes[idx])
        idx = nodes[idx][3]
    chain.reverse()
    path: list[tuple[float, float, float]] = [start]
    for x, y, h, _parent, kappa in chain[1:]:
        # subdivide each 0.5 m primitive into 0.1 m arc slices
        bx, by, bh = path[-1]
        slices = 5
        for i in range(1, slices + 1):
            path.append(_advance(bx, by, bh, kappa, PRIMITIVE_STEP * i / slices))
    if straight_tail > 0.0:
        bx, by, bh = path[-1]
        n = max(1, int(straight_tail / 0.1))
        for i in range(1, n + 1):
            t = i / n
            path.append((bx + t * (target.x - bx), by + t * (target.y - by), bh))

    # constant-speed resampling at v_dock, 0.1 s cadence
    samples = [TrajectorySample(now_s, state.x, state.y, state.heading,
                                state.speed)]
    cum = [0.0]
    for (ax, ay, _), (bx, by, _) in zip(path, path[1:]):
        cum.append(cum[-1] + math.hypot(bx - ax, by - ay))
    total = cum[-1]
    k = 1
    while True:
        s_target = v_dock * SAMPLE_DT * k
        if s_target >= total:
            break
        j = 0
        while cum[j + 1] < s_target:
            j += 1
        seg = cum[j + 1] - cum[j]
        u = (s_target - cum[j]) / seg if seg > 0 else 0.0
        ax, ay, ah = path[j]
        bx, by, bh = path[j + 1]
        samples.append(TrajectorySample(
            now_s + SAMPLE_DT * k,
            ax + u * (bx - ax), ay + u * (by - ay),
            ah + u * angle_diff(bh, ah), v_dock))
        k += 1
    samples.append(TrajectorySample(now_s + SAMPLE_DT * k, path[-1][0],
                                    path[-1][1], path[-1][2], 0.0))
    compute_duration = min(0.29, 5e-5 * pops)
    return Trajectory(TrajectorySource.DOCKING, tuple(samples), now_s,
                      compute_duration)


def path_length(traj: Trajectory) -> float:
    return sum(math.hypot(b.x - a.x, b.y - a.y)
               for a, b in zip(traj.samples, traj.samples[1:]))
