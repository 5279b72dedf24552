"""Pedestrian agents: crosswalk users, bus-stop waiters, scripted blockers.

Motion is straight-line at a sampled walk speed; delays in the metrics depend
on presence, not gait realism. Compliant agents enter the conflict zone only
while the crosswalk signal shows 6 (green); they freeze at the zone edge if
the light changes under them mid-approach. Non-compliant agents model the
observed shuttle-testing behavior: they hold position until the crosswalk is
red with the shuttle approaching nearby, then step out in front of it with
probability 0.5 per tick.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from math import dist, hypot

from ..geometry import Point, point_in_polygon
from .scenario import ScenarioConfig

DART_PROBABILITY = 0.5
DART_RANGE_M = 20.0
SPAWN_JITTER_M = 1.0      # along-lane scatter on the crosswalk
SLOT_SPACING_M = 1.2      # keeps platform waiters separable for the sensors
BOARD_RADIUS_M = 2.0

STATE_GREEN = 6
STATE_RED = 3


class PedState(enum.Enum):
    WAITING = "waiting"
    CROSSING = "crossing"
    AT_STOP = "at_stop"
    DONE = "done"


class PedGoal(enum.Enum):
    CROSS = "cross"
    WAIT_AT_STOP = "wait_at_stop"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class PedEvent:
    sim_time_ns: int
    ped_id: int
    kind: str              # spawned | start_cross | enter_zone | exit_zone | done
    compliant: bool
    crosswalk_state: int


@dataclass
class PedestrianAgent:
    ped_id: int
    position: Point
    goal: PedGoal
    compliant: bool
    state: PedState
    speed: float
    target: Point
    spawned_ns: int
    stop_id: int | None = None
    slot: int | None = None
    vanish_ns: int | None = None      # scripted agents leave instantly
    in_zone: bool = False
    radius: float = 0.25

    @property
    def velocity(self) -> tuple[float, float]:
        if self.state is not PedState.CROSSING or self.speed <= 0.0:
            return (0.0, 0.0)
        dx = self.target[0] - self.position[0]
        dy = self.target[1] - self.position[1]
        d = hypot(dx, dy)
        if d < 1e-9:
            return (0.0, 0.0)
        return (self.speed * dx / d, self.speed * dy / d)


@dataclass(frozen=True)
class ShuttleObservation:
    """What pedestrians can see of the shuttle: where it is and where it points."""
    position: Point
    heading_vec: Point
    doors_open: bool


class PedestrianField:
    """All pedestrian processes of one scenario, stepped once per tick.

    Agents are never removed from the roster; finished ones stay with state
    done so the spawn/terminate accounting is auditable after the run.
    """

    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        seed = config.rng_seed
        self._rng_cross = random.Random(f"{seed}:spawn:crossing")
        self._rng_stop = [random.Random(f"{seed}:spawn:stop0"),
                          random.Random(f"{seed}:spawn:stop1")]
        self._rng_dart = random.Random(f"{seed}:dart")

        self.agents: list[PedestrianAgent] = []
        self.events: list[PedEvent] = []
        self._state_now = STATE_RED
        self._next_id = 1
        self._scripted_pending = sorted(config.scripted, key=lambda s: s.at_s)
        self._scripted_idx = 0

        zone = list(config.conflict_zone)
        self._zone = zone
        c = config.crossing_center
        (ax, ay), (bx, by) = config.crosswalk
        self._curb_a = (ax, ay)
        self._curb_b = (bx, by)
        self._center = c
        # along-lane unit vector for spawn jitter
        u = config.bus_stops[1].platform_axis
        self._along = u

    # -- spawning ----------------------------------------------------------

    def _spawn_crosser(self, now_ns: int) -> None:
        rng = self._rng_cross
        side_a = rng.random() < 0.5
        compliant = rng.random() < self.cfg.crossing_spawn.p_compliant
        speed = rng.uniform(self.cfg.crossing_spawn.speed_min,
                            self.cfg.crossing_spawn.speed_max)
        jitter = rng.uniform(-SPAWN_JITTER_M, SPAWN_JITTER_M)
        ox, oy = self._along[0] * jitter, self._along[1] * jitter
        start = self._curb_a if side_a else self._curb_b
        end = self._curb_b if side_a else self._curb_a
        agent = PedestrianAgent(
            ped_id=self._next_id,
            position=(start[0] + ox, start[1] + oy),
            goal=PedGoal.CROSS,
            compliant=compliant,
            state=PedState.WAITING,
            speed=speed,
            target=(end[0] + ox, end[1] + oy),
            spawned_ns=now_ns)
        self._next_id += 1
        self.agents.append(agent)
        self.events.append(PedEvent(now_ns, agent.ped_id, "spawned",
                                    compliant, self._state_now))

    def _spawn_waiter(self, now_ns: int, stop_index: int) -> None:
        rng = self._rng_stop[stop_index]
        stop = self.cfg.bus_stops[stop_index]
        cap = self.cfg.stop_spawn.cap
        # both draws happen before any early-out so the stream stays aligned
        speed = rng.uniform(self.cfg.stop_spawn.speed_min,
                            self.cfg.stop_spawn.speed_max)
        pick = rng.random()
        occupied = {a.slot for a in self.agents
                    if a.stop_id == stop_index and a.state is not PedState.DONE}
        free = sorted(set(range(cap)) - occupied)
        if not free:
            return
        slot = free[int(pick * len(free))]
        ax_ = stop.platform_axis
        offset = (slot - (cap - 1) / 2.0) * SLOT_SPACING_M
        target = (stop.platform[0] + ax_[0] * offset,
                  stop.platform[1] + ax_[1] * offset)
        # approach from behind the platform (away from the lane)
        away = (stop.platform[0] - stop.pose.x, stop.platform[1] - stop.pose.y)
        norm = hypot(*away)
        away = (away[0] / norm, away[1] / norm)
        start = (target[0] + away[0] * 2.0, target[1] + away[1] * 2.0)
        agent = PedestrianAgent(
            ped_id=self._next_id,
            position=start,
            goal=PedGoal.WAIT_AT_STOP,
            compliant=True,
            state=PedState.CROSSING,   # walking in; becomes at_stop on arrival
            speed=speed,
            target=target,
            spawned_ns=now_ns,
            stop_id=stop_index,
            slot=slot)
        self._next_id += 1
        self.agents.append(agent)
        self.events.append(PedEvent(now_ns, agent.ped_id, "spawned",
                                    True, self._state_now))

    def _spawn_scripted(self, now_ns: int) -> None:
        while (self._scripted_idx < len(self._scripted_pending)
               and self._scripted_pending[self._scripted_idx].at_s * 1e9 <= now_ns):
            script = self._scripted_pending[self._scripted_idx]
            self._scripted_idx += 1
            agent = PedestrianAgent(
                ped_id=self._next_id,
                position=script.position,
                goal=PedGoal.SCRIPTED,
                compliant=False,
                state=PedState.CROSSING,
                speed=0.0,
                target=script.position,
                spawned_ns=now_ns,
                vanish_ns=now_ns + int(script.duration_s * 1e9))
            self._next_id += 1
            self.agents.append(agent)
            self.events.append(PedEvent(now_ns, agent.ped_id, "spawned",
                                        False, self._state_now))
            self._note_zone(agent, now_ns)

    # -- stepping ----------------------------------------------------------

    def _note_zone(self, agent: PedestrianAgent, now_ns: int) -> None:
        inside = point_in_polygon(agent.position, self._zone)
        if inside and not agent.in_zone:
            agent.in_zone = True
            self.events.append(PedEvent(now_ns, agent.ped_id, "enter_zone",
                                        agent.compliant, self._state_now))
        elif not inside and agent.in_zone:
            agent.in_zone = False
            self.events.append(PedEvent(now_ns, agent.ped_id, "exit_zone",
                                        agent.compliant, self._state_now))

    def _finish(self, agent: PedestrianAgent, now_ns: int) -> None:
        if agent.in_zone:
            agent.in_zone = False
            self.events.append(PedEvent(now_ns, agent.ped_id, "exit_zone",
                                        agent.compliant, self._state_now))
        agent.state = PedState.DONE
        self.events.append(PedEvent(now_ns, agent.ped_id, "done",
                                    agent.compliant, self._state_now))

    def _shuttle_near(self, shuttle: ShuttleObservation) -> bool:
        d = dist(shuttle.position, self._center)
        if d > DART_RANGE_M:
            return False
        to_crossing = (self._center[0] - shuttle.position[0],
                       self._center[1] - shuttle.position[1])
        approaching = (shuttle.heading_vec[0] * to_crossing[0]
                       + shuttle.heading_vec[1] * to_crossing[1]) > 0.0
        return approaching or d < 2.0

    def step(self, now_ns: int, crosswalk_state: int,
             shuttle: ShuttleObservation) -> None:
        self._state_now = crosswalk_state
        dt = self.cfg.tick_s
        p_cross = self.cfg.crossing_spawn.rate_per_s * dt
        p_stop = self.cfg.stop_spawn.rate_per_s * dt

        self._spawn_scripted(now_ns)
        if self._rng_cross.random() < p_cross:
            self._spawn_crosser(now_ns)
        for i in (0, 1):
            if self._rng_stop[i].random() < p_stop:
                self._spawn_waiter(now_ns, i)

        near = self._shuttle_near(shuttle)
        for agent in self.agents:
            if agent.state is PedState.DONE:
                continue
            if agent.vanish_ns is not None and now_ns >= agent.vanish_ns:
                self._finish(agent, now_ns)
                continue
            if agent.goal is PedGoal.SCRIPTED:
                continue  # stands in place until the window closes
            if agent.state is PedState.WAITING:
                self._maybe_start(agent, now_ns, crosswalk_state, near)
            elif agent.state is PedState.CROSSING:
                self._advance(agent, now_ns, crosswalk_state, dt)
            elif agent.state is PedState.AT_STOP:
                if (shuttle.doors_open and agent.stop_id is not None
                        and dist(shuttle.position,
                                 self.cfg.bus_stops[agent.stop_id].pose.xy)
                        <= BOARD_RADIUS_M):
                    self._finish(agent, now_ns)  # boards the shuttle

    def _maybe_start(self, agent: PedestrianAgent, now_ns: int,
                     state: int, shuttle_near: bool) -> None:
        if agent.compliant:
            if state == STATE_GREEN:
                agent.state = PedState.CROSSING
                self.events.append(PedEvent(now_ns, agent.ped_id, "start_cross",
                                            True, state))
            return
        # deliberate red-crossing in front of the approaching shuttle
        if state == STATE_RED and shuttle_near:
            if self._rng_dart.random() < DART_PROBABILITY:
                agent.state = PedState.CROSSING
                self.events.append(PedEvent(now_ns, agent.ped_id, "start_cross",
                                            False, state))

    def _advance(self, agent: PedestrianAgent, now_ns: int,
                 state: int, dt: float) -> None:
        step = agent.speed * dt
        dx = agent.target[0] - agent.position[0]
        dy = agent.target[1] - agent.position[1]
        remaining = hypot(dx, dy)
        if remaining <= step:
            agent.position = agent.target
            self._note_zone(agent, now_ns)
            if agent.goal is PedGoal.WAIT_AT_STOP:
                agent.state = PedState.AT_STOP
            else:
                self._finish(agent, now_ns)
            return
        nxt = (agent.position[0] + dx / remaining * step,
               agent.position[1] + dy / remaining * step)
        if (agent.compliant and not agent.in_zone and state != STATE_GREEN
                and point_in_polygon(nxt, self._zone)):
            return  # holds at the zone edge until green returns
        agent.position = nxt
        self._note_zone(agent, now_ns)

    # -- queries -----------------------------------------------------------

    def active(self) -> list[PedestrianAgent]:
        return [a for a in self.agents if a.state is not PedState.DONE]

    def detections(self) -> list[tuple[Point, tuple[float, float], float]]:
        return [(a.position, a.velocity, a.radius) for a in self.active()]

    def in_zone_count(self) -> int:
        return sum(1 for a in self.agents
                   if a.state is not PedState.DONE and a.in_zone)

    def in_zone_ahead_count(self, shuttle: ShuttleObservation) -> int:
        to_center = (self._center[0] - shuttle.position[0],
                     self._center[1] - shuttle.position[1])
        ahead = (shuttle.heading_vec[0] * to_center[0]
                 + shuttle.heading_vec[1] * to_center[1]) > 0.0
        return self.in_zone_count() if ahead else 0

    def waiting_at(self, stop_index: int) -> int:
        return sum(1 for a in self.agents
                   if a.stop_id == stop_index and a.state is PedState.AT_STOP)
