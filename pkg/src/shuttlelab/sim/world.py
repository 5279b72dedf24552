"""Fixed-step orchestration of the whole corridor.

Every tick runs the same stage order: apply due commands, advance pedestrians,
feed sensor scans to the bus-stop pipelines, step the crossing controller,
deliver the radio queues, step the shuttle, then record one world row.
Identical configuration and seed give a byte-identical run log.
"""

from __future__ import annotations

import hashlib
from dataclasses import astuple, dataclass
from math import cos, dist, sin

from ..codec import CamPayload, CpmPayload, MapemPayload, SpatemPayload, message
from ..geometry import point_in_polygon
from ..intersection import CrossingController, Phase, PriorityMode
from ..netbus import RadioBus, RxRecord, StationRole, TxRecord
from ..perception import BusStopPipeline
from ..scangen import Scene, wall_points
from ..shuttle.agent import DrivingStatus, ShuttleAgent, TickRecord
from ..shuttle.planning import (
    Direction,
    Trajectory,
    TrajectorySample,
    TrajectorySource,
)
from .pedestrians import PedEvent, PedestrianField, ShuttleObservation
from .scenario import (
    CONTROL_ID,
    CROSSING_ID,
    SHUTTLE_ID,
    ScenarioConfig,
)

NS_PER_S = 1_000_000_000

PHASE_TO_STATE = {Phase.PED_GREEN: 6, Phase.PED_CLEARANCE: 8, Phase.PED_RED: 3}


class IncompleteTrip(ValueError):
    """The trip never completed, so its delay is undefined."""


@dataclass
class TripSummary:
    index: int
    mission_id: int
    direction: Direction
    mode_at_depart: PriorityMode
    depart_ns: int
    arrive_ns: int | None = None
    complete_ns: int | None = None


@dataclass(frozen=True)
class WorldRow:
    sim_time_ns: int
    x: float
    y: float
    heading: float
    speed: float
    soc: float
    door_open: bool
    driving_status: str
    mission_id: int
    mission_progress: int
    trajectory_source: str
    steering_angle: float
    phase: str
    mode: str
    crosswalk_state: int
    shuttle_signal_state: int
    time_to_change_units: int
    shuttle_in_zone: bool
    dist_to_crossing_m: float
    peds_in_zone: int
    peds_in_zone_ahead: int
    peds_active: int
    waiting_stop0: int
    waiting_stop1: int
    tracked_peds_stop0: int
    tracked_peds_stop1: int
    crossings_total: int
    crossings_red: int
    compliant_zone_violations: int
    tx_total: int
    dropped_total: int


@dataclass(frozen=True)
class TrackSnapshot:
    """One confirmed perception track at an emission boundary, world frame."""
    sim_time_ns: int
    station_id: int
    track_id: int
    x: float
    y: float
    vx: float
    vy: float
    radius: float
    confidence: int


@dataclass
class RunLog:
    config: ScenarioConfig
    rows: list[WorldRow]
    trips: list[TripSummary]
    ped_events: list[PedEvent]
    command_audit: list[dict]
    phase_segments: list[tuple[float, Phase]]
    tick_log: list[TickRecord]
    planned_log: list[Trajectory]
    cam_tx: list[TxRecord]
    cpm_tx: dict[int, list[TxRecord]]
    spatem_tx: list[TxRecord]
    mapem_tx: list[TxRecord]
    shuttle_rx: list[RxRecord]
    track_log: dict[int, list[TrackSnapshot]]
    tx_total: int
    dropped: int

    def digest(self) -> str:
        """Content hash of everything metric-bearing; equal runs hash equal."""
        h = hashlib.sha256()
        for row in self.rows:
            h.update(repr(astuple(row)).encode())
        for trip in self.trips:
            h.update(repr(astuple(trip)).encode())
        for event in self.ped_events:
            h.update(repr(astuple(event)).encode())
        for entry in self.command_audit:
            h.update(repr(sorted(entry.items())).encode())
        return h.hexdigest()


@dataclass
class _Counters:
    crossings_total: int = 0
    crossings_red: int = 0
    compliant_zone_violations: int = 0


class World:
    """One scenario instance: builds all actors, then steps them in lockstep."""

    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.tick = 0
        self.now_ns = 0

        keep = config.archive_radio
        self.bus = RadioBus(config.loss)
        self.shuttle_ep = self.bus.add_station(
            SHUTTLE_ID, config.shuttle_start.xy, StationRole.SHUTTLE,
            keep_logs=keep)
        self.rsu_ep = self.bus.add_station(
            CROSSING_ID, config.rsu_position, StationRole.RSU_CROSSING,
            keep_logs=keep)
        self.stop_eps = []
        for spec, role in zip(config.bus_stops, (StationRole.RSU_BUS_STOP_0,
                                                 StationRole.RSU_BUS_STOP_1)):
            self.stop_eps.append(self.bus.add_station(
                spec.station_id, spec.sensor, role, keep_logs=keep))
        # co-located with the crossing cabinet; logs stay off because the
        # control center only mirrors traffic
        self.control_ep = self.bus.add_station(
            CONTROL_ID, config.rsu_position, StationRole.CONTROL_CENTER,
            keep_logs=False)

        self.controller = CrossingController(
            lane=config.lane,
            conflict_zone=list(config.conflict_zone),
            crosswalk_line=list(config.crosswalk),
            anchor=config.anchor,
            position_enu=config.rsu_position,
            mode=config.initial_mode,
            config=config.crossing_config)

        self.pipelines: list[BusStopPipeline] = []
        self.scenes: list[Scene] = []
        for spec in config.bus_stops:
            sx, sy = spec.sensor
            (ax, ay), (bx, by) = spec.shelter_wall
            scene = Scene(static=wall_points((ax - sx, ay - sy),
                                             (bx - sx, by - sy)),
                          max_range=config.sensor_range_m)
            pipeline = BusStopPipeline(spec.station_id)
            pipeline.learn(scene.learning_scans(
                spec.station_id, pipeline.config.learn_frames))
            self.scenes.append(scene)
            self.pipelines.append(pipeline)

        station_positions = {CROSSING_ID: config.rsu_position}
        for spec in config.bus_stops:
            station_positions[spec.station_id] = spec.sensor
        self.agent = ShuttleAgent(
            config.shuttle, config.anchor, config.routes,
            config.shuttle_start, station_positions,
            bus=self.bus, endpoint=self.shuttle_ep)

        self.field = PedestrianField(config)

        self.trips: list[TripSummary] = []
        self._trip_queue: list[Direction] = list(config.trips.sequence)
        self._active_trip: TripSummary | None = None
        self._ready_since_ns = 0

        self.command_audit: list[dict] = []
        self.command_results: dict[int, dict] = {}
        self._next_command_id = 1
        self._submitted: list[tuple[int, str, dict]] = []
        scheduled = [(int(at_s * NS_PER_S), i, "set_intersection_mode",
                      {"mode": mode.name})
                     for i, (at_s, mode) in enumerate(config.mode_schedule)]
        scheduled += [(int(cmd.at_s * NS_PER_S), len(scheduled) + i,
                       cmd.name, dict(cmd.args))
                      for i, cmd in enumerate(config.commands)]
        self._scheduled = sorted(scheduled, key=lambda e: (e[0], e[1]))

        self._counters = _Counters()
        self._event_cursor = 0
        self.rows: list[WorldRow] = []
        self.track_log: dict[int, list[TrackSnapshot]] = {
            spec.station_id: [] for spec in config.bus_stops}
        self._ticks_per_emission = config.ticks_per_emission()
        self._ticks_per_mapem = self._ticks_per_emission * 10  # 1 Hz

    # -- commands ----------------------------------------------------------

    def submit_command(self, name: str, args: dict | None = None) -> int:
        """Queue an operator command; it applies at the next tick boundary."""
        cmd_id = self._next_command_id
        self._next_command_id += 1
        self._submitted.append((cmd_id, name, dict(args or {})))
        return cmd_id

    def command_issued(self, cmd_id: int) -> bool:
        return 1 <= cmd_id < self._next_command_id

    def _apply_command(self, name: str, args: dict, now_ns: int) -> tuple[bool, str]:
        if name == "set_intersection_mode":
            raw = args.get("mode")
            try:
                mode = PriorityMode[str(raw)]
            except KeyError:
                return False, f"unknown mode {raw!r}"
            self.controller.set_mode(mode)
            return True, f"mode {mode.name}"
        if name == "dispatch_mission":
            raw = args.get("direction")
            try:
                direction = Direction(str(raw))
            except ValueError:
                return False, f"unknown direction {raw!r}"
            mission_id = args.get("mission_id")
            return self.agent.dispatch(
                direction, now_ns, int(mission_id) if mission_id else None)
        if name == "pause_shuttle":
            return self.agent.pause(now_ns)
        if name == "resume_shuttle":
            return self.agent.resume(now_ns)
        if name == "send_external_trajectory":
            samples = args.get("samples") or ()
            now_s = now_ns / NS_PER_S
            try:
                trajectory = Trajectory(
                    TrajectorySource.EXTERNAL,
                    tuple(TrajectorySample(now_s + float(t), float(x), float(y),
                                           float(heading), float(speed))
                          for t, x, y, heading, speed in samples),
                    computed_at=now_s, compute_duration=0.0)
            except (TypeError, ValueError) as exc:
                return False, f"bad samples: {exc}"
            return self.agent.receive_external(trajectory, now_ns)
        return False, f"unknown command {name!r}"

    def _run_commands(self, now_ns: int) -> None:
        due: list[tuple[int | None, str, dict]] = []
        while self._scheduled and self._scheduled[0][0] <= now_ns:
            _, _, name, args = self._scheduled.pop(0)
            due.append((None, name, args))
        due.extend(self._submitted)
        self._submitted = []
        for cmd_id, name, args in due:
            ok, reason = self._apply_command(name, args, now_ns)
            ack = {"id": cmd_id, "name": name, "args": args, "ok": ok,
                   "reason": reason, "applied_tick": self.tick,
                   "sim_time_ns": now_ns}
            self.command_audit.append(ack)
            if cmd_id is not None:
                self.command_results[cmd_id] = ack

    # -- per-tick stages ---------------------------------------------------

    def _shuttle_observation(self) -> ShuttleObservation:
        state = self.agent.state
        return ShuttleObservation(
            position=state.xy,
            heading_vec=(cos(state.heading), sin(state.heading)),
            doors_open=self.agent.doors_open)

    def _run_perception(self, now_ns: int) -> None:
        active = self.field.active()
        emit = self.tick % self._ticks_per_emission == 0
        for spec, scene, pipeline in zip(self.cfg.bus_stops, self.scenes,
                                         self.pipelines):
            sx, sy = spec.sensor
            relative = [(a.position[0] - sx, a.position[1] - sy)
                        for a in active]
            scan = scene.scan(spec.station_id, now_ns, pedestrians=relative)
            pipeline.process_scan(scan, self.cfg.tick_s)
            if emit:
                payload = pipeline.emit(now_ns, self.cfg.anchor, spec.sensor)
                self.bus.broadcast(spec.station_id,
                                   message(spec.station_id, payload), now_ns)
                snapshots = self.track_log[spec.station_id]
                for track in sorted(pipeline.tracker.confirmed,
                                    key=lambda t: t.track_id):
                    snapshots.append(TrackSnapshot(
                        now_ns, spec.station_id, track.track_id,
                        sx + track.position[0], sy + track.position[1],
                        track.velocity[0], track.velocity[1],
                        track.footprint_radius, track.confidence))

        onboard = []
        shuttle_xy = self.agent.state.xy
        for agent_, velocity, radius in self.field.detections():
            if dist(agent_, shuttle_xy) <= self.cfg.onboard_range_m:
                onboard.append((agent_, velocity, radius))
        self.agent.observe_onboard(onboard, now_ns)

    def _run_intersection(self, now_ns: int) -> None:
        for rec in self.rsu_ep.drain_inbox():
            if isinstance(rec.message.payload, CamPayload):
                self.controller.observe_cam(rec.sim_time_ns, rec.message.payload)
        self.controller.step(now_ns)
        if self.tick % self._ticks_per_emission == 0:
            spatem = self.controller.emit_spatem(now_ns)
            self.bus.broadcast(CROSSING_ID, message(CROSSING_ID, spatem), now_ns)
        if self.tick % self._ticks_per_mapem == 0:
            mapem = self.controller.emit_mapem()
            self.bus.broadcast(CROSSING_ID, message(CROSSING_ID, mapem), now_ns)

    def _run_trips(self, now_ns: int) -> None:
        if (self._trip_queue
                and self.agent.status is DrivingStatus.IDLE
                and self.agent.mission_id == 0
                and now_ns >= self._ready_since_ns
                + int(self.cfg.trips.headway_s * NS_PER_S)):
            direction = self._trip_queue[0]
            ok, _reason = self.agent.dispatch(direction, now_ns)
            if ok:
                self._trip_queue.pop(0)
                self._active_trip = TripSummary(
                    index=len(self.trips), mission_id=self.agent.mission_id,
                    direction=direction, mode_at_depart=self.controller.mode,
                    depart_ns=now_ns)
                self.trips.append(self._active_trip)

    def _settle_trip(self, now_ns: int) -> None:
        trip = self._active_trip
        if trip is None:
            return
        if trip.arrive_ns is None and self.agent.doors_open:
            trip.arrive_ns = now_ns
        if self.agent.mission_id == 0 and trip.arrive_ns is not None:
            trip.complete_ns = now_ns
            self._ready_since_ns = now_ns
            self._active_trip = None

    def _ingest_ped_events(self) -> None:
        events = self.field.events
        for event in events[self._event_cursor:]:
            if event.kind == "start_cross":
                self._counters.crossings_total += 1
                if event.crosswalk_state == 3:
                    self._counters.crossings_red += 1
            elif (event.kind == "enter_zone" and event.compliant
                    and event.crosswalk_state != 6):
                self._counters.compliant_zone_violations += 1
        self._event_cursor = len(events)

    def _record(self, now_ns: int) -> None:
        agent = self.agent
        phase = self.controller.phase
        observation = self._shuttle_observation()
        source = agent.active.source.value if agent.active is not None else ""
        self.rows.append(WorldRow(
            sim_time_ns=now_ns,
            x=agent.state.x, y=agent.state.y, heading=agent.state.heading,
            speed=agent.state.speed, soc=agent.soc,
            door_open=agent.doors_open,
            driving_status=agent.status.value,
            mission_id=agent.mission_id,
            mission_progress=agent.progress,
            trajectory_source=source,
            steering_angle=agent._steering,
            phase=phase.value,
            mode=self.controller.mode.value,
            crosswalk_state=PHASE_TO_STATE[phase],
            shuttle_signal_state=6 if phase is Phase.PED_RED else 3,
            time_to_change_units=self.controller.time_to_change_units(now_ns),
            shuttle_in_zone=point_in_polygon(agent.state.xy,
                                             list(self.cfg.conflict_zone)),
            dist_to_crossing_m=dist(agent.state.xy, self.cfg.crossing_center),
            peds_in_zone=self.field.in_zone_count(),
            peds_in_zone_ahead=self.field.in_zone_ahead_count(observation),
            peds_active=len(self.field.active()),
            waiting_stop0=self.field.waiting_at(0),
            waiting_stop1=self.field.waiting_at(1),
            tracked_peds_stop0=self.pipelines[0].pedestrian_count(),
            tracked_peds_stop1=self.pipelines[1].pedestrian_count(),
            crossings_total=self._counters.crossings_total,
            crossings_red=self._counters.crossings_red,
            compliant_zone_violations=self._counters.compliant_zone_violations,
            tx_total=self.bus._tx_seq,
            dropped_total=self.bus.dropped,
        ))

    def step(self) -> None:
        now_ns = self.now_ns
        self._run_commands(now_ns)
        self.field.step(now_ns, PHASE_TO_STATE[self.controller.phase],
                        self._shuttle_observation())
        self._run_perception(now_ns)
        self._run_intersection(now_ns)
        self.bus.deliver_due(now_ns)
        self._run_trips(now_ns)
        self.agent.step(now_ns)
        self._settle_trip(now_ns)
        self._ingest_ped_events()
        self._record(now_ns)
        self.tick += 1
        self.now_ns = self.tick * self.cfg.tick_ns

    def run_to_end(self) -> None:
        n_ticks = round(self.cfg.duration_s / self.cfg.tick_s)
        while self.tick < n_ticks:
            self.step()

    # -- results -----------------------------------------------------------

    def finish(self) -> RunLog:
        def split(records: list[TxRecord], payload_type) -> list[TxRecord]:
            return [r for r in records if isinstance(r.message.payload,
                                                     payload_type)]

        cpm_tx = {ep.station_id: split(ep.tx_log, CpmPayload)
                  for ep in self.stop_eps}
        return RunLog(
            config=self.cfg,
            rows=self.rows,
            trips=self.trips,
            ped_events=list(self.field.events),
            command_audit=self.command_audit,
            phase_segments=self.controller.phase_segments_s(),
            tick_log=self.agent.tick_log,
            planned_log=self.agent.planned_log,
            cam_tx=split(self.shuttle_ep.tx_log, CamPayload),
            cpm_tx=cpm_tx,
            spatem_tx=split(self.rsu_ep.tx_log, SpatemPayload),
            mapem_tx=split(self.rsu_ep.tx_log, MapemPayload),
            shuttle_rx=list(self.shuttle_ep.rx_log),
            track_log=self.track_log,
            tx_total=self.bus._tx_seq,
            dropped=self.bus.dropped,
        )


def run(config: ScenarioConfig) -> RunLog:
    """Build a world, run the configured duration, return the log."""
    world = World(config)
    world.run_to_end()
    return world.finish()


def measure_stop_delay(log: RunLog, trip: TripSummary | int) -> float:
    """Seconds a trip spent halted by pedestrians despite a green lane signal.

    Counts ticks where the shuttle stands (speed < 0.05 m/s), its own signal
    group shows 6, and at least one pedestrian occupies the conflict zone
    ahead of it. Signal waits are excluded by the state test: during those
    the lane group shows 3.
    """
    if isinstance(trip, int):
        trip = log.trips[trip]
    if trip.complete_ns is None:
        raise IncompleteTrip(
            f"trip {trip.index} (mission {trip.mission_id}) never completed")
    tick_s = log.config.tick_s
    total = 0.0
    for row in log.rows:
        if not trip.depart_ns <= row.sim_time_ns < trip.complete_ns:
            continue
        if (row.speed < 0.05 and row.shuttle_signal_state == 6
                and row.peds_in_zone_ahead > 0):
            total += tick_s
    return total
