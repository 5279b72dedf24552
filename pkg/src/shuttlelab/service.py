"""HTTP and websocket facade over one live simulation.

A SimSession owns the world plus its telemetry hub and paces ticks against
the wall clock (rate 1.0 = real time). Endpoints:

    GET  /health          liveness plus the current simulation time
    GET  /scenario        name, duration, tick length, schema version
    GET  /map             static geometry for map rendering (ENU meters)
    GET  /snapshot        latest full-state snapshot
    POST /command         queue an operator command, returns id + status
    GET  /command/{id}    acknowledgment once applied, else status pending
    WS   /ws              pushes {"type": "snapshot"|"ack"|"end", ...} frames;
                          accepts command JSON, answers {"type": "queued"}

The snapshot and command payloads are the telemetry hub's documented
schema; the pydantic models here pin the key names and types at the API
boundary.
"""

from __future__ import annotations

import asyncio
import contextlib

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, ValidationError

from .sim import ScenarioConfig, World
from .telemetry import SCHEMA_V, TelemetryHub


class ShuttleSection(BaseModel):
    x_m: float
    y_m: float
    heading_rad: float | None
    speed_mps: float | None
    soc_percent: float
    indicator: int
    door_open: bool
    mission_id: int
    progress_permille: int
    driving_status: str
    received_ns: int
    stale: bool


class Movement(BaseModel):
    signal_group_id: int
    event_state: int
    time_to_change_s: float | None


class CrossingSection(BaseModel):
    phase: str | None
    mode: str
    countdown_s: float | None
    movements: list[Movement]
    received_ns: int | None
    stale: bool


class Box(BaseModel):
    x_m: float
    y_m: float
    radius_m: float


class BusStopSection(BaseModel):
    station_id: int
    name: str
    pedestrian_count: int
    boxes: list[Box]
    received_ns: int | None
    stale: bool


class HealthEntry(BaseModel):
    last_seen_ns: int | None
    stale: bool


class Snapshot(BaseModel):
    v: int
    sim_time_ns: int
    shuttle: ShuttleSection | None
    crossing: CrossingSection
    bus_stops: list[BusStopSection]
    health: dict[str, HealthEntry]


class CommandRequest(BaseModel):
    name: str
    args: dict = Field(default_factory=dict)


class CommandQueued(BaseModel):
    id: int | None
    name: str | None
    status: str


class Ack(BaseModel):
    id: int | None
    name: str | None
    args: dict
    ok: bool
    reason: str
    applied_tick: int | None
    sim_time_ns: int


class ScenarioInfo(BaseModel):
    name: str
    duration_s: float
    tick_ms: int
    schema_v: int


class StopGeometry(BaseModel):
    station_id: int
    name: str
    position: tuple[float, float]
    platform: tuple[float, float]


class MapGeometry(BaseModel):
    routes: dict[str, list[tuple[float, float]]]
    crosswalk: list[tuple[float, float]]
    conflict_zone: list[tuple[float, float]]
    crossing_center: tuple[float, float]
    stops: list[StopGeometry]


class SimSession:
    """Owns world + hub; one ticker task, any number of subscribers."""

    QUEUE_SIZE = 64

    def __init__(self, config: ScenarioConfig, rate: float = 1.0):
        self.world = World(config)
        self.hub = TelemetryHub(self.world)
        self.rate = rate
        self.subscribers: set[asyncio.Queue] = set()
        self._n_ticks = round(config.duration_s / config.tick_s)
        self._task: asyncio.Task | None = None

    @property
    def done(self) -> bool:
        return self.world.tick >= self._n_ticks

    def subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue(self.QUEUE_SIZE)
        self.subscribers.add(queue)
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        self.subscribers.discard(queue)

    def _publish(self, message: dict) -> None:
        for queue in self.subscribers:
            if queue.full():            # slow consumer: shed the oldest frame
                with contextlib.suppress(asyncio.QueueEmpty):
                    queue.get_nowait()
            queue.put_nowait(message)

    async def run(self) -> None:
        loop = asyncio.get_running_loop()
        tick_wall = self.world.cfg.tick_s / self.rate
        next_at = loop.time()
        while not self.done:
            self.hub.step()
            for ack in self.hub.drain_acks():
                self._publish({"type": "ack", **ack})
            self._publish({"type": "snapshot", **self.hub.snapshot()})
            next_at += tick_wall
            delay = next_at - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_at = loop.time()
                await asyncio.sleep(0)   # keep the loop responsive when behind
        self._publish({"type": "end", "sim_time_ns": self.hub.sim_time_ns})

    def start(self) -> None:
        self._task = asyncio.get_running_loop().create_task(self.run())

    async def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await self._task
            self._task = None


def create_app(config: ScenarioConfig, rate: float = 1.0) -> FastAPI:
    session = SimSession(config, rate=rate)

    @contextlib.asynccontextmanager
    async def lifespan(_: FastAPI):
        session.start()
        yield
        await session.stop()

    app = FastAPI(title="shuttlelab telemetry", lifespan=lifespan)
    app.state.session = session

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sim_time_ns": session.hub.sim_time_ns,
                "done": session.done}

    @app.get("/scenario", response_model=ScenarioInfo)
    def scenario() -> ScenarioInfo:
        cfg = session.world.cfg
        return ScenarioInfo(name=cfg.name, duration_s=cfg.duration_s,
                            tick_ms=cfg.tick_ns // 1_000_000,
                            schema_v=SCHEMA_V)

    @app.get("/map", response_model=MapGeometry)
    def map_geometry() -> MapGeometry:
        cfg = session.world.cfg
        return MapGeometry(
            routes={direction.value: list(plan.lane.points)
                    for direction, plan in cfg.routes.items()},
            crosswalk=list(cfg.crosswalk),
            conflict_zone=list(cfg.conflict_zone),
            crossing_center=cfg.crossing_center,
            stops=[StopGeometry(station_id=spec.station_id,
                                name=f"bus_stop_{i}",
                                position=spec.pose.xy,
                                platform=spec.platform)
                   for i, spec in enumerate(cfg.bus_stops)])

    @app.get("/snapshot", response_model=Snapshot)
    def snapshot() -> Snapshot:
        return Snapshot.model_validate(session.hub.snapshot())

    @app.post("/command", response_model=CommandQueued)
    def command(request: CommandRequest) -> CommandQueued:
        return CommandQueued.model_validate(
            session.hub.command(request.model_dump()))

    @app.get("/command/{cmd_id}")
    def command_result(cmd_id: int) -> dict:
        ack = session.hub.result(cmd_id)
        if ack is None:
            if not session.hub.was_issued(cmd_id):
                raise HTTPException(status_code=404,
                                    detail=f"no command {cmd_id}")
            return {"id": cmd_id, "status": "pending"}
        return {"status": "applied", **ack}

    @app.websocket("/ws")
    async def websocket_channel(websocket: WebSocket) -> None:
        await websocket.accept()
        queue = session.subscribe()
        # immediate first frame so clients can render without waiting a tick
        await websocket.send_json({"type": "snapshot",
                                   **session.hub.snapshot()})

        async def pump() -> None:
            while True:
                await websocket.send_json(await queue.get())

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                data = await websocket.receive_json()
                try:
                    request = CommandRequest.model_validate(data)
                except ValidationError as exc:
                    await websocket.send_json(
                        {"type": "error", "reason": str(exc.errors()[0])})
                    continue
                queued = session.hub.command(request.model_dump())
                await websocket.send_json({"type": "queued", **queued})
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await pump_task
            session.unsubscribe(queue)

    return app
