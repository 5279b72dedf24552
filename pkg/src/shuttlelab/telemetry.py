"""Control-center backend: live aggregation plus the operator command relay.

The hub drains the control-center radio endpoint once per tick, remembers
the newest CAM, SPATEM and per-stop CPM, and merges them with the bus
stops' wired detection-count channel into one full-state snapshot. Radio
silence surfaces as staleness; nothing is backfilled from simulator ground
truth.

Snapshot schema, versioned via "v" (currently 1), all keys stable:

    {"v": 1, "sim_time_ns": int,
     "shuttle": null | {"x_m", "y_m", "heading_rad" (null if unavailable),
                        "speed_mps" (null if unavailable), "soc_percent",
                        "indicator", "door_open", "mission_id",
                        "progress_permille", "driving_status",
                        "received_ns", "stale"},
     "crossing": {"phase": null | "PED_GREEN" | "PED_CLEARANCE" | "PED_RED",
                  "mode": str, "countdown_s": null | float,
                  "movements": [{"signal_group_id", "event_state",
                                 "time_to_change_s": null | float}],
                  "received_ns": null | int, "stale": bool},
     "bus_stops": [{"station_id", "name", "pedestrian_count",
                    "boxes": [{"x_m", "y_m", "radius_m"}],
                    "received_ns": null | int, "stale": bool}],
     "health": {station_id as str: {"last_seen_ns": null | int,
                                    "stale": bool}}}

Command schema: {"name": str, "args": dict}. Submission returns
{"id", "name", "status"}; the acknowledgment arrives after the tick that
applied it as {"id", "name", "args", "ok", "reason", "applied_tick",
"sim_time_ns"}. Every command lands in the world's audit log.
"""

from __future__ import annotations

from .codec import (
    HEADING_UNAVAILABLE,
    SPEED_UNAVAILABLE,
    TIME_TO_CHANGE_UNKNOWN,
    CamPayload,
    CpmPayload,
    MapemPayload,
    SpatemPayload,
)
from .geo import compass_units_to_heading

SCHEMA_V = 1
COMMAND_NAMES = frozenset({
    "set_intersection_mode", "dispatch_mission", "pause_shuttle",
    "resume_shuttle", "send_external_trajectory",
})
_CROSSWALK_PHASE = {6: "PED_GREEN", 8: "PED_CLEARANCE", 3: "PED_RED"}


class TelemetryHub:
    """Aggregates received messages into snapshots and relays commands.

    Reads never touch simulation state; only queued commands do, and the
    world applies those at tick boundaries.
    """

    def __init__(self, world, stale_after_s: float = 1.0):
        self.world = world
        self.stale_after_ns = round(stale_after_s * 1e9)
        self._cam: tuple[int, CamPayload] | None = None
        self._spatem: tuple[int, SpatemPayload] | None = None
        self._cpm: dict[int, tuple[int, CpmPayload]] = {}
        self._mapem_ns: int | None = None
        self._pending: list[int] = []
        self._ack_outbox: list[dict] = []

    # -- tick choreography -------------------------------------------------

    def poll(self) -> None:
        """Fold newly delivered control-center traffic into the latest-state cache."""
        for rec in self.world.control_ep.drain_inbox():
            payload = rec.message.payload
            if isinstance(payload, CamPayload):
                self._cam = (rec.sim_time_ns, payload)
            elif isinstance(payload, SpatemPayload):
                self._spatem = (rec.sim_time_ns, payload)
            elif isinstance(payload, CpmPayload):
                self._cpm[rec.sender_id] = (rec.sim_time_ns, payload)
            elif isinstance(payload, MapemPayload):
                self._mapem_ns = rec.sim_time_ns
        still_pending = []
        for cmd_id in self._pending:
            ack = self.world.command_results.get(cmd_id)
            if ack is None:
                still_pending.append(cmd_id)
            else:
                self._ack_outbox.append(ack)
        self._pending = still_pending

    def step(self) -> None:
        """Advance the world one tick, then ingest what arrived."""
        self.world.step()
        self.poll()

    # -- snapshot ----------------------------------------------------------

    @property
    def sim_time_ns(self) -> int:
        rows = self.world.rows
        return rows[-1].sim_time_ns if rows else 0

    def _stale(self, seen_ns: int | None) -> bool:
        if seen_ns is None:
            return True
        return self.sim_time_ns - seen_ns > self.stale_after_ns

    def _shuttle_section(self) -> dict | None:
        if self._cam is None:
            return None
        seen_ns, cam = self._cam
        x, y = self.world.cfg.anchor.units_to_enu(cam.latitude, cam.longitude)
        heading = (None if cam.heading >= HEADING_UNAVAILABLE
                   else compass_units_to_heading(cam.heading))
        speed = (None if cam.speed >= SPEED_UNAVAILABLE
                 else cam.speed / 100.0)
        return {
            "x_m": round(x, 3), "y_m": round(y, 3),
            "heading_rad": None if heading is None else round(heading, 6),
            "speed_mps": None if speed is None else round(speed, 3),
            # SoC and driving status ride the vehicle's own data link;
            # the CAM payload has no field for them
            "soc_percent": round(self.world.agent.soc, 3),
            "indicator": cam.indicator_status,
            "door_open": bool(cam.door_status & 0b11),
            "mission_id": cam.mission_id,
            "progress_permille": cam.mission_progress,
            "driving_status": self.world.agent.status.value,
            "received_ns": seen_ns,
            "stale": self._stale(seen_ns),
        }

    def _crossing_section(self) -> dict:
        phase = countdown = None
        movements = []
        seen_ns = None
        if self._spatem is not None:
            seen_ns, spatem = self._spatem
            for movement in spatem.movements:
                ttc = (None if movement.time_to_change >= TIME_TO_CHANGE_UNKNOWN
                       else movement.time_to_change / 10.0)
                movements.append({"signal_group_id": movement.signal_group_id,
                                  "event_state": movement.event_state,
                                  "time_to_change_s": ttc})
                crosswalk_id = self.world.controller.cfg.signal_group_crosswalk
                if movement.signal_group_id == crosswalk_id:
                    phase = _CROSSWALK_PHASE.get(movement.event_state)
                    countdown = ttc
        return {
            "phase": phase,
            # the hub sits with the cabinet: mode is read over the wire
            "mode": self.world.controller.mode.name,
            "countdown_s": countdown,
            "movements": movements,
            "received_ns": seen_ns,
            "stale": self._stale(seen_ns),
        }

    def _bus_stop_sections(self) -> list[dict]:
        sections = []
        for i, (spec, pipeline) in enumerate(zip(self.world.cfg.bus_stops,
                                                 self.world.pipelines)):
            entry = self._cpm.get(spec.station_id)
            boxes = []
            seen_ns = None
            if entry is not None:
                seen_ns, cpm = entry
                sx, sy = spec.sensor
                boxes = [{"x_m": round(sx + obj.dx / 100.0, 3),
                          "y_m": round(sy + obj.dy / 100.0, 3),
                          "radius_m": round(obj.footprint_radius / 100.0, 3)}
                         for obj in cpm.objects]
            sections.append({
                "station_id": spec.station_id,
                "name": f"bus_stop_{i}",
                # wired channel: the stop reports its confirmed-track count
                "pedestrian_count": len(pipeline.tracker.confirmed),
                "boxes": boxes,
                "received_ns": seen_ns,
                "stale": self._stale(seen_ns),
            })
        return sections

    def _health_section(self) -> dict:
        crossing_seen = [ns for ns in
                         ((self._spatem[0] if self._spatem else None),
                          self._mapem_ns) if ns is not None]
        last = {
            self.world.shuttle_ep.station_id:
                self._cam[0] if self._cam else None,
            self.world.rsu_ep.station_id:
                max(crossing_seen) if crossing_seen else None,
        }
        for spec in self.world.cfg.bus_stops:
            entry = self._cpm.get(spec.station_id)
            last[spec.station_id] = entry[0] if entry else None
        return {str(station): {"last_seen_ns": seen,
                               "stale": self._stale(seen)}
                for station, seen in sorted(last.items())}

    def snapshot(self) -> dict:
        return {
            "v": SCHEMA_V,
            "sim_time_ns": self.sim_time_ns,
            "shuttle": self._shuttle_section(),
            "crossing": self._crossing_section(),
            "bus_stops": self._bus_stop_sections(),
            "health": self._health_section(),
        }

    # -- commands ----------------------------------------------------------

    def command(self, payload: dict) -> dict:
        """Validate and queue an operator command for the next tick."""
        name = payload.get("name")
        args = payload.get("args") or {}
        if name not in COMMAND_NAMES:
            ack = {"id": None, "name": name, "args": args, "ok": False,
                   "reason": f"unknown command {name!r}",
                   "applied_tick": None, "sim_time_ns": self.sim_time_ns}
            self._ack_outbox.append(ack)
            return {"id": None, "name": name, "status": "rejected"}
        cmd_id = self.world.submit_command(name, args)
        self._pending.append(cmd_id)
        return {"id": cmd_id, "name": name, "status": "queued"}

    def result(self, cmd_id: int) -> dict | None:
        return self.world.command_results.get(cmd_id)

    def was_issued(self, cmd_id: int) -> bool:
        return self.world.command_issued(cmd_id)

    def drain_acks(self) -> list[dict]:
        out = self._ack_outbox
        self._ack_outbox = []
        return out
