"""Binary codec for the CAM / CPM / SPATEM / MAPEM message set.

Messages ride on a BTP-style header with the ETSI well-known destination
ports, followed by an ITS header and a fixed big-endian body layout:

    BTP    = port(2) port_info(2)
    ITS    = version(1) message_id(1) station_id(4)
    CAM    = gen_delta_time(2) lat(4) lon(4) heading(2) speed(2)
             door(1) indicator(1) mission_id(2) mission_progress(2)
    CPM    = reference_time(8) lat(4) lon(4) count(1)
             count * [object_id(2) dx(2) dy(2) vx(2) vy(2) radius(2) class(1) conf(1)]
    SPATEM = intersection_id(2) revision(1) count(1)
             count * [group_id(1) event_state(1) time_to_change(2)]
    MAPEM  = intersection_id(2) lat(4) lon(4) lane_count(1)
             per lane [lane_id(1) lane_type(1) signal_group(1) node_count(1)
                       node_count * (x_cm(2) y_cm(2))]

Field units follow ETSI conventions: positions in 0.1 microdegrees, speed in
0.01 m/s, heading in 0.1 degrees (3601 = unavailable), time-to-change in
0.1 s (36001 = unknown), object offsets/velocities in 0.01 m and 0.01 m/s.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 2

BTP_PORT_CAM = 2001
BTP_PORT_DENM = 2002
BTP_PORT_MAPEM = 2003
BTP_PORT_SPATEM = 2004
BTP_PORT_CPM = 2009

HEADING_UNAVAILABLE = 3601
SPEED_UNAVAILABLE = 16383
TIME_TO_CHANGE_UNKNOWN = 36001

MAX_CPM_OBJECTS = 128


class MessageId(enum.IntEnum):
    DENM = 1
    CAM = 2
    SPATEM = 4
    MAPEM = 5
    CPM = 14


PORT_FOR_MESSAGE = {
    MessageId.CAM: BTP_PORT_CAM,
    MessageId.SPATEM: BTP_PORT_SPATEM,
    MessageId.MAPEM: BTP_PORT_MAPEM,
    MessageId.CPM: BTP_PORT_CPM,
}
MESSAGE_FOR_PORT = {port: mid for mid, port in PORT_FOR_MESSAGE.items()}


class EventState(enum.IntEnum):
    STOP_AND_REMAIN = 3
    PROTECTED_MOVEMENT_ALLOWED = 6
    PROTECTED_CLEARANCE = 8


class ObjectClass(enum.IntEnum):
    UNKNOWN = 0
    PEDESTRIAN = 1
    VEHICLE = 2


class LaneType(enum.IntEnum):
    VEHICLE = 0
    CROSSWALK = 3


class CodecError(Exception):
    """Base for all encode/decode failures."""


class InvariantViolation(CodecError):
    """A field is outside its allowed range; message must not be emitted."""


class Truncated(CodecError):
    """Byte sequence shorter than the declared structure."""


class TrailingBytes(CodecError):
    """Byte sequence longer than the declared structure."""


class BadPort(CodecError):
    """BTP destination port is not a known message port."""


class PortMessageMismatch(CodecError):
    """BTP port does not match the message_id of the enclosed payload."""


class BadVersion(CodecError):
    """ITS protocol_version is not the supported value."""


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise InvariantViolation(what)


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvariantViolation(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise InvariantViolation(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ItsHeader:
    station_id: int
    message_id: MessageId
    protocol_version: int = PROTOCOL_VERSION

    def validate(self) -> None:
        _check(self.protocol_version == PROTOCOL_VERSION,
               f"protocol_version must be {PROTOCOL_VERSION}")
        _check(self.message_id in MessageId.__members__.values(),
               f"unknown message_id {self.message_id}")
        _check_range("station_id", self.station_id, 0, 0xFFFFFFFF)


@dataclass(frozen=True)
class CamPayload:
    generation_delta_time: int  # ms mod 65536
    latitude: int               # 0.1 microdegrees, signed
    longitude: int
    heading: int = HEADING_UNAVAILABLE   # 0.1 deg, 0..3600, 3601 unavailable
    speed: int = SPEED_UNAVAILABLE       # 0.01 m/s, 0..16382, 16383 unavailable
    door_status: int = 0                 # bit0 front open, bit1 rear open
    indicator_status: int = 0            # 0 off, 1 left, 2 right, 3 hazard
    mission_id: int = 0                  # 0 = no mission
    mission_progress: int = 0            # 0.1 percent, 0..1000

    message_id = MessageId.CAM

    def validate(self) -> None:
        _check_range("generation_delta_time", self.generation_delta_time, 0, 65535)
        _check_range("latitude", self.latitude, -900_000_000, 900_000_000)
        _check_range("longitude", self.longitude, -1_800_000_000, 1_800_000_000)
        _check_range("heading", self.heading, 0, HEADING_UNAVAILABLE)
        _check_range("speed", self.speed, 0, SPEED_UNAVAILABLE)
        _check_range("door_status", self.door_status, 0, 0b11)
        _check_range("indicator_status", self.indicator_status, 0, 3)
        _check_range("mission_id", self.mission_id, 0, 0xFFFF)
        _check_range("mission_progress", self.mission_progress, 0, 1000)


@dataclass(frozen=True)
class PerceivedObject:
    object_id: int        # emitting track id
    dx: int               # 0.01 m offset east of station reference
    dy: int               # 0.01 m offset north
    vx: int               # 0.01 m/s
    vy: int
    footprint_radius: int  # 0.01 m
    classification: ObjectClass = ObjectClass.UNKNOWN
    confidence: int = 0   # 0..100

    def validate(self) -> None:
        _check_range("object_id", self.object_id, 0, 0xFFFF)
        _check_range("dx", self.dx, -32768, 32767)
        _check_range("dy", self.dy, -32768, 32767)
        _check_range("vx", self.vx, -32768, 32767)
        _check_range("vy", self.vy, -32768, 32767)
        _check_range("footprint_radius", self.footprint_radius, 0, 0xFFFF)
        _check(self.classification in ObjectClass.__members__.values(),
               f"unknown classification {self.classification}")
        _check_range("confidence", self.confidence, 0, 100)


@dataclass(frozen=True)
class CpmPayload:
    reference_time: int   # ms since epoch
    latitude: int         # station reference point, 0.1 microdegrees
    longitude: int
    objects: tuple[PerceivedObject, ...] = ()

    message_id = MessageId.CPM

    def validate(self) -> None:
        _check_range("reference_time", self.reference_time, 0, 2**64 - 1)
        _check_range("latitude", self.latitude, -900_000_000, 900_000_000)
        _check_range("longitude", self.longitude, -1_800_000_000, 1_800_000_000)
        _check(len(self.objects) <= MAX_CPM_OBJECTS,
               f"object count {len(self.objects)} > {MAX_CPM_OBJECTS}")
        for obj in self.objects:
            obj.validate()


@dataclass(frozen=True)
class MovementState:
    signal_group_id: int
    event_state: EventState
    time_to_change: int = TIME_TO_CHANGE_UNKNOWN  # 0.1 s, 36001 = unknown

    def validate(self) -> None:
        _check_range("signal_group_id", self.signal_group_id, 0, 255)
        _check(self.event_state in (EventState.STOP_AND_REMAIN,
                                    EventState.PROTECTED_MOVEMENT_ALLOWED,
                                    EventState.PROTECTED_CLEARANCE),
               f"event_state {self.event_state} not in {{3, 6, 8}}")
        _check_range("time_to_change", self.time_to_change, 0, TIME_TO_CHANGE_UNKNOWN)


@dataclass(frozen=True)
class SpatemPayload:
    intersection_id: int
    revision: int
    movements: tuple[MovementState, ...] = ()

    message_id = MessageId.SPATEM

    def validate(self) -> None:
        _check_range("intersection_id", self.intersection_id, 0, 0xFFFF)
        _check_range("revision", self.revision, 0, 255)
        _check(len(self.movements) <= 255, "movement count > 255")
        groups = [m.signal_group_id for m in self.movements]
        _check(len(groups) == len(set(groups)), "duplicate signal_group_id")
        for m in self.movements:
            m.validate()


@dataclass(frozen=True)
class MapemLane:
    lane_id: int
    lane_type: LaneType
    signal_group_id: int                    # 0 = unsignalized
    nodes: tuple[tuple[int, int], ...]      # (x_cm, y_cm) offsets from reference

    def validate(self) -> None:
        _check_range("lane_id", self.lane_id, 0, 255)
        _check(self.lane_type in (LaneType.VEHICLE, LaneType.CROSSWALK),
               f"unknown lane_type {self.lane_type}")
        _check_range("signal_group_id", self.signal_group_id, 0, 255)
        _check(len(self.nodes) >= 2, f"lane {self.lane_id} has < 2 nodes")
        _check(len(self.nodes) <= 255, "node count > 255")
        for x_cm, y_cm in self.nodes:
            _check_range("node x_cm", x_cm, -32768, 32767)
            _check_range("node y_cm", y_cm, -32768, 32767)


@dataclass(frozen=True)
class MapemPayload:
    intersection_id: int
    latitude: int
    longitude: int
    lanes: tuple[MapemLane, ...] = ()

    message_id = MessageId.MAPEM

    def validate(self) -> None:
        _check_range("intersection_id", self.intersection_id, 0, 0xFFFF)
        _check_range("latitude", self.latitude, -900_000_000, 900_000_000)
        _check_range("longitude", self.longitude, -1_800_000_000, 1_800_000_000)
        _check(len(self.lanes) <= 255, "lane count > 255")
        ids = [lane.lane_id for lane in self.lanes]
        _check(len(ids) == len(set(ids)), "duplicate lane_id")
        for lane in self.lanes:
            lane.validate()


Payload = CamPayload | CpmPayload | SpatemPayload | MapemPayload


@dataclass(frozen=True)
class Message:
    """A full over-the-air unit: ITS header plus one payload."""

    header: ItsHeader
    payload: Payload

    def validate(self) -> None:
        self.header.validate()
        if self.header.message_id != self.payload.message_id:
            raise InvariantViolation(
                f"header message_id {self.header.message_id} != payload type "
                f"{self.payload.message_id}")
        self.payload.validate()


def message(station_id: int, payload: Payload) -> Message:
    """Convenience constructor deriving the ITS header from the payload type."""
    return Message(ItsHeader(station_id=station_id, message_id=payload.message_id), payload)


_BTP = struct.Struct(">HH")
_ITS = struct.Struct(">BBI")
_CAM = struct.Struct(">HiiHHBBHH")
_CPM_HEAD = struct.Struct(">QiiB")
_CPM_OBJ = struct.Struct(">HhhhhHBB")
_SPATEM_HEAD = struct.Struct(">HBB")
_SPATEM_MOV = struct.Struct(">BBH")
_MAPEM_HEAD = struct.Struct(">HiiB")
_MAPEM_LANE = struct.Struct(">BBBB")
_NODE = struct.Struct(">hh")


def _encode_body(payload: Payload) -> bytes:
    if isinstance(payload, CamPayload):
        return _CAM.pack(
            payload.generation_delta_time, payload.latitude, payload.longitude,
            payload.heading, payload.speed, payload.door_status,
            payload.indicator_status, payload.mission_id, payload.mission_progress)
    if isinstance(payload, CpmPayload):
        parts = [_CPM_HEAD.pack(payload.reference_time, payload.latitude,
                                payload.longitude, len(payload.objects))]
        for o in payload.objects:
            parts.append(_CPM_OBJ.pack(o.object_id, o.dx, o.dy, o.vx, o.vy,
                                       o.footprint_radius, int(o.classification),
                                       o.confidence))
        return b"".join(parts)
    if isinstance(payload, SpatemPayload):
        parts = [_SPATEM_HEAD.pack(payload.intersection_id, payload.revision,
                                   len(payload.movements))]
        for m in payload.movements:
            parts.append(_SPATEM_MOV.pack(m.signal_group_id, int(m.event_state),
                                          m.time_to_change))
        return b"".join(parts)
    if isinstance(payload, MapemPayload):
        parts = [_MAPEM_HEAD.pack(payload.intersection_id, payload.latitude,
                                  payload.longitude, len(payload.lanes))]
        for lane in payload.lanes:
            parts.append(_MAPEM_LANE.pack(lane.lane_id, int(lane.lane_type),
                                          lane.signal_group_id, len(lane.nodes)))
            for x_cm, y_cm in lane.nodes:
                parts.append(_NODE.pack(x_cm, y_cm))
        return b"".join(parts)
    raise InvariantViolation(f"unsupported payload type {type(payload).__name__}")


def encode(msg: Message) -> bytes:
    """Serialize a validated message to its canonical byte layout."""
    msg.validate()
    port = PORT_FOR_MESSAGE[msg.header.message_id]
    return (_BTP.pack(port, 0)
            + _ITS.pack(msg.header.protocol_version, int(msg.header.message_id),
                        msg.header.station_id)
            + _encode_body(msg.payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, st: struct.Struct) -> tuple:
        end = self.pos + st.size
        if end > len(self.data):
            raise Truncated(f"need {end} bytes, have {len(self.data)}")
        out = st.unpack_from(self.data, self.pos)
        self.pos = end
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise TrailingBytes(f"{len(self.data) - self.pos} bytes after message end")


def _decode_body(reader: _Reader, message_id: MessageId) -> Payload:
    if message_id == MessageId.CAM:
        (gdt, lat, lon, heading, speed, door, indicator,
         mission_id, progress) = reader.take(_CAM)
        return CamPayload(gdt, lat, lon, heading, speed, door, indicator,
                          mission_id, progress)
    if message_id == MessageId.CPM:
        ref_time, lat, lon, count = reader.take(_CPM_HEAD)
        objs = []
        for _ in range(count):
            oid, dx, dy, vx, vy, radius, cls, conf = reader.take(_CPM_OBJ)
            try:
                cls_e = ObjectClass(cls)
            except ValueError as exc:
                raise InvariantViolation(f"unknown classification {cls}") from exc
            objs.append(PerceivedObject(oid, dx, dy, vx, vy, radius, cls_e, conf))
        return CpmPayload(ref_time, lat, lon, tuple(objs))
    if message_id == MessageId.SPATEM:
        intersection_id, revision, count = reader.take(_SPATEM_HEAD)
        movements = []
        for _ in range(count):
            group, state, ttc = reader.take(_SPATEM_MOV)
            try:
                state_e = EventState(state)
            except ValueError as exc:
                raise InvariantViolation(f"unknown event_state {state}") from exc
            movements.append(MovementState(group, state_e, ttc))
        return SpatemPayload(intersection_id, revision, tuple(movements))
    if message_id == MessageId.MAPEM:
        intersection_id, lat, lon, lane_count = reader.take(_MAPEM_HEAD)
        lanes = []
        for _ in range(lane_count):
            lane_id, lane_type, group, node_count = reader.take(_MAPEM_LANE)
            try:
                type_e = LaneType(lane_type)
            except ValueError as exc:
                raise InvariantViolation(f"unknown lane_type {lane_type}") from exc
            nodes = tuple(reader.take(_NODE) for _ in range(node_count))
            lanes.append(MapemLane(lane_id, type_e, group, nodes))
        return MapemPayload(intersection_id, lat, lon, tuple(lanes))
    raise BadPort(f"no body codec for message_id {message_id}")


def decode(data: bytes) -> Message:
    """Parse bytes back into a message; exact inverse of encode on its image."""
    reader = _Reader(bytes(data))
    port, _port_info = reader.take(_BTP)
    if port not in MESSAGE_FOR_PORT:
        raise BadPort(f"unknown BTP destination port {port}")
    version, message_id_raw, station_id = reader.take(_ITS)
    if version != PROTOCOL_VERSION:
        raise BadVersion(f"protocol_version {version} != {PROTOCOL_VERSION}")
    try:
        message_id = MessageId(message_id_raw)
    except ValueError as exc:
        raise PortMessageMismatch(f"unknown message_id {message_id_raw}") from exc
    if MESSAGE_FOR_PORT[port] != message_id:
        raise PortMessageMismatch(
            f"port {port} carries {MESSAGE_FOR_PORT[port].name}, "
            f"payload says {message_id.name}")
    payload = _decode_body(reader, message_id)
    reader.done()
    msg = Message(ItsHeader(station_id=station_id, message_id=message_id), payload)
    msg.validate()
    return msg


def encoded_size(msg: Message) -> int:
    """Length in bytes of encode(msg) without building the byte string."""
    base = _BTP.size + _ITS.size
    p = msg.payload
    if isinstance(p, CamPayload):
        return base + _CAM.size
    if isinstance(p, CpmPayload):
        return base + _CPM_HEAD.size + len(p.objects) * _CPM_OBJ.size
    if isinstance(p, SpatemPayload):
        return base + _SPATEM_HEAD.size + len(p.movements) * _SPATEM_MOV.size
    if isinstance(p, MapemPayload):
        return base + _MAPEM_HEAD.size + sum(
            _MAPEM_LANE.size + len(lane.nodes) * _NODE.size for lane in p.lanes)
    raise InvariantViolation(f"unsupported payload type {type(p).__name__}")
