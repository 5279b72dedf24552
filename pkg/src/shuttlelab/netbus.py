"""Broadcast bus emulating ITS-G5 radio between stations.

Every broadcast reaches every other registered station unless dropped by the
loss model. Loss is Bernoulli per (message, receiver); the drop and latency
draws derive from (seed, tx sequence number) only, so identical schedules
replay identically. Delivery is FIFO per sender-receiver pair.
"""

from __future__ import annotations

import enum
import heapq
import random
import socket
import threading
from dataclasses import dataclass, field

from .codec import Message, decode, encode, encoded_size
from .geometry import DegeneratePolygon, Point, point_in_polygon, segment_crosses_polygon

__all__ = [
    "StationRole", "StationEndpoint", "LossZone", "LossModel", "RadioBus",
    "TxRecord", "RxRecord", "segment_crosses_polygon", "DegeneratePolygon",
    "UdpRelay",
]


class StationRole(enum.Enum):
    SHUTTLE = "shuttle"
    RSU_CROSSING = "rsu_crossing"
    RSU_BUS_STOP_0 = "rsu_bus_stop_0"
    RSU_BUS_STOP_1 = "rsu_bus_stop_1"
    CONTROL_CENTER = "control_center"


@dataclass(frozen=True)
class TxRecord:
    sim_time_ns: int
    message: Message
    size_bytes: int
    seq: int


@dataclass(frozen=True)
class RxRecord:
    sim_time_ns: int
    message: Message
    size_bytes: int
    sender_id: int
    seq: int


@dataclass
class StationEndpoint:
    station_id: int
    position: Point
    role: StationRole
    tx_log: list[TxRecord] = field(default_factory=list)
    rx_log: list[RxRecord] = field(default_factory=list)
    inbox: list[RxRecord] = field(default_factory=list)
    keep_logs: bool = True

    def drain_inbox(self) -> list[RxRecord]:
        out = self.inbox
        self.inbox = []
        return out


class ZoneMode(enum.Enum):
    SENDER_IN = "sender_in"
    RECEIVER_IN = "receiver_in"
    SEGMENT_CROSSES = "segment_crosses"


@dataclass(frozen=True)
class LossZone:
    polygon: tuple[Point, ...]
    extra_loss: float
    mode: ZoneMode = ZoneMode.SEGMENT_CROSSES

    def applies(self, sender_pos: Point, receiver_pos: Point) -> bool:
        if self.mode is ZoneMode.SENDER_IN:
            return point_in_polygon(sender_pos, list(self.polygon))
        if self.mode is ZoneMode.RECEIVER_IN:
            return point_in_polygon(receiver_pos, list(self.polygon))
        return segment_crosses_polygon(sender_pos, receiver_pos, list(self.polygon))


@dataclass(frozen=True)
class LossModel:
    base_loss: float = 0.0
    zones: tuple[LossZone, ...] = ()
    latency_mean_ms: float = 5.0
    latency_jitter_ms: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        probs = [self.base_loss] + [z.extra_loss for z in self.zones]
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"loss probability {p} outside [0, 1]")
        for z in self.zones:
            if len(z.polygon) < 3:
                raise DegeneratePolygon("loss zone polygon needs >= 3 vertices")

    def effective_loss(self, sender_pos: Point, receiver_pos: Point) -> float:
        keep = 1.0 - self.base_loss
        for zone in self.zones:
            if zone.applies(sender_pos, receiver_pos):
                keep *= 1.0 - zone.extra_loss
        return 1.0 - keep


class RadioBus:
    """Single logical writer; endpoints' logs are read-only for observers."""

    def __init__(self, loss: LossModel | None = None):
        self.loss = loss or LossModel()
        self.stations: dict[int, StationEndpoint] = {}
        self._pending: list[tuple[int, int, int, RxRecord]] = []  # (deliver_ns, seq, rx_id, rec)
        self._tx_seq = 0
        self._last_delivery_ns: dict[tuple[int, int], int] = {}
        self.dropped = 0
        self.delivered = 0

    def register(self, station: StationEndpoint) -> StationEndpoint:
        if station.station_id in self.stations:
            raise ValueError(f"station_id {station.station_id} already registered")
        self.stations[station.station_id] = station
        return station

    def add_station(self, station_id: int, position: Point, role: StationRole,
                    keep_logs: bool = True) -> StationEndpoint:
        return self.register(StationEndpoint(station_id, position, role, keep_logs=keep_logs))

    def _draws(self, seq: int) -> random.Random:
        # string seeding hashes with sha512: stable across runs and platforms
        return random.Random(f"{self.loss.rng_seed}:{seq}")

    def broadcast(self, sender_id: int, msg: Message, sim_time_ns: int) -> list[tuple[int, int]]:
        """Queue msg from sender to all other stations; returns (receiver, deliver_ns) pairs."""
        sender = self.stations[sender_id]
        seq = self._tx_seq
        self._tx_seq += 1
        size = encoded_size(msg)
        if sender.keep_logs:
            sender.tx_log.append(TxRecord(sim_time_ns, msg, size, seq))
        rng = self._draws(seq)
        scheduled: list[tuple[int, int]] = []
        for rx_id in sorted(self.stations):
            if rx_id == sender_id:
                continue
            receiver = self.stations[rx_id]
            p_drop = self.loss.effective_loss(sender.position, receiver.position)
            u = rng.random()
            jitter = rng.uniform(-self.loss.latency_jitter_ms, self.loss.latency_jitter_ms)
            if u < p_drop:
                self.dropped += 1
                continue
            latency_ns = max(0, int((self.loss.latency_mean_ms + jitter) * 1e6))
            deliver_ns = sim_time_ns + latency_ns
            pair = (sender_id, rx_id)
            floor_ns = self._last_delivery_ns.get(pair, -1) + 1
            deliver_ns = max(deliver_ns, floor_ns)
            self._last_delivery_ns[pair] = deliver_ns
            rec = RxRecord(deliver_ns, msg, size, sender_id, seq)
            heapq.heappush(self._pending, (deliver_ns, seq, rx_id, rec))
            scheduled.append((rx_id, deliver_ns))
        return scheduled

    def deliver_due(self, sim_time_ns: int) -> int:
        """Move all messages due at or before sim_time_ns into receiver inboxes."""
        n = 0
        while self._pending and self._pending[0][0] <= sim_time_ns:
            _, _, rx_id, rec = heapq.heappop(self._pending)
            receiver = self.stations[rx_id]
            receiver.inbox.append(rec)
            if receiver.keep_logs:
                receiver.rx_log.append(rec)
            self.delivered += 1
            n += 1
        return n

    def flush(self) -> int:
        """Deliver everything still in flight (end of run)."""
        return self.deliver_due(1 << 62)


class UdpRelay:
    """Live mode: stations exchange real datagrams through a lossy relay.

    Datagrams carry exactly the codec wire format. The sender is identified by
    the ITS header station_id; the relay forwards to every other registered
    station address, applying the same loss model as the in-process bus.
    """

    def __init__(self, loss: LossModel, bind: tuple[str, int] = ("127.0.0.1", 0)):
        self.loss = loss
        self.addresses: dict[int, tuple[str, int]] = {}
        self.positions: dict[int, Point] = {}
        self._seq = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(bind)
        self._sock.settimeout(0.05)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.relayed = 0
        self.dropped = 0

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def register(self, station_id: int, address: tuple[str, int], position: Point) -> None:
        self.addresses[station_id] = address
        self.positions[station_id] = position

    def _handle(self, data: bytes) -> None:
        try:
            msg = decode(data)
        except Exception:
            return
        sender_id = msg.header.station_id
        if sender_id not in self.addresses:
            return
        seq = self._seq
        self._seq += 1
        rng = random.Random(f"{self.loss.rng_seed}:{seq}")
        for rx_id in sorted(self.addresses):
            if rx_id == sender_id:
                continue
            p_drop = self.loss.effective_loss(self.positions[sender_id], self.positions[rx_id])
            if rng.random() < p_drop:
                self.dropped += 1
                continue
            self._sock.sendto(data, self.addresses[rx_id])
            self.relayed += 1

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, _addr = self._sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            self._handle(data)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self) -> "UdpRelay":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
