"""Agent-cloud tunnel: wire codec, delay injection, and deadline tracking.

Frames are fixed-layout little-endian with a three-byte header (magic 0xA5,
version 0x01, type byte). Odometry frames are 89 bytes, commands 49, high
level commands 6. Deliveries run through either the virtual tunnel (delay
sampled into the simulation event queue) or a real UDP socket pair with a
delay proxy in between.

Round-trip time per control cycle is tau_u + tau_d + tau_p; the deadline
check compares the windowed mean against tau_max, non-strict, with an
optional strict mode over raw samples.
"""
from __future__ import annotations

import os
import random
import socket
import statistics
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum

MAGIC = 0xA5
VERSION = 0x01

TYPE_ODOMETRY = 1
TYPE_COMMAND = 2
TYPE_HIGH_LEVEL = 3

_ODOMETRY = struct.Struct("<BBBHIQ9d")
_COMMAND = struct.Struct("<BBBHIQ4d")
_HIGH_LEVEL = struct.Struct("<BBBHB")

ODOMETRY_SIZE = _ODOMETRY.size
COMMAND_SIZE = _COMMAND.size
HIGH_LEVEL_SIZE = _HIGH_LEVEL.size

BASE_PORT_ENV = "CLOUDMPC_BASE_PORT"
PROXY_ADDR_ENV = "CLOUDMPC_PROXY_ADDR"
DEFAULT_BASE_PORT = 15000


class DecodeError(Exception):
    """Base for frame rejection; subclass tells why."""


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class BadType(DecodeError):
    pass


class BadLength(DecodeError):
    pass


class HighLevelCode(IntEnum):
    TAKE_OFF = 1
    SAFETY_LAND = 2


@dataclass(frozen=True)
class Odometry:
    agent_id: int
    seq: int
    stamp_us: int
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    orientation: tuple[float, float, float]


@dataclass(frozen=True)
class Command:
    agent_id: int
    seq: int
    stamp_us: int
    roll_ref: float
    pitch_ref: float
    thrust: float
    yaw_ref: float = 0.0


@dataclass(frozen=True)
class HighLevel:
    agent_id: int
    code: HighLevelCode


WireMessage = Odometry | Command | HighLevel


def _check_ranges(agent_id: int, seq: int = 0, stamp_us: int = 0) -> None:
    if not 0 <= agent_id < 1 << 16:
        raise ValueError("agent_id must fit 16 bits")
    if not 0 <= seq < 1 << 32:
        raise ValueError("seq must fit 32 bits")
    if not 0 <= stamp_us < 1 << 64:
        raise ValueError("stamp_us must fit 64 bits")


def encode(message: WireMessage) -> bytes:
    if isinstance(message, Odometry):
        _check_ranges(message.agent_id, message.seq, message.stamp_us)
        return _ODOMETRY.pack(
            MAGIC,
            VERSION,
            TYPE_ODOMETRY,
            message.agent_id,
            message.seq,
            message.stamp_us,
            *message.position,
            *message.velocity,
            *message.orientation,
        )
    if isinstance(message, Command):
        _check_ranges(message.agent_id, message.seq, message.stamp_us)
        return _COMMAND.pack(
            MAGIC,
            VERSION,
            TYPE_COMMAND,
            message.agent_id,
            message.seq,
            message.stamp_us,
            message.roll_ref,
            message.pitch_ref,
            message.yaw_ref,
            message.thrust,
        )
    if isinstance(message, HighLevel):
        _check_ranges(message.agent_id)
        return _HIGH_LEVEL.pack(
            MAGIC, VERSION, TYPE_HIGH_LEVEL, message.agent_id, int(message.code)
        )
    raise TypeError(f"not a wire message: {type(message).__name__}")


def decode(data: bytes) -> WireMessage:
    if len(data) < 3:
        raise BadLength(f"frame of {len(data)} bytes is shorter than the header")
    if data[0] != MAGIC:
        raise BadMagic(f"magic 0x{data[0]:02X}")
    if data[1] != VERSION:
        raise BadVersion(f"version 0x{data[1]:02X}")
    kind = data[2]
    if kind == TYPE_ODOMETRY:
        if len(data) != ODOMETRY_SIZE:
            raise BadLength(f"odometry frame must be {ODOMETRY_SIZE} bytes, got {len(data)}")
        f = _ODOMETRY.unpack(data)
        return Odometry(
            agent_id=f[3],
            seq=f[4],
            stamp_us=f[5],
            position=f[6:9],
            velocity=f[9:12],
            orientation=f[12:15],
        )
    if kind == TYPE_COMMAND:
        if len(data) != COMMAND_SIZE:
            raise BadLength(f"command frame must be {COMMAND_SIZE} bytes, got {len(data)}")
        f = _COMMAND.unpack(data)
        return Command(
            agent_id=f[3], seq=f[4], stamp_us=f[5],
            roll_ref=f[6], pitch_ref=f[7], yaw_ref=f[8], thrust=f[9],
        )
    if kind == TYPE_HIGH_LEVEL:
        if len(data) != HIGH_LEVEL_SIZE:
            raise BadLength(f"high-level frame must be {HIGH_LEVEL_SIZE} bytes, got {len(data)}")
        f = _HIGH_LEVEL.unpack(data)
        try:
            code = HighLevelCode(f[4])
        except ValueError as exc:
            raise BadType(f"unknown high-level code {f[4]}") from exc
        return HighLevel(agent_id=f[3], code=code)
    raise BadType(f"type byte 0x{kind:02X}")


# ---------------------------------------------------------------------------
# delays


@dataclass
class DelayModel:
    """Constant-plus-jitter link delays with seeded drops."""

    uplink: float = 0.02
    downlink: float = 0.02
    uplink_jitter: float = 0.0
    downlink_jitter: float = 0.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.uplink, self.downlink, self.uplink_jitter, self.downlink_jitter) < 0:
            raise ValueError("delays and jitters must be non-negative")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        self._rng = random.Random(self.seed)

    def _sample(self, base: float, jitter: float) -> float | None:
        if self.drop_probability > 0.0 and self._rng.random() < self.drop_probability:
            return None
        if jitter > 0.0:
            return max(0.0, base + self._rng.uniform(-jitter, jitter))
        return base

    def sample_uplink(self) -> float | None:
        """Delay in seconds, or None when the frame is dropped."""
        return self._sample(self.uplink, self.uplink_jitter)

    def sample_downlink(self) -> float | None:
        return self._sample(self.downlink, self.downlink_jitter)


# ---------------------------------------------------------------------------
# routing


@dataclass(frozen=True)
class RouteTable:
    """Agent ports derived from the live service set.

    Uplink port is base + 2*id, downlink base + 2*id + 1; the shared service
    sits just below the base and catches unrouted traffic.
    """

    agents: frozenset[int]
    base_port: int = DEFAULT_BASE_PORT

    @classmethod
    def from_services(cls, services, base_port: int | None = None) -> "RouteTable":
        if base_port is None:
            base_port = int(os.environ.get(BASE_PORT_ENV, DEFAULT_BASE_PORT))
        ups = set()
        downs = set()
        for name in services:
            if name.startswith("svc-agent-"):
                body = name[len("svc-agent-"):]
                aid, _, direction = body.rpartition("-")
                if direction == "up" and aid.isdigit():
                    ups.add(int(aid))
                elif direction == "down" and aid.isdigit():
                    downs.add(int(aid))
        return cls(agents=frozenset(ups & downs), base_port=base_port)

    def has_route(self, agent_id: int) -> bool:
        return agent_id in self.agents

    def uplink_port(self, agent_id: int) -> int:
        return self.base_port + 2 * agent_id

    def downlink_port(self, agent_id: int) -> int:
        return self.base_port + 2 * agent_id + 1

    @property
    def shared_port(self) -> int:
        return self.base_port - 1


# ---------------------------------------------------------------------------
# virtual tunnel


class Direction(Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class Delivery:
    at: float
    direction: Direction
    agent_id: int
    port: int
    payload: bytes


@dataclass
class TunnelStats:
    sent: int = 0
    dropped: int = 0
    unrouted: int = 0


class VirtualTunnel:
    """Schedules encoded frames for future delivery in simulated time."""

    def __init__(self, routes: RouteTable, delays: DelayModel, warn=None):
        self.routes = routes
        self.delays = delays
        self.stats = TunnelStats()
        self._warn = warn or (lambda msg: None)

    def send(self, message: WireMessage, direction: Direction, now: float) -> Delivery | None:
        """Delivery record for the event queue, or None when dropped."""
        payload = encode(message)
        self.stats.sent += 1
        agent_id = message.agent_id
        if self.routes.has_route(agent_id):
            if direction is Direction.UP:
                port = self.routes.uplink_port(agent_id)
            else:
                port = self.routes.downlink_port(agent_id)
        else:
            port = self.routes.shared_port
            self.stats.unrouted += 1
            self._warn(f"no route for agent {agent_id}, using shared service")
        delay = (
            self.delays.sample_uplink()
            if direction is Direction.UP
            else self.delays.sample_downlink()
        )
        if delay is None:
            self.stats.dropped += 1
            return None
        return Delivery(at=now + delay, direction=direction, agent_id=agent_id,
                        port=port, payload=payload)


class Inbox:
    """Per-agent latest-frame slots enforcing monotone sequence numbers."""

    def __init__(self):
        self.latest: dict[int, WireMessage] = {}
        self._last_seq: dict[int, int] = {}
        self.stale = 0
        self.decode_errors = 0

    def offer(self, payload: bytes) -> WireMessage | None:
        """Decoded message if fresh; None for corrupt or stale frames."""
        try:
            message = decode(payload)
        except DecodeError:
            self.decode_errors += 1
            return None
        seq = getattr(message, "seq", None)
        if seq is not None:
            last = self._last_seq.get(message.agent_id)
            if last is not None and seq <= last:
                self.stale += 1
                return None
            self._last_seq[message.agent_id] = seq
        self.latest[message.agent_id] = message
        return message


# ---------------------------------------------------------------------------
# round-trip tracking


class DeadlineStatus(Enum):
    OK = "Ok"
    VIOLATION = "Violation"


class RttTracker:
    """Sliding window over (tau_u, tau_d, tau_p) control-cycle samples."""

    def __init__(self, window: int = 50, tau_max: float = 0.1):
        if window < 1:
            raise ValueError("window must be at least 1")
        if tau_max <= 0:
            raise ValueError("tau_max must be positive")
        self.window = window
        self.tau_max = tau_max
        self.samples: deque[tuple[float, float, float, float]] = deque(maxlen=window)

    def record_cycle(self, tau_u: float, tau_d: float, tau_p: float) -> None:
        if min(tau_u, tau_d, tau_p) < 0:
            raise ValueError("cycle components must be non-negative")
        self.samples.append((tau_u, tau_d, tau_p, tau_u + tau_d + tau_p))

    def _mean(self, idx: int) -> float:
        # statistics.mean is exact-rational: constant samples average to
        # themselves bit-for-bit, which the latency accounting tests rely on
        if not self.samples:
            return 0.0
        return statistics.mean(s[idx] for s in self.samples)

    @property
    def mean_uplink(self) -> float:
        return self._mean(0)

    @property
    def mean_downlink(self) -> float:
        return self._mean(1)

    @property
    def mean_processing(self) -> float:
        return self._mean(2)

    @property
    def mean_rtt(self) -> float:
        return self._mean(3)

    def __len__(self) -> int:
        return len(self.samples)


def check_deadline(tracker: RttTracker, strict: bool = False) -> DeadlineStatus:
    """Violation when the windowed mean round trip exceeds tau_max.

    The bound is non-strict: a mean exactly at tau_max is Ok. Strict mode
    instead flags any raw sample over the bound.
    """
    if not tracker.samples:
        raise ValueError("deadline check requires at least one sample")
    if strict:
        worst = max(s[3] for s in tracker.samples)
        return DeadlineStatus.VIOLATION if worst > tracker.tau_max else DeadlineStatus.OK
    if tracker.mean_rtt > tracker.tau_max:
        return DeadlineStatus.VIOLATION
    return DeadlineStatus.OK


# ---------------------------------------------------------------------------
# real-time mode


def proxy_address() -> str:
    return os.environ.get(PROXY_ADDR_ENV, "127.0.0.1")


class UdpEndpoint:
    """Socket wrapper that feeds received frames to a callback thread."""

    def __init__(self, port: int, on_frame=None, host: str = "127.0.0.1"):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.05)
        self.port = self._sock.getsockname()[1]
        self._on_frame = on_frame
        self._running = False
        self._thread: threading.Thread | None = None

    def send(self, payload: bytes, port: int, host: str | None = None) -> None:
        self._sock.sendto(payload, (host or proxy_address(), port))

    def start(self) -> None:
        if self._on_frame is None:
            raise ValueError("endpoint has no frame callback")
        self._running = True
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while self._running:
            try:
                payload, _ = self._sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            self._on_frame(payload)

    def close(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=1.0)
        self._sock.close()


class DelayProxy:
    """Forwards datagrams to a fixed target after an injected link delay."""

    def __init__(self, listen_port: int, target_port: int, delay: float,
                 drop_probability: float = 0.0, seed: int = 0,
                 host: str = "127.0.0.1"):
        self.delay = delay
        self.drop_probability = drop_probability
        self.target = (host, target_port)
        self._rng = random.Random(seed)
        self._out = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._endpoint = UdpEndpoint(listen_port, on_frame=self._handle, host=host)
        self.port = self._endpoint.port

    def _handle(self, payload: bytes) -> None:
        if self.drop_probability > 0.0 and self._rng.random() < self.drop_probability:
            return
        timer = threading.Timer(self.delay, self._out.sendto, (payload, self.target))
        timer.daemon = True
        timer.start()

    def start(self) -> None:
        self._endpoint.start()

    def close(self) -> None:
        self._endpoint.close()
        self._out.close()


def wall_clock_us() -> int:
    return time.monotonic_ns() // 1000
