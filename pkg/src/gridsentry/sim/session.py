"""Publisher/subscriber GOOSE sessions that emit labeled call traces.

A session runs two endpoints concurrently: the resource-limited device
publishes one frame per cycle, the resource-rich device subscribes. Each
endpoint records what its kernel hook and user hook would observe. The
device under test is the endpoint whose tier matches the requested class;
threat payloads are spliced into its traces at Poisson-timed cycle
boundaries.

Traces are a function of (seed, class, scenario) only: time offsets come
from a virtual clock and every random stream is keyed by the seed, so the
loopback and in-process transports produce identical traces.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DomainError, SessionError
from ..traces import CallEvent, CallTrace, DeviceClass, Source, Tier
from .goose import GooseFrame
from .payloads import JITTER_POOL, SETUP, TEARDOWN, Threat, cycle_calls, payload_block
from .poisson import sample_attack_times

APP_ID = 0x3001
_ACK = b"ACK"
_RECV_TIMEOUT_S = 5.0

# virtual time per traced call, microseconds
_STEP_US = {Tier.LIMITED: 40, Tier.RICH: 8}

_SCENARIO_MAP = {
    "CD1": (Threat.LEAKAGE, Tier.LIMITED),
    "CD2": (Threat.POISONING, Tier.LIMITED),
    "CD3": (Threat.STORE_AND_SEND_LATER, Tier.LIMITED),
    "CD4": (Threat.LEAKAGE, Tier.RICH),
    "CD5": (Threat.POISONING, Tier.RICH),
    "CD6": (Threat.STORE_AND_SEND_LATER, Tier.RICH),
}
SCENARIO_IDS = tuple(_SCENARIO_MAP)


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 60.0
    publish_period_s: float = 1.0
    seed: int = 0
    jitter: float = 0.05
    limited_kernel_jitter: float = 0.15
    transport: str = "auto"  # loopback | inproc | auto (loopback, falling back to inproc)

    def __post_init__(self):
        if not self.duration_s > 0 or not self.publish_period_s > 0:
            raise DomainError("duration_s and publish_period_s must be positive")
        for j in (self.jitter, self.limited_kernel_jitter):
            if not 0 <= j < 1:
                raise DomainError("jitter must lie in [0, 1)")
        if self.transport not in ("loopback", "inproc", "auto"):
            raise DomainError(f"unknown transport {self.transport!r}")

    @property
    def n_cycles(self) -> int:
        return max(1, int(round(self.duration_s / self.publish_period_s)))

    def jitter_for(self, tier: Tier, source: Source) -> float:
        if tier is Tier.LIMITED and source is Source.KERNEL:
            return self.limited_kernel_jitter
        return self.jitter


@dataclass(frozen=True)
class ThreatScenario:
    id: str
    lam: float = 6.0
    threat: Optional[Threat] = None
    tier: Optional[Tier] = None

    def __post_init__(self):
        if self.id not in _SCENARIO_MAP:
            raise DomainError(f"unknown scenario {self.id!r}; expected one of {', '.join(SCENARIO_IDS)}")
        threat, tier = _SCENARIO_MAP[self.id]
        if self.threat is not None and Threat(self.threat) is not threat:
            raise DomainError(f"{self.id} is a {threat.value} scenario")
        if self.tier is not None and Tier(self.tier) is not tier:
            raise DomainError(f"{self.id} targets {tier.value} devices")
        object.__setattr__(self, "threat", threat)
        object.__setattr__(self, "tier", tier)
        if not self.lam > 0:
            raise DomainError("lambda must be positive")


def task_schedule(n_cycles: int, task_id: str) -> list[tuple[int, bool]]:
    """Fixed per-task dataset plan: (values in the frame, state changed) per cycle."""
    key = int.from_bytes(hashlib.blake2b(task_id.encode(), digest_size=8).digest(), "big")
    rng = np.random.default_rng(key)
    entries = rng.integers(2, 7, size=n_cycles)
    changes = rng.random(n_cycles) < 0.2
    changes[0] = False
    return [(int(e), bool(s)) for e, s in zip(entries, changes)]


def make_frames(n_cycles: int, period_s: float, task_id: str) -> list[GooseFrame]:
    frames = []
    st, sq = 1, 0
    for c, (entries, change) in enumerate(task_schedule(n_cycles, task_id)):
        if change:
            st, sq = st + 1, 0
        values = [((c * 31 + i * 7) % 997) / 10.0 for i in range(entries)]
        payload = struct.pack(f">{entries}f", *values)
        frames.append(GooseFrame(APP_ID, st, sq, payload, int(round(c * period_s * 1000))))
        sq += 1
    return frames


def _stream(seed, *tags):
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *tags])


_SOURCE_TAG = {Source.KERNEL: 1, Source.USER: 2}
_TIER_TAG = {Tier.LIMITED: 1, Tier.RICH: 2}


def attack_boundaries(scenario: ThreatScenario, config: SimConfig) -> list[int]:
    """Cycle boundaries (0..n_cycles) at which payload blocks are spliced."""
    times = sample_attack_times(scenario.lam, config.duration_s, _stream(config.seed, 7))
    n = config.n_cycles
    return [min(n, max(0, int(round(t / config.publish_period_s)))) for t in times]


class _Endpoint:
    """One device's task: owns its random streams and trace buffers."""

    def __init__(self, tier: Tier, config: SimConfig, scenario: Optional[ThreatScenario]):
        self.tier = tier
        self.config = config
        self.scenario = scenario
        self.calls = {s: [] for s in Source}  # source -> list of (name, t_us)
        self.clock = {s: 0 for s in Source}
        self.jitter_rng = {s: _stream(config.seed, 3, _TIER_TAG[tier], _SOURCE_TAG[s]) for s in Source}
        self.payload_rng = {s: _stream(config.seed, 11, _TIER_TAG[tier], _SOURCE_TAG[s]) for s in Source}
        self.attacks = {}
        if scenario is not None:
            for b in attack_boundaries(scenario, config):
                self.attacks[b] = self.attacks.get(b, 0) + 1

    def _emit(self, source, names, not_before_us=0):
        t = max(self.clock[source], not_before_us)
        step = _STEP_US[self.tier]
        out = self.calls[source]
        for name in names:
            out.append((name, t))
            t += step
        self.clock[source] = t

    def setup(self):
        for s in Source:
            self._emit(s, SETUP[(self.tier, s)])

    def _splice_attacks(self, boundary):
        count = self.attacks.get(boundary, 0)
        if not count:
            return
        t0 = int(round(boundary * self.config.publish_period_s * 1e6))
        for _ in range(count):
            for s in Source:
                self._emit(s, payload_block(self.scenario.threat, self.tier, s, self.payload_rng[s]), t0)

    def cycle(self, c: int, frame: GooseFrame):
        self._splice_attacks(c)
        entries = len(frame.payload) // 4
        change = frame.sq_num == 0 and c > 0
        t0 = int(round(c * self.config.publish_period_s * 1e6))
        for s in Source:
            names = cycle_calls(self.tier, s, entries, change)
            rng = self.jitter_rng[s]
            if rng.random() < self.config.jitter_for(self.tier, s):
                pool = JITTER_POOL[(self.tier, s)]
                extra = pool[int(rng.integers(len(pool)))]
                names.insert(int(rng.integers(len(names) + 1)), extra)
            self._emit(s, names, t0)

    def teardown(self):
        self._splice_attacks(self.config.n_cycles)
        end = int(round(self.config.n_cycles * self.config.publish_period_s * 1e6))
        for s in Source:
            self._emit(s, TEARDOWN[(self.tier, s)], end)


# -- transports ------------------------------------------------------------------


class _QueueLink:
    def __init__(self):
        self.to_sub = queue.Queue()
        self.to_pub = queue.Queue()

    def publish(self, data: bytes):
        self.to_sub.put(data)
        if self.to_pub.get(timeout=_RECV_TIMEOUT_S) != _ACK:
            raise SessionError("subscriber did not acknowledge frame")

    def receive(self) -> bytes:
        data = self.to_sub.get(timeout=_RECV_TIMEOUT_S)
        self.to_pub.put(_ACK)
        return data

    def close(self):
        pass


class _LoopbackLink:
    """Datagram link over 127.0.0.1 with a per-frame acknowledgement."""

    def __init__(self):
        try:
            self.sub = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sub.bind(("127.0.0.1", 0))
            self.pub = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.pub.bind(("127.0.0.1", 0))
        except OSError as exc:
            self.close()
            raise SessionError(f"loopback socket unavailable: {exc}") from exc
        self.sub.settimeout(_RECV_TIMEOUT_S)
        self.pub.settimeout(_RECV_TIMEOUT_S)
        self.sub_addr = self.sub.getsockname()
        self.pub_addr = self.pub.getsockname()

    def publish(self, data: bytes):
        try:
            self.pub.sendto(data, self.sub_addr)
            ack, _ = self.pub.recvfrom(16)
        except OSError as exc:
            raise SessionError(f"loopback send failed: {exc}") from exc
        if ack != _ACK:
            raise SessionError("subscriber did not acknowledge frame")

    def receive(self) -> bytes:
        try:
            data, addr = self.sub.recvfrom(65536)
            self.sub.sendto(_ACK, addr)
        except OSError as exc:
            raise SessionError(f"loopback receive failed: {exc}") from exc
        return data

    def close(self):
        for name in ("sub", "pub"):
            sock = getattr(self, name, None)
            if sock is not None:
                sock.close()


def _run_endpoints(link, frames, publisher: _Endpoint, subscriber: _Endpoint):
    errors = []

    def pub_task():
        try:
            publisher.setup()
            for c, frame in enumerate(frames):
                publisher.cycle(c, frame)
                link.publish(frame.encode())
            publisher.teardown()
        except Exception as exc:  # surfaced to the caller below
            errors.append(exc)

    def sub_task():
        try:
            subscriber.setup()
            for c in range(len(frames)):
                frame = GooseFrame.decode(link.receive())
                if frame.timestamp != frames[c].timestamp:
                    raise SessionError(f"frame {c} arrived out of order")
                subscriber.cycle(c, frame)
            subscriber.teardown()
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=pub_task), threading.Thread(target=sub_task)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        exc = errors[0]
        if isinstance(exc, SessionError):
            raise exc
        raise SessionError(f"session failed: {exc}") from exc


def _to_trace(endpoint: _Endpoint, source: Source, device_id, device_class, task_id, run_id):
    kind = source.call_kind
    events = tuple(CallEvent(name, kind, i, t_us / 1000.0)
                   for i, (name, t_us) in enumerate(endpoint.calls[source]))
    return CallTrace(device_id, device_class, source, task_id, run_id, events)


def run_session(config: SimConfig, device_class: DeviceClass, scenario: Optional[ThreatScenario] = None,
                *, device_id: Optional[str] = None, task_id: str = "goose", run_id: int = 0
                ) -> tuple[CallTrace, CallTrace]:
    """Simulate one session; return the (kernel-hook, user-hook) traces of the device under test."""
    tier = device_class.resource_tier
    if scenario is not None and scenario.tier is not tier:
        raise DomainError(f"scenario {scenario.id} targets {scenario.tier.value} devices, "
                          f"class is {tier.value}")
    frames = make_frames(config.n_cycles, config.publish_period_s, task_id)
    dut = _Endpoint(tier, config, scenario)
    peer_tier = Tier.RICH if tier is Tier.LIMITED else Tier.LIMITED
    peer = _Endpoint(peer_tier, config, None)
    publisher, subscriber = (dut, peer) if tier is Tier.LIMITED else (peer, dut)

    if config.transport == "inproc":
        link = _QueueLink()
    else:
        try:
            link = _LoopbackLink()
        except SessionError:
            if config.transport == "loopback":
                raise
            link = _QueueLink()
    try:
        _run_endpoints(link, frames, publisher, subscriber)
    finally:
        link.close()

    if device_id is None:
        device_id = "pub0" if tier is Tier.LIMITED else "sub0"
    return (_to_trace(dut, Source.KERNEL, device_id, device_class, task_id, run_id),
            _to_trace(dut, Source.USER, device_id, device_class, task_id, run_id))
