"""Call traces, histograms, device classes and call weighting.

A trace is the ordered list of calls one device emitted while running one
task once. Two hooks observe a device: the kernel hook sees system calls,
the user hook sees library function calls.

Trace file layout (text, one event per line)::

    #trace v1 device=<id> class=<tier>/<type>/<ctx> source=<kernel-hook|user-hook> task=<id> run=<n>
    0,system-call,brk,0.0
    1,system-call,mmap2,0.05
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError, UnknownCall

DEFAULT_DELTA_MIN = 1.0
DEFAULT_DELTA_MAX = 100.0

_TOKEN = re.compile(r"^[^\s,/=]+$")


class Source(str, Enum):
    KERNEL = "kernel-hook"
    USER = "user-hook"

    @property
    def call_kind(self) -> "CallKind":
        return CallKind.SYSTEM if self is Source.KERNEL else CallKind.FUNCTION


class CallKind(str, Enum):
    SYSTEM = "system-call"
    FUNCTION = "function-call"


class Tier(str, Enum):
    LIMITED = "limited"
    RICH = "rich"


def _check_token(value, what):
    if not isinstance(value, str) or not _TOKEN.match(value):
        raise DomainError(f"{what} must be a non-empty token without whitespace, ',', '/' or '=': {value!r}")


@dataclass(frozen=True)
class DeviceClass:
    resource_tier: Tier
    device_type: str
    task_context: str

    def __post_init__(self):
        object.__setattr__(self, "resource_tier", Tier(self.resource_tier))
        _check_token(self.device_type, "device_type")
        _check_token(self.task_context, "task_context")

    def __str__(self):
        return f"{self.resource_tier.value}/{self.device_type}/{self.task_context}"

    @classmethod
    def parse(cls, text: str) -> "DeviceClass":
        parts = text.split("/")
        if len(parts) != 3:
            raise DomainError(f"device class must look like tier/type/context, got {text!r}")
        try:
            return cls(Tier(parts[0]), parts[1], parts[2])
        except ValueError as exc:
            raise DomainError(str(exc)) from None

    @property
    def key(self) -> str:
        """File-system safe identifier."""
        return f"{self.resource_tier.value}__{self.device_type}__{self.task_context}"


@dataclass(frozen=True)
class CallEvent:
    name: str
    kind: CallKind
    index: int
    time_offset: float  # ms since task start

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name or re.search(r"[\s,]", self.name):
            raise DomainError(f"bad call name {self.name!r}")
        object.__setattr__(self, "kind", CallKind(self.kind))
        if self.index < 0:
            raise DomainError("event index must be non-negative")
        if not self.time_offset >= 0:
            raise DomainError("time_offset must be non-negative")


@dataclass(frozen=True)
class CallTrace:
    device_id: str
    device_class: DeviceClass
    source: Source
    task_id: str
    run_id: int
    events: tuple[CallEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "events", tuple(self.events))
        _check_token(self.device_id, "device_id")
        _check_token(self.task_id, "task_id")
        if self.run_id < 0:
            raise DomainError("run_id must be non-negative")
        if not self.events:
            raise DomainError("a completed task run has at least one event")
        kind = self.source.call_kind
        last = 0.0
        for pos, ev in enumerate(self.events):
            if ev.index != pos:
                raise DomainError(f"event at position {pos} carries index {ev.index}")
            if ev.kind is not kind:
                raise DomainError(f"{ev.kind.value} event in a {self.source.value} trace")
            if ev.time_offset < last:
                raise DomainError(f"time_offset decreases at index {pos}")
            last = ev.time_offset

    @classmethod
    def from_names(cls, names: Sequence[str], *, device_id="dev0", device_class=None,
                   source=Source.KERNEL, task_id="task", run_id=0, times=None) -> "CallTrace":
        """Build a trace from bare call names; offsets default to 1 ms steps."""
        source = Source(source)
        if device_class is None:
            device_class = DeviceClass(Tier.RICH, "generic", "default")
        if times is None:
            times = [float(i) for i in range(len(names))]
        events = tuple(CallEvent(n, source.call_kind, i, float(t))
                       for i, (n, t) in enumerate(zip(names, times)))
        return cls(device_id, device_class, source, task_id, run_id, events)

    @property
    def names(self) -> list[str]:
        return [ev.name for ev in self.events]

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class CallHistogram:
    counts: Mapping[str, int]

    def __post_init__(self):
        counts = dict(self.counts)
        for name, c in counts.items():
            if c < 0:
                raise DomainError(f"negative count for {name!r}")
        object.__setattr__(self, "counts", MappingProxyType(dict(sorted(counts.items()))))

    def __getitem__(self, name):
        return self.counts.get(name, 0)

    def __reduce__(self):
        return (CallHistogram, (dict(self.counts),))

    def __eq__(self, other):
        return isinstance(other, CallHistogram) and dict(self.counts) == dict(other.counts)

    def __hash__(self):
        return hash(tuple(self.counts.items()))

    @property
    def total(self):
        return sum(self.counts.values())

    def to_csv(self) -> str:
        return "".join(f"{name},{c}\n" for name, c in self.counts.items())


def histogram(trace: CallTrace) -> CallHistogram:
    return CallHistogram(Counter(ev.name for ev in trace.events))


def write_histogram(hist: CallHistogram, path) -> None:
    Path(path).write_text(hist.to_csv())


def _hash_unit(seed: int, name: str) -> float:
    digest = hashlib.blake2b(f"{seed}\x00{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


@dataclass(frozen=True)
class WeightScheme:
    """Maps every call name to a weight in [delta_min, delta_max].

    In ``uniform-random`` mode a weight is a pure function of (seed, name),
    so unseen names get a stable weight and tables never depend on the order
    in which traces were seen. ``adaptive`` mode only knows its table.
    """

    mode: str = "uniform-random"
    delta_min: float = DEFAULT_DELTA_MIN
    delta_max: float = DEFAULT_DELTA_MAX
    table: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform-random", "adaptive"):
            raise DomainError(f"unknown weight mode {self.mode!r}")
        if not self.delta_min < self.delta_max:
            raise DomainError("delta_min must be below delta_max")
        table = {k: float(v) for k, v in dict(self.table).items()}
        for name, w in table.items():
            if not self.delta_min <= w <= self.delta_max:
                raise DomainError(f"weight {w} for {name!r} outside [{self.delta_min}, {self.delta_max}]")
        object.__setattr__(self, "table", MappingProxyType(dict(sorted(table.items()))))

    @classmethod
    def uniform_random(cls, seed: int, names: Iterable[str] = (), delta_min=DEFAULT_DELTA_MIN,
                       delta_max=DEFAULT_DELTA_MAX) -> "WeightScheme":
        base = cls("uniform-random", delta_min, delta_max, {}, seed)
        return base.extended(names)

    @classmethod
    def adaptive(cls, table: Mapping[str, float], delta_min=DEFAULT_DELTA_MIN,
                 delta_max=DEFAULT_DELTA_MAX) -> "WeightScheme":
        return cls("adaptive", delta_min, delta_max, table, 0)

    def weight(self, name: str) -> float:
        w = self.table.get(name)
        if w is not None:
            return w
        if self.mode == "adaptive":
            raise UnknownCall(name)
        return self.delta_min + _hash_unit(self.seed, name) * (self.delta_max - self.delta_min)

    def extended(self, names: Iterable[str]) -> "WeightScheme":
        """Scheme whose table also covers ``names`` (uniform-random mode only)."""
        new = {n: self.weight(n) for n in set(names) if n not in self.table}
        if not new:
            return self
        table = dict(self.table)
        table.update(new)
        return WeightScheme(self.mode, self.delta_min, self.delta_max, table, self.seed)

    def __eq__(self, other):
        if not isinstance(other, WeightScheme):
            return NotImplemented
        return (self.mode, self.delta_min, self.delta_max, dict(self.table), self.seed) == \
            (other.mode, other.delta_min, other.delta_max, dict(other.table), other.seed)

    def __hash__(self):
        return hash((self.mode, self.delta_min, self.delta_max, tuple(self.table.items()), self.seed))

    def __reduce__(self):
        return (WeightScheme, (self.mode, self.delta_min, self.delta_max, dict(self.table), self.seed))


class WeightedSeries:
    """Read-only float series, one value per trace event."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1:
            raise DomainError("a weighted series is one-dimensional")
        arr.setflags(write=False)
        self.values = arr

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return isinstance(other, WeightedSeries) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"WeightedSeries({self.values.tolist()!r})"


def weigh(trace: CallTrace, scheme: WeightScheme) -> WeightedSeries:
    cache: dict[str, float] = {}
    out = np.empty(len(trace.events))
    for i, ev in enumerate(trace.events):
        w = cache.get(ev.name)
        if w is None:
            w = cache[ev.name] = scheme.weight(ev.name)
        out[i] = w
    return WeightedSeries(out)


# -- file format ---------------------------------------------------------------

_HEADER_KEYS = ("device", "class", "source", "task", "run")


def dumps_trace(trace: CallTrace) -> str:
    lines = [f"#trace v1 device={trace.device_id} class={trace.device_class} "
             f"source={trace.source.value} task={trace.task_id} run={trace.run_id}"]
    lines.extend(f"{ev.index},{ev.kind.value},{ev.name},{ev.time_offset!r}" for ev in trace.events)
    return "\n".join(lines) + "\n"


def loads_trace(text: str, path=None) -> CallTrace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#trace v1"):
        raise ParseError("missing '#trace v1' header", 1, path)
    fields = {}
    for item in lines[0].split()[2:]:
        key, sep, value = item.partition("=")
        if not sep or key not in _HEADER_KEYS or key in fields:
            raise ParseError(f"bad header field {item!r}", 1, path)
        fields[key] = value
    if set(fields) != set(_HEADER_KEYS):
        raise ParseError(f"header lacks {sorted(set(_HEADER_KEYS) - set(fields))}", 1, path)
    try:
        dev_class = DeviceClass.parse(fields["class"])
        source = Source(fields["source"])
        run_id = int(fields["run"])
    except (ValueError, DomainError) as exc:
        raise ParseError(str(exc), 1, path) from None

    events = []
    last_t = 0.0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 comma-separated fields, got {len(parts)}", lineno, path)
        try:
            idx = int(parts[0])
            ev = CallEvent(parts[2], CallKind(parts[1]), idx, float(parts[3]))
        except (ValueError, DomainError) as exc:
            raise ParseError(str(exc), lineno, path) from None
        if idx != len(events):
            raise ParseError(f"index {idx} out of sequence", lineno, path)
        if ev.kind is not source.call_kind:
            raise ParseError(f"{ev.kind.value} event in {source.value} trace", lineno, path)
        if ev.time_offset < last_t:
            raise ParseError("time_offset decreases", lineno, path)
        last_t = ev.time_offset
        events.append(ev)
    if not events:
        raise ParseError("trace has no events", len(lines), path)
    try:
        return CallTrace(fields["device"], dev_class, source, fields["task"], run_id, tuple(events))
    except DomainError as exc:
        raise ParseError(str(exc), 1, path) from None


def write_trace(trace: CallTrace, path) -> None:
    Path(path).write_text(dumps_trace(trace))


def read_trace(path) -> CallTrace:
    path = Path(path)
    return loads_trace(path.read_text(), path)
