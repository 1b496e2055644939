"""Staged detection: call-count vector, then positional correlation, then windowed correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Callable, Mapping, Optional, Sequence

from .errors import DomainError, NoProfile, ProfileIncomplete
from .learning import GroundTruthProfile, ProfileDatabase
from .stats import pearson, window_sums
from .traces import CallHistogram, CallTrace, Source, Tier, histogram, weigh

NOT_IN_GTP = math.inf
ZERO_ONLY_IN_GTP = 0.0


class Escalation(str, Enum):
    AUTO = "auto"
    FORCE_ADVANCED = "force-advanced"
    SIMPLE_ONLY = "simple-only"


@dataclass(frozen=True)
class DetectorConfig:
    beta: float = 0.6
    band: tuple = (2.0 / 3.0, 1.5)
    h: int = 4
    escalation: Escalation = Escalation.AUTO
    beta_by_class: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "escalation", Escalation(self.escalation))
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        object.__setattr__(self, "beta_by_class", MappingProxyType(dict(self.beta_by_class)))
        for b in (self.beta, *self.beta_by_class.values()):
            if not 0 < b < 1:
                raise DomainError(f"beta must lie in (0, 1), got {b}")
        low, high = self.band
        if not low < 1 < high:
            raise DomainError(f"band must straddle 1, got {self.band}")
        if int(self.h) != self.h or self.h < 1:
            raise DomainError(f"h must be a positive integer, got {self.h}")

    def __reduce__(self):
        return (DetectorConfig, (self.beta, self.band, self.h, self.escalation, dict(self.beta_by_class)))

    def beta_for(self, device_class) -> float:
        return self.beta_by_class.get(str(device_class), self.beta)

    def with_beta(self, beta: float) -> "DetectorConfig":
        return DetectorConfig(beta, self.band, self.h, self.escalation, dict(self.beta_by_class))


@dataclass(frozen=True)
class CallVector:
    """Per-call count ratio of an unknown trace against the profile's mean counts."""

    ratios: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "ratios", MappingProxyType(dict(sorted(self.ratios.items()))))

    def __getitem__(self, name):
        return self.ratios[name]

    def __reduce__(self):
        return (CallVector, (dict(self.ratios),))

    def not_in_gtp(self) -> list[str]:
        return [n for n, r in self.ratios.items() if r == NOT_IN_GTP]

    def missing(self) -> list[str]:
        return [n for n, r in self.ratios.items() if r == ZERO_ONLY_IN_GTP]

    def outside(self, band) -> list[str]:
        """Finite ratios outside ``band``; a missing call (ratio 0) counts as outside."""
        low, high = band
        return [n for n, r in self.ratios.items() if math.isfinite(r) and not low <= r <= high]

    def anomalous(self, band) -> bool:
        return bool(self.not_in_gtp() or self.outside(band))

    def max_deviation(self) -> float:
        """The ratio farthest from 1 on a log scale; sentinels rank above any finite ratio."""
        if self.not_in_gtp():
            return NOT_IN_GTP
        if self.missing():
            return ZERO_ONLY_IN_GTP
        if not self.ratios:
            return 1.0
        return max(self.ratios.values(), key=lambda r: (abs(math.log(r)), r))


def call_vector(unknown, gtp: GroundTruthProfile, source: Source) -> CallVector:
    """Ratios unknown[n] / mean[n] over every call seen in either histogram."""
    hist = unknown if isinstance(unknown, CallHistogram) else histogram(unknown)
    if hist.total == 0:
        raise DomainError("unknown histogram is empty")
    mean = gtp.mean_histogram(source)
    if mean is None:
        raise ProfileIncomplete(f"profile for {gtp.device_class} has no {Source(source).value} histogram")
    ratios = {}
    for name in set(hist.counts) | set(mean.counts):
        m = mean[name]
        if m > 0:
            ratios[name] = hist[name] / m
        else:
            ratios[name] = NOT_IN_GTP
    return CallVector(ratios)


def _reference(gtp: GroundTruthProfile, source: Source) -> CallTrace:
    runs = gtp.scl(source)
    if not runs:
        raise ProfileIncomplete(f"profile for {gtp.device_class} stores no {Source(source).value} runs")
    return gtp.representative(source)


def ioc_simple(unknown: CallTrace, gtp: GroundTruthProfile) -> float:
    ref = _reference(gtp, unknown.source)
    scheme = gtp.weight_scheme
    return pearson(weigh(ref, scheme), weigh(unknown, scheme))


def ioc_advanced(unknown: CallTrace, gtp: GroundTruthProfile, h: int = 4) -> float:
    if h < 1:
        raise DomainError("window size h must be at least 1")
    ref = _reference(gtp, unknown.source)
    scheme = gtp.weight_scheme
    return pearson(window_sums(weigh(ref, scheme), h), window_sums(weigh(unknown, scheme), h))


@dataclass(frozen=True)
class Stage1Summary:
    vectors: Mapping[Source, CallVector]
    max_ratio: float
    not_in_gtp: tuple
    outside: tuple
    anomalous: bool


@dataclass(frozen=True)
class DetectionVerdict:
    stage1: Optional[Stage1Summary]
    stage2: Optional[float]
    stage3: Optional[float]
    beta: float
    compromised: bool
    deciding_stage: int
    device_id: str = ""
    device_class: str = ""
    sources: tuple = ()
    failing: tuple = ()

    def __post_init__(self):
        if self.stage3 is not None and self.stage2 is None:
            raise DomainError("stage 3 present without stage 2")
        if self.stage2 is not None and self.stage1 is None:
            raise DomainError("stage 2 present without stage 1")
        if self.deciding_stage not in (1, 2, 3):
            raise DomainError(f"deciding stage must be 1, 2 or 3, got {self.deciding_stage}")

    @property
    def verdict(self) -> str:
        return "compromised" if self.compromised else "genuine"

    def report_line(self) -> str:
        return ",".join([
            self.device_id, self.device_class, str(self.deciding_stage),
            _fmt(self.stage1.max_ratio if self.stage1 else None),
            _fmt(self.stage2), _fmt(self.stage3), _fmt(self.beta), self.verdict,
        ])


REPORT_HEADER = "device_id,class,deciding_stage,stage1_max_ratio,stage2_ioc,stage3_ioc,beta,verdict"


def _fmt(x) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def _summarize(vectors: Mapping[Source, CallVector], band) -> Stage1Summary:
    nig, out = [], []
    worst = 1.0
    for src, v in vectors.items():
        nig += [f"{src.value}:{n}" for n in v.not_in_gtp()]
        out += [f"{src.value}:{n}" for n in v.outside(band)]
        d = v.max_deviation()
        if _severity(d) > _severity(worst):
            worst = d
    return Stage1Summary(dict(vectors), worst, tuple(nig), tuple(out), bool(nig or out))


def _severity(r):
    if r == NOT_IN_GTP:
        return (2, 0.0)
    if r == ZERO_ONLY_IN_GTP:
        return (1, 0.0)
    return (0, abs(math.log(r)))


def staged_decision(sources: Sequence[Source], vectors: Mapping[Source, CallVector],
                    simple: Callable[[Source], float], advanced: Callable[[Source], float],
                    tier: Tier, cfg: DetectorConfig, beta: Optional[float] = None,
                    device_id="", device_class="") -> DetectionVerdict:
    """Apply the staged rule over ``sources``; IOC callables are only invoked when a stage is reached."""
    beta = cfg.beta if beta is None else beta
    sources = tuple(sources)
    s1 = _summarize({s: vectors[s] for s in sources}, cfg.band)
    common = dict(beta=beta, device_id=device_id, device_class=str(device_class), sources=sources)
    if s1.anomalous:
        return DetectionVerdict(s1, None, None, compromised=True, deciding_stage=1, **common)
    iocs = {s: simple(s) for s in sources}
    s2 = min(iocs.values())
    if s2 >= beta:
        return DetectionVerdict(s1, s2, None, compromised=False, deciding_stage=2, **common)
    failing = tuple(s for s in sources if iocs[s] < beta)
    if cfg.escalation is Escalation.FORCE_ADVANCED:
        escalate = True
    elif cfg.escalation is Escalation.AUTO:
        escalate = Tier(tier) is Tier.LIMITED and failing == (Source.KERNEL,)
    else:
        escalate = False
    if not escalate:
        return DetectionVerdict(s1, s2, None, compromised=True, deciding_stage=2, failing=failing, **common)
    s3 = min(advanced(s) for s in failing)
    return DetectionVerdict(s1, s2, s3, compromised=s3 < beta, deciding_stage=3, failing=failing, **common)


def _memo(fn):
    cache = {}

    def get(src):
        if src not in cache:
            cache[src] = fn(src)
        return cache[src]
    return get


def detect_with_profile(traces: Sequence[CallTrace], gtp: GroundTruthProfile,
                        cfg: DetectorConfig = DetectorConfig()) -> DetectionVerdict:
    """Staged verdict for one device from whichever of its traces are given."""
    by_source = {}
    for t in traces:
        if t.source in by_source:
            raise DomainError(f"two {t.source.value} traces for one device")
        by_source[t.source] = t
    if not by_source:
        raise DomainError("no traces given")
    first = next(iter(by_source.values()))
    for t in by_source.values():
        if t.device_class != gtp.device_class:
            raise NoProfile(t.device_class)
        if t.device_id != first.device_id:
            raise DomainError("traces belong to different devices")
    sources = tuple(s for s in Source if s in by_source)
    vectors = {s: call_vector(by_source[s], gtp, s) for s in sources}
    return staged_decision(
        sources, vectors,
        _memo(lambda s: ioc_simple(by_source[s], gtp)),
        _memo(lambda s: ioc_advanced(by_source[s], gtp, cfg.h)),
        gtp.device_class.resource_tier, cfg, cfg.beta_for(gtp.device_class),
        device_id=first.device_id, device_class=gtp.device_class)


def detect(unknown_traces: Sequence[CallTrace], db: ProfileDatabase,
           cfg: DetectorConfig = DetectorConfig()) -> DetectionVerdict:
    """Look up the device's profile and run the staged detector on its kernel-hook and user-hook traces."""
    traces = list(unknown_traces)
    if not traces:
        raise DomainError("no traces given")
    cls = traces[0].device_class
    if any(t.device_class != cls for t in traces):
        raise DomainError("traces of one device must share a class")
    gtp = db.lookup(cls)
    if gtp is None:
        raise NoProfile(cls)
    return detect_with_profile(traces, gtp, cfg)
