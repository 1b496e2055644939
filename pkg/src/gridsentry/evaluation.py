"""Batch experiments: labeled runs per scenario, confusion counts, metric curves over beta."""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .detection import DetectorConfig, Escalation, call_vector, ioc_advanced, ioc_simple, staged_decision
from .errors import DomainError, NoProfile
from .learning import GroundTruthProfile, ProfileDatabase, SigmaPolicy, build_gtp
from .sim.session import SCENARIO_IDS, SimConfig, ThreatScenario, attack_boundaries, run_session
from .traces import DeviceClass, Source, Tier, WeightScheme

METRIC_NAMES = ("accuracy", "recall", "precision", "specificity")
CSV_HEADER = "scenario,source,detector,beta,tp,tn,fp,fn,accuracy,recall,precision,specificity"
DETECTORS = ("call-vector", "ioc-simple", "ioc-advanced", "staged:auto", "staged:simple-only",
             "staged:force-advanced")
SOURCES = ("kernel-hook", "user-hook", "both")
DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DomainError(f"{name} must be a non-negative integer, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def add(self, compromised_label: bool, flagged: bool) -> "ConfusionCounts":
        if compromised_label:
            return replace(self, tp=self.tp + 1) if flagged else replace(self, fn=self.fn + 1)
        return replace(self, fp=self.fp + 1) if flagged else replace(self, tn=self.tn + 1)


def _ratio(num, den):
    return None if den == 0 else num / den


def metrics(c: ConfusionCounts) -> tuple:
    """(accuracy, recall, precision, specificity); a metric with a zero denominator is None."""
    if c.total == 0:
        raise DomainError("metrics of an empty confusion matrix are undefined")
    return (_ratio(c.tp + c.tn, c.total), _ratio(c.tp, c.tp + c.fn),
            _ratio(c.tp, c.tp + c.fp), _ratio(c.tn, c.tn + c.fp))


def _fmt_metric(x) -> str:
    return "NA" if x is None else f"{x:.6f}"


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    source: str
    detector: str
    beta: float
    counts: ConfusionCounts

    @property
    def values(self) -> dict:
        return dict(zip(METRIC_NAMES, metrics(self.counts)))

    def __getattr__(self, name):
        if name in METRIC_NAMES:
            return self.values[name]
        raise AttributeError(name)

    def csv(self) -> str:
        c = self.counts
        m = metrics(c)
        return ",".join([self.scenario, self.source, self.detector, f"{self.beta:.4f}",
                         str(c.tp), str(c.tn), str(c.fp), str(c.fn), *(_fmt_metric(x) for x in m)])


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    def row(self, scenario, source, detector, beta) -> MetricsRow:
        for r in self.rows:
            if (r.scenario, r.source, r.detector) == (scenario, source, detector) and abs(r.beta - beta) < 1e-9:
                return r
        raise KeyError((scenario, source, detector, beta))

    def select(self, scenario=None, source=None, detector=None, beta=None) -> list:
        return [r for r in self.rows
                if (scenario is None or r.scenario == scenario) and (source is None or r.source == source)
                and (detector is None or r.detector == detector)
                and (beta is None or abs(r.beta - beta) < 1e-9)]

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + "".join(r.csv() + "\n" for r in self.rows)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def write_curves(self, directory) -> list:
        """One gnuplot data file per metric; each (scenario, source, detector) curve is an index block."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        groups = {}
        for r in self.rows:
            groups.setdefault((r.scenario, r.source, r.detector), []).append(r)
        paths = []
        for metric in METRIC_NAMES:
            blocks = []
            for (sc, src, det), rows in groups.items():
                lines = [f"# {sc} {src} {det}", "# beta " + metric]
                for r in sorted(rows, key=lambda r: r.beta):
                    v = r.values[metric]
                    lines.append(f"{r.beta:.4f} {'NaN' if v is None else f'{v:.6f}'}")
                blocks.append("\n".join(lines))
            p = directory / f"{metric}.dat"
            p.write_text("\n\n\n".join(blocks) + "\n")
            paths.append(p)
        return paths

    def scores_csv(self) -> str:
        head = "scenario,label,seed,source,stage1_anomalous,ioc_simple,ioc_advanced\n"
        return head + "".join(
            f"{s.scenario},{s.label},{s.seed},{src.value},{int(s.anomalous[src])},"
            f"{s.simple[src]:.6f},{s.advanced[src]:.6f}\n"
            for s in self.scores for src in Source)


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple = SCENARIO_IDS
    runs: int = 30
    seed: int = 0
    lam: float = 6.0
    sim: SimConfig = SimConfig(transport="inproc")
    device_type: str = "ied"
    task_context: str = "goose"
    detectors: tuple = DETECTORS
    sources: tuple = SOURCES
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "sources", tuple(self.sources))
        for sc in self.scenarios:
            ThreatScenario(sc, lam=self.lam)
        for d in self.detectors:
            _parse_detector(d)
        for s in self.sources:
            _source_set(s)
        if self.runs < 1:
            raise DomainError("runs must be at least 1")

    def device_class(self, tier: Tier) -> DeviceClass:
        return DeviceClass(tier, self.device_type, self.task_context)

    def scenario(self, sc: str) -> ThreatScenario:
        return ThreatScenario(sc, lam=self.lam)


def derive_seed(base: int, *tags) -> int:
    """Stable 63-bit seed for one run, independent of run order and process."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for t in tags:
        h.update(b"\x1f" + str(t).encode())
    return int.from_bytes(h.digest(), "big") >> 1


def compromised_seed(plan: ExperimentPlan, scenario: str, i: int) -> int:
    """First derived seed whose attack schedule is non-empty: a run without attacks carries no compromise."""
    sc = plan.scenario(scenario)
    attempt = 0
    while True:
        seed = derive_seed(plan.seed, "compromised", scenario, i, attempt)
        if attack_boundaries(sc, replace(plan.sim, seed=seed)):
            return seed
        attempt += 1


def genuine_seed(plan: ExperimentPlan, scenario: str, i: int) -> int:
    return derive_seed(plan.seed, "genuine", scenario, i)


def training_seed(base: int, tier: Tier, i: int) -> int:
    return derive_seed(base, "train", Tier(tier).value, i)


def learn_profile(device_class: DeviceClass, runs: int = 30, seed: int = 0,
                  sim: SimConfig = SimConfig(transport="inproc"), scheme: Optional[WeightScheme] = None,
                  sigma_policy=None):
    """Simulate genuine training runs for ``device_class`` and build its profile (or a rejection)."""
    kernel, user = [], []
    for i in range(runs):
        k, u = run_session(replace(sim, seed=training_seed(seed, device_class.resource_tier, i)), device_class,
                           run_id=i)
        kernel.append(k)
        user.append(u)
    return build_gtp(kernel, user, device_class, scheme or WeightScheme.uniform_random(seed), sigma_policy)


def learn_profiles(plan: ExperimentPlan, db: ProfileDatabase, runs: int = 30,
                   scheme: Optional[WeightScheme] = None, sigma_policy=None) -> dict:
    """Learn and store a profile for every tier the plan's scenarios touch."""
    out = {}
    for tier in sorted({plan.scenario(sc).tier for sc in plan.scenarios}, key=lambda t: t.value):
        cls = plan.device_class(tier)
        result = learn_profile(cls, runs, plan.seed, plan.sim, scheme, sigma_policy)
        if result.accepted:
            db.replace(result)
        out[cls] = result
    return out


@dataclass(frozen=True)
class RunScores:
    scenario: str
    label: str  # genuine | compromised
    seed: int
    vectors: dict
    anomalous: dict
    simple: dict
    advanced: dict


_PROFILES: dict = {}


def _init_worker(profiles):
    _PROFILES.clear()
    _PROFILES.update(profiles)


def _score_run(args) -> RunScores:
    scenario, label, seed, sim, lam, cls, cfg = args
    gtp = _PROFILES[cls]
    sc = ThreatScenario(scenario, lam=lam) if label == "compromised" else None
    traces = dict(zip(Source, run_session(replace(sim, seed=seed), cls, sc)))
    vectors = {s: call_vector(traces[s], gtp, s) for s in Source}
    return RunScores(
        scenario, label, seed, vectors,
        {s: vectors[s].anomalous(cfg.band) for s in Source},
        {s: ioc_simple(traces[s], gtp) for s in Source},
        {s: ioc_advanced(traces[s], gtp, cfg.h) for s in Source})


def _parse_detector(name: str):
    if name in ("call-vector", "ioc-simple", "ioc-advanced"):
        return name, None
    if name == "staged":
        return "staged", None
    if name.startswith("staged:"):
        return "staged", Escalation(name.split(":", 1)[1])
    raise DomainError(f"unknown detector {name!r}")


def _source_set(name: str) -> tuple:
    if name == "both":
        return (Source.KERNEL, Source.USER)
    return (Source(name),)


def flagged(scores: RunScores, detector: str, source: str, beta: float, tier: Tier, cfg: DetectorConfig) -> bool:
    kind, esc = _parse_detector(detector)
    srcs = _source_set(source)
    if kind == "call-vector":
        return any(scores.anomalous[s] for s in srcs)
    if kind == "ioc-simple":
        return min(scores.simple[s] for s in srcs) < beta
    if kind == "ioc-advanced":
        return min(scores.advanced[s] for s in srcs) < beta
    c = cfg if esc is None else replace(cfg, escalation=esc)
    v = staged_decision(srcs, scores.vectors, scores.simple.__getitem__, scores.advanced.__getitem__,
                        tier, c, beta)
    return v.compromised


def collect_scores(plan: ExperimentPlan, db: ProfileDatabase, cfg: DetectorConfig = DetectorConfig()) -> list:
    profiles = {}
    jobs = []
    for sc in plan.scenarios:
        tier = plan.scenario(sc).tier
        cls = plan.device_class(tier)
        if cls not in profiles:
            gtp = db.lookup(cls)
            if gtp is None:
                raise NoProfile(cls)
            profiles[cls] = gtp
        for i in range(plan.runs):
            jobs.append((sc, "genuine", genuine_seed(plan, sc, i), plan.sim, plan.lam, cls, cfg))
            jobs.append((sc, "compromised", compromised_seed(plan, sc, i), plan.sim, plan.lam, cls, cfg))
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers, initializer=_init_worker, initargs=(profiles,)) as pool:
            return list(pool.map(_score_run, jobs, chunksize=4))
    _init_worker(profiles)
    return [_score_run(j) for j in jobs]


def report_from_scores(plan: ExperimentPlan, scores: Sequence[RunScores], betas: Iterable[float],
                       cfg: DetectorConfig = DetectorConfig()) -> MetricsReport:
    betas = [float(b) for b in betas]
    for b in betas:
        if not 0 < b < 1:
            raise DomainError(f"beta must lie in (0, 1), got {b}")
    report = MetricsReport(scores=list(scores))
    for sc in plan.scenarios:
        tier = plan.scenario(sc).tier
        runs = [s for s in scores if s.scenario == sc]
        for source in plan.sources:
            for det in plan.detectors:
                for beta in betas:
                    counts = ConfusionCounts()
                    for s in runs:
                        counts = counts.add(s.label == "compromised", flagged(s, det, source, beta, tier, cfg))
                    report.rows.append(MetricsRow(sc, source, det, beta, counts))
    return report


def run_experiment(plan: ExperimentPlan, db: ProfileDatabase, cfg: DetectorConfig = DetectorConfig()) -> MetricsReport:
    """Labeled runs for every planned scenario, 1:1 genuine controls, scored at ``cfg.beta``."""
    return report_from_scores(plan, collect_scores(plan, db, cfg), [cfg.beta], cfg)


def threshold_sweep(plan: ExperimentPlan, db: ProfileDatabase, betas: Sequence[float] = DEFAULT_BETAS,
                    cfg: DetectorConfig = DetectorConfig()) -> MetricsReport:
    return report_from_scores(plan, collect_scores(plan, db, cfg), betas, cfg)
