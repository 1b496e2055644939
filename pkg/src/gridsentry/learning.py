"""Ground-truth profiles: learning them from genuine runs and keeping them on disk."""

from __future__ import annotations

import fcntl
import json
import os
import shutil
import tempfile
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .errors import ClassMismatch, DomainError, LoadError, ParseError
from .stats import compute_ili, pairwise_matrix, pearson
from .traces import CallHistogram, CallTrace, DeviceClass, Source, Tier, WeightScheme, histogram, read_trace, \
    weigh, write_trace

__all__ = [
    "pearson", "compute_ili", "SigmaPolicy", "GroundTruthProfile", "Rejection", "build_gtp",
    "mean_histogram", "representative_index", "ProfileDatabase", "store", "lookup", "replace",
]

SCHEMA = "gtp v1"


@dataclass(frozen=True)
class SigmaPolicy:
    """Acceptance threshold schedule: start per tier, lower by ``step`` after each rejection."""

    rich: float = 0.8
    limited: float = 0.6
    step: float = 0.05
    floor: float = 0.1

    def __post_init__(self):
        for s in (self.rich, self.limited, self.floor):
            if not 0 < s <= 1:
                raise DomainError(f"sigma values must lie in (0, 1], got {s}")
        if self.floor > min(self.rich, self.limited):
            raise DomainError("sigma floor above an initial sigma")
        if not self.step > 0:
            raise DomainError("sigma step must be positive")

    @classmethod
    def fixed(cls, sigma: float) -> "SigmaPolicy":
        return cls(sigma, sigma, 0.05, sigma)

    def initial(self, tier: Tier) -> float:
        return self.rich if Tier(tier) is Tier.RICH else self.limited

    def candidates(self, tier: Tier) -> list[float]:
        start = self.initial(tier)
        out = []
        k = 0
        while True:
            s = round(start - k * self.step, 10)
            if s < self.floor - 1e-12:
                break
            out.append(s)
            k += 1
        return out


def mean_histogram(traces: Sequence[CallTrace]) -> CallHistogram:
    hists = [histogram(t) for t in traces]
    names = sorted(set().union(*(h.counts for h in hists)))
    n = len(hists)
    return CallHistogram({name: sum(h[name] for h in hists) / n for name in names})


def representative_index(series) -> int:
    """Index of the run whose mean correlation to its peers is the median (lower median on ties)."""
    n = len(series)
    if n < 2:
        return 0
    m = pairwise_matrix(series)
    peer = (m.sum(axis=1) - 1.0) / (n - 1)
    order = np.argsort(peer, kind="stable")
    return int(order[(n - 1) // 2])


@dataclass(frozen=True, eq=True)
class GroundTruthProfile:
    device_class: DeviceClass
    scl_kernel: tuple
    scl_user: tuple
    mean_kernel: CallHistogram
    mean_user: CallHistogram
    sigma: float
    weight_scheme: WeightScheme
    ili_kernel: float
    ili_user: float
    rep_kernel: int = 0
    rep_user: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scl_kernel", tuple(self.scl_kernel))
        object.__setattr__(self, "scl_user", tuple(self.scl_user))
        if not 0 < self.sigma <= 1:
            raise DomainError(f"sigma must lie in (0, 1], got {self.sigma}")
        for src, runs, rep in ((Source.KERNEL, self.scl_kernel, self.rep_kernel),
                               (Source.USER, self.scl_user, self.rep_user)):
            if len(runs) < 2:
                raise DomainError(f"a profile needs at least 2 {src.value} runs")
            if not 0 <= rep < len(runs):
                raise DomainError("representative index out of range")
            for t in runs:
                if t.source is not src:
                    raise DomainError(f"{t.source.value} trace stored as {src.value}")
                if t.device_class != self.device_class:
                    raise ClassMismatch(f"run of class {t.device_class} in profile for {self.device_class}")
        if not (self.ili_kernel > self.sigma and self.ili_user > self.sigma):
            raise DomainError(f"ILIs ({self.ili_kernel:.4f}, {self.ili_user:.4f}) do not exceed sigma {self.sigma}")

    def scl(self, source: Source) -> tuple:
        return self.scl_kernel if Source(source) is Source.KERNEL else self.scl_user

    def mean_histogram(self, source: Source) -> CallHistogram:
        return self.mean_kernel if Source(source) is Source.KERNEL else self.mean_user

    def representative(self, source: Source) -> CallTrace:
        if Source(source) is Source.KERNEL:
            return self.scl_kernel[self.rep_kernel]
        return self.scl_user[self.rep_user]

    def ili(self, source: Source) -> float:
        return self.ili_kernel if Source(source) is Source.KERNEL else self.ili_user

    @property
    def accepted(self) -> bool:
        return True


@dataclass(frozen=True)
class Rejection:
    device_class: DeviceClass
    ili_kernel: float
    ili_user: float
    sigma: float  # last threshold tried
    tried: tuple = field(default=())

    @property
    def accepted(self) -> bool:
        return False

    def __str__(self):
        return (f"rejected {self.device_class}: ILI kernel-hook={self.ili_kernel:.4f} "
                f"user-hook={self.ili_user:.4f} below sigma floor {self.sigma}")


def _check_runs(runs, source, device_class):
    if len(runs) < 2:
        raise DomainError(f"need at least 2 {source.value} runs, got {len(runs)}")
    for t in runs:
        if t.device_class != device_class:
            raise ClassMismatch(f"run {t.run_id} of {t.device_id} is {t.device_class}, expected {device_class}")
        if t.source is not source:
            raise DomainError(f"run {t.run_id} of {t.device_id} is a {t.source.value} trace, "
                              f"expected {source.value}")


def build_gtp(kernel_runs: Sequence[CallTrace], user_runs: Sequence[CallTrace],
              device_class: Optional[DeviceClass] = None, scheme: Optional[WeightScheme] = None,
              sigma_policy: Union[SigmaPolicy, float, None] = None) -> Union[GroundTruthProfile, Rejection]:
    """Learn a profile from genuine runs, or report why the runs are too dissimilar.

    ``sigma_policy`` may be a plain number for a single fixed threshold.
    """
    kernel_runs = list(kernel_runs)
    user_runs = list(user_runs)
    if device_class is None:
        if not kernel_runs:
            raise DomainError("no runs given")
        device_class = kernel_runs[0].device_class
    _check_runs(kernel_runs, Source.KERNEL, device_class)
    _check_runs(user_runs, Source.USER, device_class)
    if scheme is None:
        scheme = WeightScheme.uniform_random(0)
    if sigma_policy is None:
        sigma_policy = SigmaPolicy()
    elif not isinstance(sigma_policy, SigmaPolicy):
        sigma_policy = SigmaPolicy.fixed(float(sigma_policy))

    if scheme.mode == "uniform-random":
        names = {e.name for t in kernel_runs + user_runs for e in t.events}
        scheme = scheme.extended(names)
    wk = [weigh(t, scheme) for t in kernel_runs]
    wu = [weigh(t, scheme) for t in user_runs]
    ili_k = compute_ili(wk)
    ili_u = compute_ili(wu)

    tried = []
    for sigma in sigma_policy.candidates(device_class.resource_tier):
        tried.append(sigma)
        if ili_k > sigma and ili_u > sigma:
            return GroundTruthProfile(
                device_class, tuple(kernel_runs), tuple(user_runs),
                mean_histogram(kernel_runs), mean_histogram(user_runs),
                sigma, scheme, ili_k, ili_u, representative_index(wk), representative_index(wu))
    return Rejection(device_class, ili_k, ili_u, tried[-1] if tried else sigma_policy.floor, tuple(tried))


# -- on-disk database -------------------------------------------------------------


def _scheme_to_json(s: WeightScheme) -> dict:
    return {"mode": s.mode, "delta_min": s.delta_min, "delta_max": s.delta_max, "seed": s.seed,
            "table": dict(s.table)}


def _scheme_from_json(d: dict) -> WeightScheme:
    return WeightScheme(d["mode"], float(d["delta_min"]), float(d["delta_max"]),
                        {k: float(v) for k, v in d["table"].items()}, int(d["seed"]))


class ProfileDatabase:
    """Directory of ``<tier>__<type>__<ctx>.gtp`` documents plus their stored traces.

    Writers for one class are serialized through a lock file; a profile
    document is swapped in with a single rename, so readers see either the
    old or the new profile.
    """

    _local_locks: dict = {}
    _local_guard = threading.Lock()

    def __init__(self, root):
        self.root = Path(root)

    def __repr__(self):
        return f"ProfileDatabase({str(self.root)!r})"

    def path_for(self, device_class: DeviceClass) -> Path:
        return self.root / f"{device_class.key}.gtp"

    @contextmanager
    def _locked(self, device_class: DeviceClass) -> Iterator[None]:
        self.root.mkdir(parents=True, exist_ok=True)
        lock_path = self.root / f".{device_class.key}.lock"
        with self._local_guard:
            tlock = self._local_locks.setdefault(str(lock_path.resolve()), threading.Lock())
        with tlock, open(lock_path, "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def _read_doc(self, path: Path) -> dict:
        try:
            doc = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise LoadError(path, f"unreadable profile: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
            raise LoadError(path, f"not a {SCHEMA} document")
        return doc

    def lookup(self, device_class: DeviceClass) -> Optional[GroundTruthProfile]:
        path = self.path_for(device_class)
        if not path.exists():
            return None
        doc = self._read_doc(path)
        try:
            if DeviceClass.parse(doc["class"]) != device_class:
                raise LoadError(path, f"file holds class {doc['class']}")
            scl = {}
            for src in Source:
                scl[src] = tuple(read_trace(self.root / rel) for rel in doc["scl"][src.value])
            means = {src: CallHistogram({k: float(v) for k, v in doc["mean_histograms"][src.value].items()})
                     for src in Source}
            return GroundTruthProfile(
                device_class, scl[Source.KERNEL], scl[Source.USER], means[Source.KERNEL], means[Source.USER],
                float(doc["sigma"]), _scheme_from_json(doc["weights"]),
                float(doc["ili"][Source.KERNEL.value]), float(doc["ili"][Source.USER.value]),
                int(doc["representative"][Source.KERNEL.value]), int(doc["representative"][Source.USER.value]))
        except LoadError:
            raise
        except (KeyError, TypeError, ValueError, OSError, ParseError) as exc:
            raise LoadError(path, f"malformed profile: {exc}") from exc

    def _write(self, profile: GroundTruthProfile, must_exist: Optional[bool]):
        cls = profile.device_class
        path = self.path_for(cls)
        with self._locked(cls):
            old_gen = None
            if path.exists():
                if must_exist is False:
                    raise DomainError(f"a profile for {cls} already exists; use replace")
                try:
                    old_gen = int(self._read_doc(path).get("generation", 0))
                except LoadError:
                    old_gen = None
            elif must_exist:
                raise DomainError(f"no profile for {cls} to replace")
            gen = 0 if old_gen is None else old_gen + 1
            trace_dir = f"{cls.key}.g{gen}"
            full_dir = self.root / trace_dir
            if full_dir.exists():
                shutil.rmtree(full_dir)
            full_dir.mkdir(parents=True)
            scl_paths = {}
            for src, tag in ((Source.KERNEL, "kernel"), (Source.USER, "user")):
                rels = []
                for i, t in enumerate(profile.scl(src)):
                    rel = f"{trace_dir}/{tag}-{i:03d}.trace"
                    write_trace(t, self.root / rel)
                    rels.append(rel)
                scl_paths[src.value] = rels
            doc = {
                "schema": SCHEMA,
                "class": str(cls),
                "generation": gen,
                "sigma": profile.sigma,
                "ili": {Source.KERNEL.value: profile.ili_kernel, Source.USER.value: profile.ili_user},
                "weights": _scheme_to_json(profile.weight_scheme),
                "mean_histograms": {src.value: dict(profile.mean_histogram(src).counts) for src in Source},
                "representative": {Source.KERNEL.value: profile.rep_kernel, Source.USER.value: profile.rep_user},
                "scl": scl_paths,
            }
            fd, tmp = tempfile.mkstemp(prefix=f".{cls.key}.", suffix=".tmp", dir=self.root)
            try:
                with os.fdopen(fd, "w") as fh:
                    json.dump(doc, fh, indent=1, sort_keys=True)
                    fh.write("\n")
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            if old_gen is not None and old_gen != gen:
                shutil.rmtree(self.root / f"{cls.key}.g{old_gen}", ignore_errors=True)
        return path

    def store(self, profile: GroundTruthProfile) -> Path:
        return self._write(profile, must_exist=False)

    def replace(self, profile: GroundTruthProfile) -> Path:
        """Write ``profile``, overwriting any existing one for its class."""
        return self._write(profile, must_exist=None)

    def remove(self, device_class: DeviceClass) -> bool:
        path = self.path_for(device_class)
        with self._locked(device_class):
            if not path.exists():
                return False
            try:
                gen = int(self._read_doc(path).get("generation", 0))
            except LoadError:
                gen = None
            path.unlink()
            if gen is not None:
                shutil.rmtree(self.root / f"{device_class.key}.g{gen}", ignore_errors=True)
        return True

    def classes(self) -> list[DeviceClass]:
        if not self.root.is_dir():
            return []
        out = []
        for p in sorted(self.root.glob("*.gtp")):
            doc = self._read_doc(p)
            try:
                out.append(DeviceClass.parse(doc["class"]))
            except (KeyError, ValueError) as exc:
                raise LoadError(p, f"bad class field: {exc}") from exc
        return out


def store(db: ProfileDatabase, profile: GroundTruthProfile) -> Path:
    return db.store(profile)


def lookup(db: ProfileDatabase, device_class: DeviceClass) -> Optional[GroundTruthProfile]:
    return db.lookup(device_class)


def replace(db: ProfileDatabase, profile: GroundTruthProfile) -> Path:
    return db.replace(profile)
