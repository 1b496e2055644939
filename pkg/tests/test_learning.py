import json
import threading

import numpy as np
import pytest

from conftest import LIMITED, RICH, sim
from gridsentry.errors import ClassMismatch, DomainError, LoadError
from gridsentry.learning import (GroundTruthProfile, ProfileDatabase, Rejection, SigmaPolicy, build_gtp,
                                 mean_histogram, representative_index)
from gridsentry.stats import compute_ili
from gridsentry.traces import CallTrace, DeviceClass, Source, Tier, WeightScheme, histogram, weigh

NAMES = ["read", "write", "open", "close", "poll", "futex", "brk", "mmap"]


def _runs(names, n, cls=RICH):
    k = [CallTrace.from_names(names, device_class=cls, source=Source.KERNEL, run_id=i) for i in range(n)]
    u = [CallTrace.from_names(names, device_class=cls, source=Source.USER, run_id=i) for i in range(n)]
    return k, u


def _noise(n, length, cls=RICH, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for src in Source:
        out[src] = [CallTrace.from_names([NAMES[j] for j in rng.integers(len(NAMES), size=length)],
                                         device_class=cls, source=src, run_id=i) for i in range(n)]
    return out[Source.KERNEL], out[Source.USER]


def _sim_runs(cls, n, start=0):
    pairs = [sim(s, cls) for s in range(start, start + n)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def test_identical_runs_accepted_with_unit_ili():
    k, u = _runs(["open", "read", "read", "write", "close"] * 10, 5)
    gtp = build_gtp(k, u, sigma_policy=0.9)
    assert gtp.accepted
    assert gtp.ili_kernel == pytest.approx(1.0, abs=1e-12)
    assert gtp.ili_user == pytest.approx(1.0, abs=1e-12)
    assert gtp.sigma == 0.9


def test_noise_rejected():
    k, u = _noise(10, 300)
    res = build_gtp(k, u)
    assert isinstance(res, Rejection) and not res.accepted
    assert res.tried[0] == 0.8 and res.tried[-1] == pytest.approx(0.1)
    assert "rejected" in str(res)


def test_thirty_rich_runs_accepted_at_initial_sigma():
    k, u = _sim_runs(RICH, 30)
    gtp = build_gtp(k, u)
    assert gtp.accepted and gtp.sigma == 0.8
    assert gtp.ili_kernel > 0.8 and gtp.ili_user > 0.8


def test_limited_profile_lowers_sigma():
    k, u = _sim_runs(LIMITED, 30)
    gtp = build_gtp(k, u)
    assert gtp.accepted and gtp.sigma < 0.6
    assert gtp.ili_kernel > gtp.sigma and gtp.ili_user > gtp.sigma


def test_mixed_classes_rejected():
    k, u = _runs(NAMES * 5, 3)
    other = CallTrace.from_names(NAMES * 5, device_class=LIMITED, source=Source.KERNEL)
    with pytest.raises(ClassMismatch):
        build_gtp(k + [other], u)


def test_too_few_runs():
    k, u = _runs(NAMES * 5, 1)
    with pytest.raises(DomainError):
        build_gtp(k, u)


def test_wrong_source_rejected():
    k, u = _runs(NAMES * 5, 3)
    with pytest.raises(DomainError):
        build_gtp(u, k)


def test_sigma_candidates():
    p = SigmaPolicy()
    assert p.candidates(Tier.RICH)[:3] == [0.8, 0.75, 0.7]
    assert p.candidates(Tier.LIMITED)[0] == 0.6
    assert p.candidates(Tier.LIMITED)[-1] == pytest.approx(0.1)
    assert SigmaPolicy.fixed(0.7).candidates(Tier.RICH) == [0.7]
    with pytest.raises(DomainError):
        SigmaPolicy(floor=0.9)
    with pytest.raises(DomainError):
        SigmaPolicy(step=0)


def test_mean_histogram_and_representative():
    a = CallTrace.from_names(["a", "a", "b"])
    b = CallTrace.from_names(["a", "b", "b", "c"])
    m = mean_histogram([a, b])
    assert (m["a"], m["b"], m["c"]) == (1.5, 1.5, 0.5)
    series = [[1, 2, 3, 4], [1, 2, 3, 5], [4, 3, 2, 1]]
    # peers: run 0 and 1 agree with each other, run 2 disagrees with both
    assert representative_index(series) in (0, 1)
    assert representative_index([[1, 2]]) == 0


def test_profile_rejects_ili_at_or_below_sigma():
    k, u = _runs(NAMES * 3, 2)
    with pytest.raises(DomainError):
        GroundTruthProfile(RICH, k, u, histogram(k[0]), histogram(u[0]), 0.5, WeightScheme.uniform_random(0),
                           0.5, 0.9)


# -- database ---------------------------------------------------------------------


@pytest.fixture
def rich_profile():
    k, u = _sim_runs(RICH, 4)
    return build_gtp(k, u)


def test_round_trip(tmp_path, rich_profile):
    db = ProfileDatabase(tmp_path)
    db.store(rich_profile)
    back = db.lookup(RICH)
    assert back.device_class == RICH
    for src in Source:
        assert back.mean_histogram(src).counts == rich_profile.mean_histogram(src).counts
        assert [t.names for t in back.scl(src)] == [t.names for t in rich_profile.scl(src)]
        assert back.ili(src) == pytest.approx(rich_profile.ili(src), abs=1e-12)
        assert back.representative(src).names == rich_profile.representative(src).names
    assert back.sigma == rich_profile.sigma
    assert back.weight_scheme == rich_profile.weight_scheme
    assert db.classes() == [RICH]


def test_store_refuses_overwrite_and_replace_updates(tmp_path, rich_profile):
    db = ProfileDatabase(tmp_path)
    db.store(rich_profile)
    with pytest.raises(DomainError):
        db.store(rich_profile)
    k, u = list(rich_profile.scl_kernel), list(rich_profile.scl_user)
    lower = build_gtp(k, u, sigma_policy=0.5)
    db.replace(lower)
    assert db.lookup(RICH).sigma == 0.5
    assert len(list(tmp_path.glob("*.g*"))) == 2  # document plus the current generation directory


def test_unknown_class_is_none(tmp_path, rich_profile):
    db = ProfileDatabase(tmp_path)
    db.store(rich_profile)
    assert db.lookup(DeviceClass(Tier.RICH, "relay", "goose")) is None


def test_remove(tmp_path, rich_profile):
    db = ProfileDatabase(tmp_path)
    db.store(rich_profile)
    assert db.remove(RICH)
    assert db.lookup(RICH) is None
    assert not db.remove(RICH)


def test_corrupt_profile_raises(tmp_path, rich_profile):
    db = ProfileDatabase(tmp_path)
    path = db.store(rich_profile)
    path.write_text("{not json")
    with pytest.raises(LoadError):
        db.lookup(RICH)
    path.write_text(json.dumps({"schema": "something else"}))
    with pytest.raises(LoadError):
        db.lookup(RICH)


def test_concurrent_writers_leave_a_readable_profile(tmp_path):
    k, u = _sim_runs(RICH, 3)
    profiles = [build_gtp(k, u, sigma_policy=s) for s in (0.5, 0.55, 0.6, 0.65)]
    db = ProfileDatabase(tmp_path)
    errors = []

    def writer(p):
        try:
            for _ in range(3):
                ProfileDatabase(tmp_path).replace(p)
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(p,)) for p in profiles]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    back = db.lookup(RICH)
    assert back.sigma in {0.5, 0.55, 0.6, 0.65}
    assert len(list(tmp_path.glob("*.g*"))) == 2


def test_stored_profiles_meet_their_own_threshold(trained_db):
    for cls in trained_db.classes():
        gtp = trained_db.lookup(cls)
        for src in Source:
            ili = compute_ili([weigh(t, gtp.weight_scheme) for t in gtp.scl(src)])
            assert ili == pytest.approx(gtp.ili(src), abs=1e-12)
            assert ili > gtp.sigma
