import os

import pytest

from gridsentry.evaluation import ExperimentPlan, learn_profiles, threshold_sweep
from gridsentry.learning import ProfileDatabase
from gridsentry.sim.session import SimConfig, run_session
from gridsentry.traces import DeviceClass, Tier

LIMITED = DeviceClass(Tier.LIMITED, "ied", "goose")
RICH = DeviceClass(Tier.RICH, "ied", "goose")


@pytest.fixture(scope="session")
def trained_db(tmp_path_factory):
    """Profiles for both tiers, learned from 30 simulated genuine runs each (plan seed 0)."""
    db = ProfileDatabase(tmp_path_factory.mktemp("db"))
    results = learn_profiles(ExperimentPlan(), db, runs=30)
    assert all(r.accepted for r in results.values()), results
    return db


@pytest.fixture(scope="session")
def rich_gtp(trained_db):
    return trained_db.lookup(RICH)


@pytest.fixture(scope="session")
def limited_gtp(trained_db):
    return trained_db.lookup(LIMITED)


def sim(seed, cls=RICH, scenario=None, **kw):
    return run_session(SimConfig(seed=seed, transport="inproc", **kw), cls, scenario)


WORKERS = min(4, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def sweep(trained_db):
    """Full six-scenario sweep over the default betas (30 + 30 runs per scenario)."""
    return threshold_sweep(ExperimentPlan(workers=WORKERS), trained_db)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
