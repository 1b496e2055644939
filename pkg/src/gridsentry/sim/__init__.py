"""Substation GOOSE publisher/subscriber simulator with Poisson-timed threat injection."""

from .goose import GooseFrame
from .payloads import Threat, inject_payload, payload_block
from .poisson import poisson_pmf, sample_attack_times
from .session import SCENARIO_IDS, SimConfig, ThreatScenario, attack_boundaries, run_session, task_schedule

__all__ = [
    "GooseFrame", "Threat", "inject_payload", "payload_block", "poisson_pmf", "sample_attack_times",
    "SCENARIO_IDS", "SimConfig", "ThreatScenario", "attack_boundaries", "run_session", "task_schedule",
]
