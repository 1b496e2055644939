"""Poisson-timed attack activity."""

import math

import numpy as np

from ..errors import DomainError


def poisson_pmf(lam: float, k: int) -> float:
    """P(K = k) for K ~ Poisson(lam)."""
    if k < 0 or int(k) != k:
        raise DomainError(f"k must be a non-negative integer, got {k}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    k = int(k)
    if k > 20:
        return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))
    return lam**k * math.exp(-lam) / math.factorial(k)


def sample_attack_times(lam: float, duration_s: float, seed) -> list[float]:
    """Draw k ~ Poisson(lam) attack instants, uniform on [0, duration_s], sorted."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    rng = np.random.default_rng(seed)
    k = int(rng.poisson(lam))
    return sorted(float(t) for t in rng.uniform(0.0, duration_s, size=k))
