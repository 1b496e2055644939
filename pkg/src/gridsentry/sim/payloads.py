"""Call templates for genuine GOOSE tasks and for the injected threat payloads.

Templates are fixed constants. Genuine per-cycle templates are what a
publisher (resource-limited) or subscriber (resource-rich) emits for one
message; threat templates are what one activation of the malicious routine
adds. Kernel-hook templates list system calls, user-hook templates list
library function calls.

Threat blocks only use calls the genuine task already makes where the
matching hook is known to be blind to the threat: the store-and-send-later
routine on a limited device writes through a statically linked stdio path,
so the interposition hook only sees its buffer handling.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from ..traces import Source, Tier


class Threat(str, Enum):
    LEAKAGE = "leakage"
    POISONING = "poisoning"
    STORE_AND_SEND_LATER = "store-and-send-later"


# -- genuine templates ---------------------------------------------------------

SETUP = {
    (Tier.LIMITED, Source.KERNEL): [
        "brk", "brk", "mmap2", "mprotect", "mmap2", "open", "fstat64", "lseek", "close",
        "open", "fstat64", "close", "munmap", "rt_sigaction", "rt_sigaction", "clone",
        "rt_sigprocmask", "socket", "setsockopt", "bind",
    ],
    (Tier.LIMITED, Source.USER): [
        "socket", "malloc", "memset", "mmap", "mprotect", "pthread_create", "pthread_detach",
        "signal", "malloc", "memset",
    ],
    (Tier.RICH, Source.KERNEL): [
        "brk", "brk", "mmap", "mprotect", "mmap", "open", "fstat", "close", "open", "fstat",
        "close", "munmap", "rt_sigaction", "rt_sigaction", "clone", "socket", "setsockopt", "bind",
    ],
    (Tier.RICH, Source.USER): [
        "socket", "malloc", "memset", "mmap", "mprotect", "pthread_create", "pthread_detach",
        "signal", "malloc", "memset",
    ],
}

TEARDOWN = {
    (Tier.LIMITED, Source.KERNEL): ["close", "munmap", "exit_group"],
    (Tier.LIMITED, Source.USER): ["free", "free", "close"],
    (Tier.RICH, Source.KERNEL): ["close", "munmap", "exit_group"],
    (Tier.RICH, Source.USER): ["free", "free", "close"],
}

# calls the benign background noise may add; all are frequent per-cycle calls
# so one extra occurrence barely moves their counts
JITTER_POOL = {
    (Tier.LIMITED, Source.KERNEL): ["clock_gettime", "rt_sigprocmask", "gettimeofday", "nanosleep"],
    (Tier.LIMITED, Source.USER): ["malloc", "free", "memcpy", "memset"],
    (Tier.RICH, Source.KERNEL): ["clock_gettime", "poll", "futex", "gettimeofday"],
    (Tier.RICH, Source.USER): ["malloc", "free", "memcpy", "memset"],
}


def cycle_calls(tier: Tier, source: Source, entries: int, state_change: bool) -> list[str]:
    """Calls for one message cycle carrying ``entries`` dataset values."""
    if tier is Tier.LIMITED and source is Source.USER:
        calls = ["malloc"] * 12 + ["memset"] * 12
        calls += ["memcpy"] * (8 * entries)
        calls += ["sendto"] * 8
        if state_change:
            calls += ["sendto"] * 12 + ["usleep"] * 8
        calls += ["free"] * 12 + ["usleep"] * 8
        return calls
    if tier is Tier.RICH and source is Source.USER:
        calls = ["recvfrom"] * 8 + ["malloc"] * 12
        calls += ["memcpy"] * (8 * entries)
        if state_change:
            calls += ["memset"] * 16
        calls += ["free"] * 12 + ["usleep"] * 8
        return calls
    if tier is Tier.LIMITED and source is Source.KERNEL:
        # long sections of repeating 4-call groups: single positions are noisy
        # under insertions while 4-call window sums stay stable; every section
        # mixes several calls so no single weight draw dominates the contrast
        calls = ["clock_gettime", "rt_sigprocmask", "gettimeofday", "read"] * 8
        calls += ["select", "ioctl", "clock_gettime", "read"] * 8
        calls += ["sendto", "rt_sigprocmask", "sendto", "ioctl"] * (2 * entries)
        calls += ["sendto", "gettimeofday", "select", "read"] * (2 * entries)
        if state_change:
            calls += ["sendto", "gettimeofday", "sendto", "ioctl"] * 12
        calls += ["nanosleep", "rt_sigprocmask", "select", "gettimeofday"] * 8
        calls += ["nanosleep", "read", "clock_gettime", "ioctl"] * 8
        return calls
    calls = ["poll"] * 12 + ["recvfrom"] * 12
    calls += ["futex"] * (6 * entries) + ["gettimeofday"] * (4 * entries)
    if state_change:
        calls += ["write"] * 12
    calls += ["clock_gettime"] * 12
    return calls


# -- threat payloads -----------------------------------------------------------


def _leak_limited(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(6, 12))
        return (["mmap2", "mprotect", "clone", "clone", "clone", "rt_sigprocmask", "rt_sigprocmask"]
                + ["sendto", "rt_sigprocmask"] * n + ["mmap2"])
    n = int(rng.integers(10, 20))
    return (["mmap", "mprotect", "pthread_create", "pthread_detach", "signal", "signal",
             "signal", "signal", "signal", "signal", "mmap", "mprotect", "pthread_create"]
            + ["malloc", "malloc", "sendto", "sendto", "free", "free", "usleep"] * n)


def _poison_limited(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(2, 5))
        return ["brk"] * n + ["mmap2", "mmap2", "rt_sigaction", "munmap", "rt_sigaction"]
    n = int(rng.integers(4, 13))
    return ["malloc"] * n + ["memset"] * int(rng.integers(4, 24)) + ["memcpy"] * int(rng.integers(8, 80)) + ["free"] * n


def _store_limited(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(1, 4))
        return (["open", "fstat64", "fstat64", "fstat64", "mmap2", "rt_sigaction"]
                + ["write"] * n + ["close", "munmap", "munmap", "munmap", "munmap"])
    return ["memset"] * int(rng.integers(8, 24)) + ["memcpy"] * int(rng.integers(8, 80))


def _leak_rich(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(8, 16))
        return (["clone"] * 6 + ["mmap", "mprotect", "open", "fstat", "fstat", "fstat", "close",
                                 "rt_sigaction", "rt_sigaction", "munmap", "munmap", "munmap", "munmap"]
                + ["recvfrom", "sendto"] * n)
    # sized so a session with the default rate inflates malloc/free about 15x
    n = int(rng.integers(700, 1052))
    head = []
    for _ in range(4):
        head += ["socket", "mmap", "mprotect", "pthread_create", "pthread_detach", "signal", "memset",
                 "memset", "memset"]
    loop = ["recvfrom", "malloc", "malloc", "memcpy", "memcpy", "memcpy", "sendto", "free", "free", "usleep"]
    return head + loop * n


def _poison_rich(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(2, 5))
        return (["brk"] * n + ["mmap", "mmap", "open", "fstat", "fstat", "fstat", "fstat", "close",
                               "munmap", "munmap", "munmap", "munmap", "munmap", "munmap"])
    n = int(rng.integers(4, 13))
    return ["malloc"] * n + ["memset"] * int(rng.integers(2, 8)) + ["memcpy"] * int(rng.integers(8, 80)) + ["free"] * n


def _store_rich(source, rng):
    if source is Source.KERNEL:
        n = int(rng.integers(1, 4))
        return (["open", "fstat", "fstat", "fstat", "fstat", "mmap"] + ["write"] * n
                + ["close", "munmap", "munmap", "munmap", "munmap", "munmap", "munmap"])
    return ["memset"] * int(rng.integers(2, 10)) + ["memcpy"] * int(rng.integers(8, 80)) + ["malloc", "free"]


_PAYLOADS = {
    (Threat.LEAKAGE, Tier.LIMITED): _leak_limited,
    (Threat.POISONING, Tier.LIMITED): _poison_limited,
    (Threat.STORE_AND_SEND_LATER, Tier.LIMITED): _store_limited,
    (Threat.LEAKAGE, Tier.RICH): _leak_rich,
    (Threat.POISONING, Tier.RICH): _poison_rich,
    (Threat.STORE_AND_SEND_LATER, Tier.RICH): _store_rich,
}


def payload_block(threat: Threat, tier: Tier, source: Source, rng: np.random.Generator) -> list[str]:
    """Calls added by one activation of ``threat`` as seen by ``source``."""
    return _PAYLOADS[(Threat(threat), Tier(tier))](Source(source), rng)


def inject_payload(threat, cycle_events: list[str], tier=Tier.LIMITED, source=Source.KERNEL,
                   rng=None) -> list[str]:
    """Append one activation's block after a complete cycle's calls."""
    if rng is None:
        rng = np.random.default_rng(0)
    return list(cycle_events) + payload_block(threat, tier, source, rng)
