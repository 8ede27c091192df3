"""Synthetic analysis access traces.

A trace is a list of ``(client, key)`` pairs in global issue order.  Each
client reads ``length`` keys; with overlap ``o`` (percent) client j+1 joins
once client j has issued ``(1 - o/100)`` of its accesses, and all running
clients are served round-robin.  ``o = 0`` concatenates the clients.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Optional

PATTERNS = ("forward", "backward", "random", "mixed")


@dataclass(frozen=True)
class TraceSpec:
    pattern: str = "forward"
    timeline: int = 1152          # number of output steps (keys 0 .. timeline-1)
    clients: int = 1
    length_min: int = 100
    length_max: int = 400
    stride: int = 1
    overlap: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if not 1 <= self.length_min <= self.length_max:
            raise ValueError("need 1 <= length_min <= length_max")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if (self.length_max - 1) * self.stride >= self.timeline:
            raise ValueError("longest client does not fit in the timeline")
        if not 0 <= self.overlap <= 100:
            raise ValueError("overlap must be in [0, 100]")


def client_keys(pattern: str, start: int, length: int, stride: int = 1,
                rng: Optional[random.Random] = None) -> list[int]:
    """Keys read by one client.

    ``start`` is the first key for forward and backward clients; random
    clients draw every key uniformly from ``[0, start)``, i.e. ``start`` is
    the timeline length.
    """
    if pattern == "forward":
        return [start + i * stride for i in range(length)]
    if pattern == "backward":
        return [start - i * stride for i in range(length)]
    if pattern == "random":
        rng = rng or random.Random(0)
        return [rng.randrange(start) for _ in range(length)]
    raise ValueError(f"unknown pattern {pattern!r}")


def gen_clients(spec: TraceSpec) -> list[list[int]]:
    rng = random.Random(spec.seed)
    out = []
    for _ in range(spec.clients):
        pattern = spec.pattern
        if pattern == "mixed":
            pattern = rng.choice(("forward", "backward", "random"))
        length = rng.randint(spec.length_min, spec.length_max)
        if pattern == "random":
            out.append(client_keys(pattern, spec.timeline, length, rng=rng))
            continue
        span = (length - 1) * spec.stride
        low = rng.randrange(spec.timeline - span)
        start = low + span if pattern == "backward" else low
        out.append(client_keys(pattern, start, length, spec.stride, rng))
    return out


def interleave(clients: list[list[int]], overlap: float) -> list[tuple[int, int]]:
    """Merge client key lists into one issue order (see module docstring)."""
    out = []
    if not clients:
        return out
    solo = [len(c) - round(len(c) * overlap / 100.0) for c in clients]
    pos = [0] * len(clients)
    running = deque([0])
    admitted = 1
    while True:
        # admit the next client once the newest one has run its solo part
        while admitted < len(clients) and pos[admitted - 1] >= solo[admitted - 1]:
            running.append(admitted)
            admitted += 1
        if not running:
            if admitted == len(clients):
                return out
            running.append(admitted)
            admitted += 1
        j = running.popleft()
        out.append((j, clients[j][pos[j]]))
        pos[j] += 1
        if pos[j] < len(clients[j]):
            running.append(j)


def gen_trace(spec: TraceSpec) -> list[tuple[int, int]]:
    return interleave(gen_clients(spec), spec.overlap)


def keys_only(trace) -> list[int]:
    return [k for _, k in trace]
