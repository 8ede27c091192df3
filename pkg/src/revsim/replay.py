"""Virtual-clock trace replay.

``replay_full`` drives the real server core with simulated jobs and clients
on a virtual clock.

``replay_cache`` is the cache-only mode.  A miss on key k restarts the
simulation at the restart step below k and produces steps up to k.  The job
then stays attached to its restart interval: a later miss in the same
interval above the job's position continues it (no new restart) instead of
launching another one.  Jobs are retired when the client that launched them
finishes, so every produced step is charged to exactly one miss.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .cache import CacheState
from .protocol import decode, encode


@dataclass
class Metrics:
    steps: int = 0             # output steps produced by re-simulations
    restarts: int = 0          # re-simulations launched
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    waits: list = field(default_factory=list)
    completion: float = 0.0
    # (request time, seconds) for accesses that waited on a restart latency
    alpha_stalls: list = field(default_factory=list)
    failures: int = 0

    def stalls_after(self, t: float) -> int:
        return sum(1 for when, _ in self.alpha_stalls if when >= t)

    def row(self) -> dict:
        return {"steps": self.steps, "restarts": self.restarts, "hits": self.hits,
                "misses": self.misses, "evictions": self.evictions,
                "completion": round(self.completion, 6)}


def _pairs(trace):
    for item in trace:
        if isinstance(item, tuple):
            yield item
        else:
            yield 0, item


def replay_cache(trace, steps_per_restart: int, capacity: int, policy: str = "DCL",
                 record=None) -> Metrics:
    """Replay ``trace`` (keys or (client, key) pairs) against a cache of ``capacity`` steps.

    ``record``, when given, is called as ``record(key, first, produced)`` for
    every miss, where ``produced`` is the number of newly simulated steps.
    """
    per = steps_per_restart
    pairs = list(_pairs(trace))
    last_seen = {c: i for i, (c, _) in enumerate(pairs)}
    cache = CacheState(capacity, policy, slot_bytes=1)
    insert = cache.insert
    access = cache.record_access
    jobs = {}                  # restart interval -> live jobs, each [next key, owner]
    owned = {}                 # client -> [(interval, job)]
    steps = restarts = 0
    for i, (client, key) in enumerate(pairs):
        if not access(key):
            r = key // per
            live = jobs.get(r)
            job = None
            if live:
                for jb in live:
                    if jb[0] <= key and (job is None or jb[0] > job[0]):
                        job = jb
            if job is not None:
                first = job[0]
            else:
                first = r * per
                restarts += 1
                job = [first, client]
                jobs.setdefault(r, []).append(job)
                owned.setdefault(client, []).append((r, job))
            job[0] = key + 1
            base = r * per - 1
            for k in range(first, key + 1):
                insert(k, 1, k - base)
            steps += key - first + 1
            if record is not None:
                record(key, first, key - first + 1)
        if last_seen[client] == i:
            for r, job in owned.pop(client, ()):
                live = jobs[r]
                live.remove(job)
                if not live:
                    del jobs[r]
    m = Metrics(steps=steps, restarts=restarts)
    m.hits, m.misses, m.evictions = cache.hits, cache.misses, cache.evictions
    return m


# --- full mode -------------------------------------------------------------------

def _per_level(value) -> callable:
    if not isinstance(value, dict):
        return lambda p: float(value)
    table = {int(k): float(v) for k, v in value.items()}
    return lambda p: table[min(table, key=lambda q: (abs(q - p), q))]


@dataclass
class VirtualClient:
    keys: Sequence[int]
    tau_cli: float = 0.0          # processing time per accessed step
    start: float = 0.0


def replay_full(ctx, clients, alpha: Union[float, dict], tau: Union[float, dict],
                tau_cli: float = 0.0, trace: bool = False, until: Optional[float] = None):
    """Replay clients against a :class:`DataVirtualizer` on a virtual clock.

    ``clients`` is a list of :class:`VirtualClient` or of key lists (which
    then use ``tau_cli``).  Re-simulations take ``alpha(p)`` to start and
    ``tau(p)`` per output step, with ideal concurrency.  A client processes
    each step for ``tau_cli`` after it becomes available, then releases it
    and requests the next one.  At equal times simulator events are handled
    before client events.

    Returns ``(metrics, server)``.
    """
    from .server import DataVirtualizer, Kill, Send, Spawn, LAUNCHING

    alpha_of, tau_of = _per_level(alpha), _per_level(tau)
    clients = [c if isinstance(c, VirtualClient) else VirtualClient(list(c), tau_cli)
               for c in clients]
    dv = DataVirtualizer([ctx], trace=trace)
    name = ctx.name
    heap: list = []
    seq = itertools.count()
    killed = set()
    m = Metrics()
    pos = [0] * len(clients)
    asked = [0.0] * len(clients)
    held: list = [None] * len(clients)
    rids = itertools.count(1)

    def push(t, prio, kind, *args):
        heapq.heappush(heap, (t, prio, next(seq), kind, args))

    def fname(k):
        from .core import filename_of
        return filename_of(ctx, k)

    def run(actions, now):
        for act in actions:
            if isinstance(act, Spawn):
                job = act.job
                a, t = alpha_of(job.level), tau_of(job.level)
                m.restarts += 1
                push(now + a, 0, "created", job.id, job.start_key)
                for i, k in enumerate(range(job.start_key, job.stop_key + 1)):
                    push(now + a + (i + 1) * t, 0, "closed", job.id, k)
                push(now + a + (job.stop_key - job.start_key + 1) * t, 0, "exit", job.id, 0)
            elif isinstance(act, Kill):
                killed.add(act.job.id)
                push(now, 0, "killed", act.job.id)
            elif isinstance(act, Send) and act.session > 0:
                c = act.session - 1
                msg = decode(act.line)
                if msg.verb == "READY" or (msg.verb == "OK" and msg.get("ready") is not None):
                    if msg.verb == "READY":
                        m.waits.append(now - asked[c])
                    else:
                        m.waits.append(0.0)
                    push(now + clients[c].tau_cli, 1, "next", c)
                elif msg.verb == "ERROR" and msg.get("code") == "restart":
                    m.failures += 1
                    held[c] = None
                    push(now, 1, "next", c)

    def acquire(c, now):
        key = clients[c].keys[pos[c]]
        asked[c] = now
        held[c] = key
        run(dv.handle_line(c + 1, encode("ACQUIRE", [("id", next(rids)), ("file", fname(key))]),
                           now), now)
        if key in dv.contexts[name].cache and held[c] is not None:
            return
        job = dv.serving_job(name, key)
        if job is not None and job.state == LAUNCHING:
            stall = job.launched_at + alpha_of(job.level) - now
            if stall > 0:
                m.alpha_stalls.append((now, stall))

    for c, cl in enumerate(clients):
        push(cl.start, 1, "start", c)

    now = 0.0
    while heap:
        now, _, _, kind, args = heapq.heappop(heap)
        if until is not None and now > until:
            break
        if kind in ("created", "closed", "exit") and args[0] in killed:
            continue
        if kind == "created":
            run(dv.sim_created(args[0], args[1], now), now)
        elif kind == "closed":
            m.steps += 1
            run(dv.sim_closed(args[0], args[1], None, now), now)
        elif kind in ("exit", "killed"):
            run(dv.job_exited(args[0], 0 if kind == "exit" else -9, now), now)
        elif kind == "start":
            c = args[0]
            run(dv.handle_line(c + 1, encode("HELLO", [("id", 0), ("role", "analysis"),
                                                       ("ctx", name)]), now), now)
            if clients[c].keys:
                acquire(c, now)
        elif kind == "next":
            c = args[0]
            if held[c] is not None:
                run(dv.handle_line(c + 1, encode("RELEASE", [("id", next(rids)),
                                                             ("file", fname(held[c]))]), now), now)
                held[c] = None
            pos[c] += 1
            if pos[c] < len(clients[c].keys):
                acquire(c, now)
            else:
                run(dv.handle_line(c + 1, encode("BYE", [("id", next(rids))]), now), now)
                m.completion = max(m.completion, now)
    stats = dv.contexts[name].cache.snapshot_stats()
    m.hits, m.misses, m.evictions = stats["hits"], stats["misses"], stats["evictions"]
    return m, dv
