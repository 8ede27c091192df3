"""The Data Virtualizer core, free of any I/O.

:class:`DataVirtualizer` consumes events (protocol lines from sessions, job
exits, timer ticks), each stamped with the caller's clock, and answers with
a list of actions: lines to send, jobs to spawn or kill, files to delete and
log lines.  The asyncio daemon and the virtual-clock replayer drive the same
core, so both exercise identical miss handling, caching and prefetching.

Miss path: ACQUIRE of a missing step registers the session as a waiter and
starts (or joins) a re-simulation; the simulator reports CREATED/CLOSED; on
CLOSED the step enters the cache, every waiter gets it pinned and READY is
sent.
"""
from __future__ import annotations

import logging
import os
import shlex
import sys
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import prefetch as pf
from .cache import AllPinnedError, CacheState
from .checksums import ChecksumDB, file_digest
from .core import PatternError, SimulationContext, filename_of, key_of, miss_cost, restart_of
from .perf import JobView, PerfEstimator, UnseededError
from .protocol import Message, ProtocolError, decode, encode

log = logging.getLogger(__name__)

QUEUED, LAUNCHING, PRODUCING, DONE, KILLED, FAILED = (
    "queued", "launching", "producing", "done", "killed", "failed")
ACTIVE = (QUEUED, LAUNCHING, PRODUCING)
RUNNING = (LAUNCHING, PRODUCING)


# --- actions -------------------------------------------------------------------

@dataclass
class Send:
    session: int
    line: str


@dataclass
class Spawn:
    job: "SimJob"
    command: str
    env: dict


@dataclass
class Kill:
    job: "SimJob"


@dataclass
class Delete:
    path: str


@dataclass
class Log:
    line: str


# --- state ---------------------------------------------------------------------

@dataclass
class SimJob:
    id: int
    ctx: str
    start_key: int
    stop_key: int
    level: int = 0
    state: str = QUEUED
    owner: Optional[int] = None        # session whose agent planned it
    prefetched: bool = False
    engaged: bool = False              # an acquire has reached its range
    launched_at: Optional[float] = None
    created_at: Optional[float] = None
    last_key: Optional[int] = None     # produced-key high-water mark
    last_at: Optional[float] = None
    predicted_alpha: Optional[float] = None
    kill_requested: bool = False

    @property
    def active(self) -> bool:
        return self.state in ACTIVE

    def will_produce(self, key: int) -> bool:
        return (self.state in ACTIVE and self.start_key <= key <= self.stop_key
                and (self.last_key is None or key > self.last_key))

    def view(self) -> JobView:
        return JobView(self.start_key, self.stop_key, self.level, self.launched_at or 0.0,
                       self.last_key, self.last_at)


@dataclass
class Request:
    id: str
    files: dict                          # filename -> ready flag
    failed: bool = False


@dataclass
class Session:
    id: int
    kind: Optional[str] = None           # "analysis" | "simulator"
    ctx: Optional[str] = None
    job: Optional[int] = None
    requests: dict = field(default_factory=dict)
    pins: Counter = field(default_factory=Counter)
    agent: Optional[pf.PrefetchAgent] = None
    last_request: Optional[float] = None
    last_ready: Optional[float] = None
    closed: bool = False


@dataclass
class ContextState:
    ctx: SimulationContext
    cache: CacheState
    perf: PerfEstimator
    checksums: ChecksumDB
    jobs: dict = field(default_factory=dict)
    waiters: dict = field(default_factory=lambda: defaultdict(list))   # key -> [(sid, rid)]
    deferred: list = field(default_factory=list)                       # [(key, size)]


class DataVirtualizer:
    """Event-driven core; see module docstring."""

    def __init__(self, contexts, addr: str = "", digest: Callable = file_digest,
                 trace: bool = False):
        self.contexts: dict[str, ContextState] = {}
        for ctx in (contexts.values() if hasattr(contexts, "values") else contexts):
            self.add_context(ctx)
        self.addr = addr
        self.digest = digest
        self.sessions: dict[int, Session] = {}
        self.jobs: dict[int, SimJob] = {}
        self._job_ids = 0
        self.trace = [] if trace else None
        self.now = 0.0
        self._out: list = []

    # -- setup ----------------------------------------------------------------

    def add_context(self, ctx: SimulationContext):
        cache = CacheState(ctx.capacity_bytes, ctx.policy,
                           slot_bytes=ctx.driver.output_step_bytes)
        db = ChecksumDB.load(ctx.checksum_db) if ctx.checksum_db else ChecksumDB()
        self.contexts[ctx.name] = ContextState(ctx, cache, PerfEstimator(ctx.ema_alpha), db)

    def register_existing(self, ctx_name: str, key: int, size: int) -> list:
        """Catalog an output step found on disk at startup; returns evicted paths."""
        cs = self.contexts[ctx_name]
        try:
            evicted = cs.cache.insert(key, size, miss_cost(cs.ctx, key))
        except AllPinnedError:
            return []
        return [cs.ctx.path_of(k) for k in evicted]

    # -- plumbing ---------------------------------------------------------------

    def _send(self, sid: int, line: str):
        self._out.append(Send(sid, line))
        if self.trace is not None:
            self.trace.append((self.now, "out", sid, line.rstrip("\n")))

    def _evt(self, kind: str, **fields):
        parts = " ".join(f"{k}={v}" for k, v in fields.items())
        self._out.append(Log(f"EVT ts={self.now:.6f} kind={kind} {parts}".rstrip()))
        if self.trace is not None:
            self.trace.append((self.now, "evt", kind, fields))

    def _flush(self) -> list:
        out, self._out = self._out, []
        return out

    def session(self, sid: int) -> Session:
        s = self.sessions.get(sid)
        if s is None:
            s = self.sessions[sid] = Session(sid)
        return s

    # -- public events ----------------------------------------------------------

    def handle_line(self, sid: int, line: str, now: float) -> list:
        self.now = now
        if self.trace is not None:
            self.trace.append((now, "in", sid, line.rstrip("\n")))
        sess = self.session(sid)
        try:
            m = decode(line)
        except ProtocolError as exc:
            self._send(sid, encode("ERROR", {"code": "proto", "msg": str(exc)}))
            return self._flush()
        handler = getattr(self, f"_on_{m.verb.lower()}", None)
        if handler is None or m.verb not in ("HELLO", "ACQUIRE", "RELEASE", "BITREP", "STATUS",
                                            "BYE", "CREATED", "CLOSED"):
            self._reply_error(sid, m, "proto", msg=f"unexpected verb {m.verb}")
            return self._flush()
        if m.verb != "HELLO" and sess.ctx is None:
            self._reply_error(sid, m, "proto", msg="HELLO first")
            return self._flush()
        handler(sess, m)
        return self._flush()

    def disconnect(self, sid: int, now: float) -> list:
        self.now = now
        sess = self.sessions.get(sid)
        if sess is not None and not sess.closed:
            self._teardown(sess)
        self.sessions.pop(sid, None)
        return self._flush()

    def job_exited(self, job_id: int, code: int, now: float) -> list:
        self.now = now
        job = self.jobs.get(job_id)
        if job is None or not job.active:
            return self._flush()
        cs = self.contexts[job.ctx]
        if job.kill_requested:
            job.state = KILLED
        elif code == 0 and (job.last_key is not None and job.last_key >= job.stop_key):
            job.state = DONE
        else:
            job.state = FAILED
        self._evt("exit", job=job.id, state=job.state, code=code)
        self._settle_orphans(cs, job)
        self._schedule(cs)
        return self._flush()

    def tick(self, now: float) -> list:
        self.now = now
        for cs in self.contexts.values():
            self._schedule(cs)
        return self._flush()

    # simulator notifications, also used directly by the virtual replayer
    def sim_created(self, job_id: int, key: int, now: float) -> list:
        self.now = now
        self._created(self.jobs.get(job_id), key)
        return self._flush()

    def sim_closed(self, job_id: int, key: int, size: Optional[int], now: float) -> list:
        self.now = now
        job = self.jobs.get(job_id)
        cs = self.contexts[job.ctx] if job else None
        if cs is not None:
            self._closed(cs, job, key, size)
        return self._flush()

    # -- verbs ------------------------------------------------------------------

    def _reply_error(self, sid, m: Message, code: str, **extra):
        fields = [("id", m.get("id", ""))] if m.get("id") is not None else []
        fields.append(("code", code))
        fields.extend(extra.items())
        self._send(sid, encode("ERROR", fields))

    def _on_hello(self, sess: Session, m: Message):
        role = m.get("role", "analysis")
        name = m.get("ctx")
        if role not in ("analysis", "simulator"):
            self._reply_error(sess.id, m, "proto", msg="bad role")
            return
        if name not in self.contexts:
            self._reply_error(sess.id, m, "ctx", ctx=name or "")
            return
        sess.kind, sess.ctx = role, name
        if role == "simulator":
            try:
                sess.job = int(m.get("job"))
            except (TypeError, ValueError):
                sess.job = None
        else:
            sess.agent = pf.PrefetchAgent(sess.id, self.contexts[name].ctx)
        self._send(sess.id, encode("OK", [("id", m.get("id", "0")), ("session", sess.id),
                                          ("storage_dir", self.contexts[name].ctx.storage_dir)]))

    def _keys(self, cs: ContextState, files) -> Optional[list]:
        keys = []
        for f in files:
            k = key_of(cs.ctx, f)
            if k is None or (cs.ctx.last_key is not None and k > cs.ctx.last_key):
                return None
            keys.append(k)
        return keys

    def _on_acquire(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        rid = m.get("id", "")
        files = m.getall("file")
        keys = self._keys(cs, files) if files else None
        if sess.kind != "analysis" or not keys or rid in sess.requests:
            self._reply_error(sess.id, m, "proto", msg="bad acquire")
            return
        keys = list(dict.fromkeys(keys))
        now = self.now
        est = cs.perf
        # client pace: time since the previous request was answered
        if sess.last_request is not None and sess.agent.pattern.last_key is not None:
            k = abs(keys[0] - sess.agent.pattern.last_key)
            if k:
                since = max(sess.last_request, sess.last_ready or sess.last_request)
                est.record_client_access(k, max(0.0, now - since))
        sess.last_request = now
        names = [filename_of(cs.ctx, k) for k in keys]
        req = Request(rid, {n: False for n in names})
        sess.requests[rid] = req
        ready, pending, wait_est = [], [], 0.0
        for key, name in zip(keys, names):
            self._engage(cs, key)
            self._observe(cs, sess, key)
            if cs.cache.record_access(key):
                self._evt("hit", ctx=cs.ctx.name, key=key, session=sess.id)
                self._pin(cs, sess, key)
                req.files[name] = True
                ready.append(name)
                self._prefetched_used(sess, key)
                per = cs.ctx.steps_per_restart
                first = restart_of(cs.ctx, key) * per
                self._plan(cs, sess, key, (first, first + per - 1))
                continue
            self._evt("miss", ctx=cs.ctx.name, key=key, session=sess.id)
            self._pollution(cs, sess, key)
            cs.waiters[key].append((sess.id, rid))
            pending.append(name)
            job = self._covering(cs, key)
            if job is None:
                # a plan issued now may cover the key; the demand then joins it
                self._plan(cs, sess, key, None)
                job = self._demand(cs, key, sess)
            else:
                job = self._demand(cs, key, sess)
                self._plan(cs, sess, key, (job.start_key, job.stop_key))
            w = self._estimate(cs, key, job)
            wait_est = -1.0 if w < 0 or wait_est < 0 else max(wait_est, w)
        if not pending:
            sess.last_ready = now
        fields = [("id", rid)] + [("ready", n) for n in ready] + [("pending", n) for n in pending]
        fields.append(("wait_est", f"{wait_est:.6f}" if wait_est >= 0 else "-1"))
        self._send(sess.id, encode("OK", fields))
        if not pending:
            del sess.requests[rid]
        self._schedule(cs)

    def _estimate(self, cs, key, job) -> float:
        try:
            if job.state == QUEUED:
                return cs.perf.t_sim(key - job.start_key + 1, job.level)
            return cs.perf.estimated_wait(miss_cost(cs.ctx, key), job.view(), key, self.now)
        except UnseededError:
            return -1.0

    def _on_release(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        files = m.getall("file")
        keys = self._keys(cs, files) if files else None
        if keys is None:
            self._reply_error(sess.id, m, "proto", msg="bad release")
            return
        bad = [f for f, k in zip(files, keys) if sess.pins[k] <= 0]
        if bad:
            self._reply_error(sess.id, m, "refcount", file=bad[0])
            return
        for k in keys:
            self._unpin(cs, sess, k)
        self._send(sess.id, encode("OK", [("id", m.get("id", ""))]))
        self._retry_deferred(cs)

    def _on_bitrep(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        name = m.get("file")
        key = key_of(cs.ctx, name) if name else None
        if key is None:
            self._reply_error(sess.id, m, "proto", msg="bad file")
            return
        path = cs.ctx.path_of(key)
        if key not in cs.cache or not os.path.exists(path):
            self._reply_error(sess.id, m, "nofile", file=name)
            return
        ref = cs.checksums.get(name)
        if ref is None:
            self._reply_error(sess.id, m, "nodigest", file=name)
            return
        match = int(self.digest(path) == ref)
        self._send(sess.id, encode("BITREPR", [("id", m.get("id", "")), ("file", name),
                                              ("match", match)]))

    def _on_status(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        stats = cs.cache.snapshot_stats()
        fields = [("id", m.get("id", ""))] + list(stats.items())
        fields.append(("entries", len(cs.cache)))
        fields.append(("pinned", cs.cache.pinned_count))
        fields.append(("jobs", sum(1 for j in cs.jobs.values() if j.active)))
        fields.extend(cs.perf.snapshot().items())
        if sess.kind == "analysis":
            fields.append(("my_pins", sum(sess.pins.values())))
        self._send(sess.id, encode("OK", fields))

    def _on_bye(self, sess: Session, m: Message):
        self._teardown(sess)
        self._send(sess.id, encode("OK", [("id", m.get("id", ""))]))

    def _on_created(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        key = key_of(cs.ctx, m.get("file") or "")
        job = self.jobs.get(sess.job) if sess.job is not None else None
        if key is None:
            log.warning("CREATED for unparseable file %r", m.get("file"))
        else:
            self._created(job, key)
        self._send(sess.id, encode("OK", [("id", m.get("id", ""))]))

    def _on_closed(self, sess: Session, m: Message):
        cs = self.contexts[sess.ctx]
        name = m.get("file") or ""
        key = key_of(cs.ctx, name)
        job = self.jobs.get(sess.job) if sess.job is not None else None
        if key is None or (cs.ctx.last_key is not None and key > cs.ctx.last_key):
            log.warning("CLOSED for unusable file %r ignored", name)
        else:
            size = m.get("size")
            self._closed(cs, job, key, int(size) if size else None)
        self._send(sess.id, encode("OK", [("id", m.get("id", ""))]))

    # -- catalog and pins -------------------------------------------------------

    def _pin(self, cs, sess, key):
        cs.cache.pin(key)
        sess.pins[key] += 1

    def _unpin(self, cs, sess, key):
        cs.cache.unpin(key)
        sess.pins[key] -= 1
        if sess.pins[key] == 0:
            del sess.pins[key]

    def _insert(self, cs: ContextState, key: int, size: int) -> bool:
        try:
            evicted = cs.cache.insert(key, size, miss_cost(cs.ctx, key))
        except AllPinnedError:
            return False
        for k in evicted:
            self._evt("evict", ctx=cs.ctx.name, key=k)
            self._out.append(Delete(cs.ctx.path_of(k)))
        return True

    def _retry_deferred(self, cs: ContextState):
        still = []
        for key, size in cs.deferred:
            if key in cs.cache or self._insert(cs, key, size):
                self._serve_waiters(cs, key)
            else:
                still.append((key, size))
        cs.deferred = still

    def _serve_waiters(self, cs: ContextState, key: int):
        name = filename_of(cs.ctx, key)
        for sid, rid in cs.waiters.pop(key, ()):
            sess = self.sessions.get(sid)
            if sess is None or sess.closed:
                continue
            req = sess.requests.get(rid)
            if req is None:
                continue
            self._pin(cs, sess, key)
            req.files[name] = True
            self._send(sid, encode("READY", [("id", rid), ("file", name)]))
            self._evt("ready", ctx=cs.ctx.name, key=key, session=sid)
            if all(req.files.values()):
                del sess.requests[rid]
                sess.last_ready = self.now

    def _fail_waiters(self, cs: ContextState, key: int):
        name = filename_of(cs.ctx, key)
        for sid, rid in cs.waiters.pop(key, ()):
            sess = self.sessions.get(sid)
            if sess is None or sess.closed:
                continue
            req = sess.requests.pop(rid, None)
            if req is None:
                continue
            req.failed = True
            self._send(sid, encode("ERROR", [("id", rid), ("code", "restart"), ("file", name)]))
            # the other files of a failed request are no longer awaited
            for other in list(cs.waiters):
                cs.waiters[other] = [w for w in cs.waiters[other] if w != (sid, rid)]
                if not cs.waiters[other]:
                    del cs.waiters[other]

    # -- jobs -------------------------------------------------------------------

    def _covering(self, cs: ContextState, key: int) -> Optional[SimJob]:
        best = None
        for job in cs.jobs.values():
            if job.will_produce(key):
                # prefer the job that gets there first
                if best is None or (job.state != QUEUED, -(key - job.start_key)) > \
                        (best.state != QUEUED, -(key - best.start_key)):
                    best = job
        return best

    def _missing(self, cs: ContextState, key: int) -> bool:
        return key not in cs.cache and self._covering(cs, key) is None

    def _job_range(self, cs: ContextState, lo: int, hi: int, need: Optional[int] = None):
        """Restart-aligned range producing the missing keys of [lo, hi], or None.

        ``need`` is a key the job must include (a demand miss).
        """
        ctx = cs.ctx
        if ctx.last_key is not None:
            hi = min(hi, ctx.last_key)
        first = need
        if first is None:
            first = next((j for j in range(lo, hi + 1) if self._missing(cs, j)), None)
            if first is None:
                return None
        stop = first
        for j in range(hi, first, -1):
            if self._missing(cs, j):
                stop = j
                break
        return restart_of(ctx, first) * ctx.steps_per_restart, stop

    def _new_job(self, cs, start, stop, level, owner=None, prefetched=False) -> SimJob:
        self._job_ids += 1
        job = SimJob(self._job_ids, cs.ctx.name, start, stop, level, owner=owner,
                     prefetched=prefetched)
        self.jobs[job.id] = job
        cs.jobs[job.id] = job
        return job

    def _demand(self, cs: ContextState, key: int, sess: Session) -> Optional[SimJob]:
        job = self._covering(cs, key)
        if job is not None:
            if job.state == QUEUED:
                self._launch(cs, job)
            return job
        per = cs.ctx.steps_per_restart
        end = restart_of(cs.ctx, key) * per + per - 1
        start, stop = self._job_range(cs, key, end, need=key)
        job = self._new_job(cs, start, stop, 0)
        self._launch(cs, job)
        return job

    def _launch(self, cs: ContextState, job: SimJob):
        ctx = cs.ctx
        values = {
            "start_key": job.start_key, "stop_key": job.stop_key, "parallelism": job.level,
            "storage_dir": shlex.quote(ctx.storage_dir), "job_id": job.id,
            "context": shlex.quote(ctx.name), "addr": self.addr,
            "config": shlex.quote(ctx.extra.get("config_path", "")),
            "python": shlex.quote(sys.executable),
        }
        job.launched_at = self.now
        try:
            job.predicted_alpha = cs.perf.alpha_sim(job.level)
        except UnseededError:
            job.predicted_alpha = None
        try:
            command = ctx.driver.job_template.format(**values)
        except (KeyError, IndexError, ValueError) as exc:
            job.state = FAILED
            self._evt("launch_failed", job=job.id, error=repr(str(exc)))
            self._settle_orphans(cs, job)
            return
        job.state = LAUNCHING
        env = {"REVSIM_ADDR": self.addr, "REVSIM_JOB": str(job.id),
               "REVSIM_CONTEXT": ctx.name}
        self._out.append(Spawn(job, command, env))
        self._evt("launch", ctx=ctx.name, job=job.id, start=job.start_key,
                  stop=job.stop_key, p=job.level, prefetched=int(job.prefetched))

    def spawn_failed(self, job_id: int, now: float) -> list:
        """The daemon could not start the process for ``job_id``."""
        self.now = now
        job = self.jobs.get(job_id)
        if job is not None and job.active:
            job.state = FAILED
            self._evt("exit", job=job.id, state=FAILED, code=-1)
            self._settle_orphans(self.contexts[job.ctx], job)
        return self._flush()

    def _created(self, job: Optional[SimJob], key: int):
        if job is None:
            return
        cs = self.contexts[job.ctx]
        if job.created_at is None:
            job.created_at = self.now
            job.last_at = self.now
            alpha = self.now - (self.now if job.launched_at is None else job.launched_at)
            cs.perf.record_restart_latency(job.level, alpha, job.predicted_alpha)
            if job.state == LAUNCHING:
                job.state = PRODUCING
        self._evt("created", ctx=job.ctx, job=job.id, key=key)

    def _closed(self, cs: ContextState, job: Optional[SimJob], key: int, size: Optional[int]):
        size = size if size is not None else cs.ctx.driver.output_step_bytes
        if job is not None:
            if job.created_at is None:
                log.warning("CLOSED before CREATED for job %s", job.id)
                self._created(job, key)
            if job.last_at is not None:
                cs.perf.record_production(job.level, max(0.0, self.now - job.last_at))
            job.last_at = self.now
            if job.last_key is None or key > job.last_key:
                job.last_key = key
            if job.prefetched and job.owner is not None:
                owner = self.sessions.get(job.owner)
                if owner is not None and owner.agent is not None:
                    owner.agent.prefetched.add(key)
        self._evt("closed", ctx=cs.ctx.name, key=key, job=job.id if job else "")
        if key in cs.cache or self._insert(cs, key, size):
            self._serve_waiters(cs, key)
        elif all(k != key for k, _ in cs.deferred):
            cs.deferred.append((key, size))
            self._evt("deferred", ctx=cs.ctx.name, key=key)

    def _settle_orphans(self, cs: ContextState, job: SimJob):
        """Keys some session waits for that ``job`` will no longer produce."""
        lo = job.start_key if job.last_key is None else job.last_key + 1
        for key in range(lo, job.stop_key + 1):
            if not cs.waiters.get(key) or key in cs.cache:
                continue
            if any(k == key for k, _ in cs.deferred):
                continue
            if self._covering(cs, key) is not None:
                continue
            if job.state == FAILED:
                self._fail_waiters(cs, key)
            else:
                sid = cs.waiters[key][0][0]
                self._demand(cs, key, self.sessions.get(sid))

    def _schedule(self, cs: ContextState):
        """Launch queued prefetch jobs while fewer than s_max are running ahead."""
        queued = [j for j in cs.jobs.values() if j.state == QUEUED]
        if not queued:
            return
        ahead = sum(1 for j in cs.jobs.values()
                    if j.prefetched and j.state in RUNNING and not j.engaged)
        for job in sorted(queued, key=lambda j: j.id):
            if ahead >= cs.ctx.s_max:
                break
            self._launch(cs, job)
            ahead += 1

    def _engage(self, cs: ContextState, key: int):
        for job in cs.jobs.values():
            if job.active and not job.engaged and job.start_key <= key <= job.stop_key:
                job.engaged = True

    def kill(self, cs: ContextState, job: SimJob):
        if job.state == QUEUED:
            job.state = KILLED
            self._evt("kill", job=job.id, queued=1)
            return
        job.kill_requested = True
        self._out.append(Kill(job))
        self._evt("kill", job=job.id, queued=0)

    def _has_waiters(self, cs: ContextState, job: SimJob) -> bool:
        lo = job.start_key if job.last_key is None else job.last_key + 1
        return any(cs.waiters.get(k) for k in range(lo, job.stop_key + 1))

    # -- prefetching ------------------------------------------------------------

    def _observe(self, cs, sess: Session, key: int):
        agent = sess.agent
        if agent.observe(key, self.now):
            self._evt("reset", session=sess.id, reason="pattern")
            self._kill_for(cs, sess)

    def _kill_for(self, cs, sess: Session):
        jobs = [j for j in cs.jobs.values() if not j.kill_requested]
        for job in pf.kill_candidates(jobs, sess.id, lambda j: self._has_waiters(cs, j)):
            self.kill(cs, job)

    def _prefetched_used(self, sess: Session, key: int):
        if sess.agent is not None:
            sess.agent.prefetched.discard(key)

    def _pollution(self, cs, sess: Session, key: int):
        agent = sess.agent
        was = key in agent.prefetched
        if pf.pollution_check(was, key in cs.cache) == pf.POLLUTION:
            agent.prefetched.discard(key)
            self._evt("pollution", ctx=cs.ctx.name, key=key, session=sess.id)
            for other in self.sessions.values():
                if other.agent is not None and other.ctx == sess.ctx:
                    other.agent.reset()

    def _plan(self, cs: ContextState, sess: Session, key: int, serving: Optional[tuple]):
        agent = sess.agent
        rng = serving
        try:
            plan = agent.on_access(key, cs.perf, rng)
        except UnseededError:
            plan = None
        if plan is None:
            return
        for a, b, p in plan.jobs:
            r = self._job_range(cs, a, b)
            self._out.append(Log(f"PLAN ts={self.now:.6f} client={sess.id} start={a} stop={b} "
                                 f"s={plan.s} p={p}"))
            if r is None:
                continue
            job = self._new_job(cs, r[0], r[1], p, owner=sess.id, prefetched=True)
            self._evt("plan", ctx=cs.ctx.name, job=job.id, start=r[0], stop=r[1], p=p)

    def _teardown(self, sess: Session):
        if sess.closed:
            return
        sess.closed = True
        if sess.ctx is None or sess.kind != "analysis":
            return
        cs = self.contexts[sess.ctx]
        for key, n in list(sess.pins.items()):
            for _ in range(n):
                self._unpin(cs, sess, key)
        for key in list(cs.waiters):
            cs.waiters[key] = [w for w in cs.waiters[key] if w[0] != sess.id]
            if not cs.waiters[key]:
                del cs.waiters[key]
        sess.requests.clear()
        sess.agent.reset()
        self._kill_for(cs, sess)
        self._retry_deferred(cs)

    # -- queries used by tests and the replayer -------------------------------------

    def serving_job(self, ctx_name: str, key: int) -> Optional[SimJob]:
        return self._covering(self.contexts[ctx_name], key)

    def context_state(self, name: str) -> ContextState:
        return self.contexts[name]


__all__ = ["DataVirtualizer", "SimJob", "Session", "Send", "Spawn", "Kill", "Delete", "Log",
           "PatternError"]
