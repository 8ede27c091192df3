"""Access-pattern detection and prefetch planning for analysis clients.

Each analysis session gets a :class:`PrefetchAgent`.  Once two consecutive
accesses share the same signed stride the agent plans re-simulations ahead
of (forward) or behind (backward) the analysis so that restart latency is
overlapped with analysis work.  Time is seen through the accesses only: a
plan is issued when the analysis reaches the planned prefetching step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .perf import PerfEstimator

UNKNOWN, FORWARD, BACKWARD = "unknown", "forward", "backward"
OK, POLLUTION = "ok", "pollution_signal"

# escalation stops unless the new level is at least 5% faster
ESCALATION_GAIN = 0.95


def _ceil(x: float) -> int:
    # guard against float noise such as 1.1 / 0.1 = 11.000000000000002
    return math.ceil(round(x, 9))


def ceil_to_multiple(x: int, m: int) -> int:
    return -(-x // m) * m


@dataclass
class AccessPattern:
    direction: str = UNKNOWN
    stride: int = 0
    signed_stride: Optional[int] = None
    last_key: Optional[int] = None
    last_time: Optional[float] = None
    prev_key: Optional[int] = None
    prev_time: Optional[float] = None
    confirmed: bool = False


@dataclass
class PrefetchPlan:
    jobs: list                 # [(start_key, stop_key, level)]
    prefetch_step: Optional[int]
    n: int
    s: int
    direction: str = FORWARD


def processing_time(est: PerfEstimator, k: int, p: int = 0) -> float:
    """Per-access analysis time: bounded by the simulation or by the client."""
    return max(k * est.tau_sim_of(p), est.tau_cli_of(k))


def lead_steps(est: PerfEstimator, k: int, p: int = 0) -> int:
    """Output steps the analysis covers while one restart latency elapses."""
    return _ceil(est.alpha_sim(p) / processing_time(est, k, p)) * k


def forward_length(est: PerfEstimator, ctx, k: int, p: int = 0) -> int:
    """Re-simulation length n that masks the next restart latency."""
    raw = _ceil(est.alpha_sim(p) / processing_time(est, k, p) + 2) * k
    return ceil_to_multiple(raw, ctx.steps_per_restart)


def prefetch_step(est: PerfEstimator, d_i: int, n: int, k: int, p: int = 0) -> int:
    """Key at which the next re-simulation must start (forward direction)."""
    return max(d_i + n - lead_steps(est, k, p), d_i + 2 * k)


def forward_fanout(est: PerfEstimator, ctx, k: int, current_s: int = 1, p: int = 0) -> int:
    """Number of parallel re-simulations for the next prefetching step."""
    tau_cli = est.tau_cli_of(k)
    tau_sim = est.tau_sim_of(p)
    if tau_cli >= k * tau_sim:
        return 1
    s_opt = _ceil(k * tau_sim / tau_cli) if tau_cli > 0 else ctx.s_max
    return max(1, min(s_opt, ctx.s_max, 2 * current_s))


def analysis_faster(est: PerfEstimator, k: int, p: int = 0) -> bool:
    return est.tau_cli_of(k) / k < est.tau_sim_of(p)


def escalate_parallelism(est: PerfEstimator, ctx, p: int, k: int = 1) -> int:
    """Parallelism level for the next re-simulation (strategy 1)."""
    if p >= ctx.max_parallelism_level or not analysis_faster(est, k, p):
        return p
    if p > 0:
        if not est.has("tau_sim", p):
            return p
        if est.has("tau_sim", p - 1) and \
                est.tau_sim_of(p) >= ESCALATION_GAIN * est.tau_sim_of(p - 1):
            return p
    return p + 1


def escalation_exhausted(est: PerfEstimator, ctx, p: int, k: int = 1) -> bool:
    """True once strategy 1 cannot help any more and fan-out should take over."""
    if p >= ctx.max_parallelism_level or not analysis_faster(est, k, p):
        return True
    if p > 0 and est.has("tau_sim", p) and est.has("tau_sim", p - 1):
        return est.tau_sim_of(p) >= ESCALATION_GAIN * est.tau_sim_of(p - 1)
    return False


def backward_block(ctx) -> int:
    per = ctx.steps_per_restart
    return ceil_to_multiple(ctx.backward_block, per) if ctx.backward_block else per


def backward_plan(est: PerfEstimator, ctx, k: int, d_i: int, p: int = 0) -> PrefetchPlan:
    """Plan the re-simulations below ``d_i``, the first key of the current block.

    ``d_i`` must sit on a restart boundary; jobs are returned from the
    highest range downwards.
    """
    per = ctx.steps_per_restart
    alpha, tau_sim, tau_cli = est.alpha_sim(p), est.tau_sim_of(p), est.tau_cli_of(k)
    if tau_cli > k * tau_sim:
        n = ceil_to_multiple(max(1, _ceil(k * alpha / (tau_cli - k * tau_sim))), per)
        s = 1
    else:
        n = backward_block(ctx)
        if tau_cli <= 0:
            s = ctx.s_max
        else:
            s = _ceil(k * alpha / (n * tau_cli) + k * tau_sim / tau_cli)
        s = max(1, min(s, ctx.s_max))
    jobs = []
    top = d_i - 1
    for _ in range(s):
        if top < 0:
            break
        start = max(0, top - n + 1)
        jobs.append((start, top, p))
        top = start - 1
    step = jobs[0][1] if jobs else None
    return PrefetchPlan(jobs=jobs, prefetch_step=step, n=n, s=len(jobs), direction=BACKWARD)


def pollution_check(was_prefetched: bool, on_disk: bool) -> str:
    """A prefetched step that is gone when first accessed was evicted unused."""
    return POLLUTION if was_prefetched and not on_disk else OK


def kill_candidates(jobs: Iterable, agent_id, has_waiters: Callable) -> list:
    """Running prefetched jobs of ``agent_id`` that nobody is waiting for."""
    return [j for j in jobs
            if j.owner == agent_id and j.prefetched and j.active and not has_waiters(j)]


@dataclass
class WarmupTimes:
    t_pre_fw: float
    t_pre_bw: float
    t_cli_fw: float
    t_single: float
    t_lower: float


def warmup_models(alpha, tau_sim, tau_cli, k, n, s, steps_per_restart, d_offset, m,
                  s_max) -> WarmupTimes:
    """Closed-form warm-up and completion-time models.

    ``d_offset`` is the distance of the first backward access from its
    restart step; ``m`` the number of accessed output steps.
    """
    t_pre_fw = alpha + max(2 * tau_sim + alpha, steps_per_restart * tau_sim) + n * tau_sim
    t_pre_bw = (alpha + d_offset * tau_sim + tau_cli
                + max(tau_cli * (d_offset - 1), alpha + n * tau_sim))
    t_cli_fw = t_pre_fw + (m - n) * tau_sim / s
    return WarmupTimes(
        t_pre_fw=t_pre_fw,
        t_pre_bw=t_pre_bw,
        t_cli_fw=t_cli_fw,
        t_single=alpha + m * tau_sim,
        t_lower=alpha + m * tau_sim / s_max,
    )


@dataclass
class PrefetchAgent:
    """Per-client pattern detector and planner state."""

    agent_id: object
    ctx: object
    pattern: AccessPattern = field(default_factory=AccessPattern)
    level: int = 0
    current_s: int = 1
    frontier: Optional[int] = None
    next_step: Optional[int] = None
    resets: int = 0
    # keys produced by this agent's prefetched jobs and not yet accessed
    prefetched: set = field(default_factory=set)

    def reset(self):
        """Drop all planning state (the pattern restarts from the last access)."""
        self.level = 0
        self.current_s = 1
        self.frontier = None
        self.next_step = None
        self.prefetched.clear()
        self.resets += 1

    @property
    def planning(self) -> bool:
        return self.frontier is not None

    def observe(self, key: int, now: float) -> bool:
        """Feed one access; returns True if it reset the agent."""
        pat = self.pattern
        if pat.last_key is None:
            pat.last_key, pat.last_time = key, now
            return False
        stride = key - pat.last_key
        if stride == 0:
            pat.last_time = now
            return False
        did_reset = False
        if pat.signed_stride is None or stride != pat.signed_stride:
            if pat.signed_stride is not None:
                self.reset()
                did_reset = True
            pat.signed_stride = stride
            pat.stride = abs(stride)
            pat.direction = UNKNOWN
            pat.confirmed = False
        else:
            pat.confirmed = True
            pat.direction = FORWARD if stride > 0 else BACKWARD
        pat.prev_key, pat.prev_time = pat.last_key, pat.last_time
        pat.last_key, pat.last_time = key, now
        return did_reset

    def on_access(self, key: int, est: PerfEstimator,
                  serving: Optional[tuple]) -> Optional[PrefetchPlan]:
        """Plan to issue after an access to ``key``, if one is due.

        ``serving`` is the (start, stop) range of the re-simulation that
        produces ``key`` (or the key's default interval when it is cached),
        or None when the key is missing and nothing will produce it.
        """
        pat = self.pattern
        if not pat.confirmed or not self.ctx.prefetch or not est.seeded():
            return None
        k = pat.stride
        if not est.has("tau_cli", k):
            return None
        if pat.direction == FORWARD:
            return self._forward(key, est, serving, k)
        return self._backward(key, est, serving, k)

    def _clip(self, jobs):
        last = self.ctx.last_key
        if last is None:
            return jobs
        return [(a, min(b, last), p) for a, b, p in jobs if a <= last]

    def _forward(self, key, est, serving, k):
        ctx = self.ctx
        if self.frontier is None:
            if serving is None:
                # nothing will produce this key yet: the plan starts at its restart step
                per = ctx.steps_per_restart
                self.frontier = key // per * per
                self.next_step = key
            else:
                start, stop = serving
                self.frontier = stop + 1
                # the first plan may be due already at the confirming access
                self.next_step = max(key, stop + 1 - lead_steps(est, k, self.level))
        if key < self.next_step:
            return None
        p = self.level
        if escalation_exhausted(est, ctx, p, k):
            if ctx.fanout_ramp:
                s = forward_fanout(est, ctx, k, self.current_s, p)
            else:
                s = forward_fanout(est, ctx, k, ctx.s_max, p)
        else:
            p = escalate_parallelism(est, ctx, p, k)
            s = 1
        self.level = p
        self.current_s = s
        n = forward_length(est, ctx, k, p)
        start = self.frontier
        jobs = self._clip([(start + j * n, start + (j + 1) * n - 1, p) for j in range(s)])
        self.frontier = start + s * n
        # relative to the first block: the later blocks finish at the same time and
        # are then read at client speed, faster than the lead estimate assumes
        self.next_step = prefetch_step(est, start, n, k, p)
        return PrefetchPlan(jobs=jobs, prefetch_step=self.next_step, n=n, s=s,
                            direction=FORWARD)

    def _backward(self, key, est, serving, k):
        if self.frontier is None:
            per = self.ctx.steps_per_restart
            self.frontier = serving[0] if serving else key // per * per
        elif key > self.next_step:
            return None
        if self.frontier <= 0:
            return None
        plan = backward_plan(est, self.ctx, k, self.frontier, self.level)
        if not plan.jobs:
            return None
        self.frontier = plan.jobs[-1][0]
        self.next_step = plan.prefetch_step
        self.current_s = plan.s
        return plan
