"""Canned experiments behind ``revsim preset ...``.

Each preset returns its rows as dicts and can write them as CSV.  Virtual
presets are deterministic for a given seed; live presets run the daemon and
synthetic simulators in real time (paper seconds scaled to milliseconds).
"""
from __future__ import annotations

import csv
import random
import statistics
import tempfile
import time
from dataclasses import dataclass

from .core import POLICIES
from .cost import AnalysisWorkload, CostParams, Scenario, sweep
from .traces import TraceSpec, gen_clients, gen_trace, interleave

FIG4_HEADER = ("pattern", "policy", "reps", "median_steps", "median_restarts",
               "q1_steps", "q3_steps")
SCAL_HEADER = ("preset", "direction", "s_max", "m", "completion", "t_single_measured",
               "t_single", "t_lower", "t_pre_fw", "speedup", "alpha_est", "tau_est",
               "restarts", "steps")


def write_rows(rows, header, sink):
    w = csv.DictWriter(sink, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)


# --- cache policies -------------------------------------------------------------

@dataclass(frozen=True)
class Fig4Settings:
    timeline: int = 1152          # 4 days of 5-minute output steps
    steps_per_restart: int = 48   # restart every 4 hours
    cache_fraction: float = 0.25
    clients: int = 50
    length_min: int = 100
    length_max: int = 400
    reps: int = 100


def fig4(settings: Fig4Settings = Fig4Settings(), patterns=("random", "forward", "backward"),
         policies=POLICIES, seed: int = 0, fast: bool = True) -> list[dict]:
    """Median re-simulated steps and restarts per (pattern, policy)."""
    if fast:
        from .fastcache import replay_cache_fast as run
    else:
        from .replay import replay_cache

        def run(trace, per, cap, policy):
            m = replay_cache(trace, per, cap, policy)
            return m.steps, m.restarts, m.hits, m.misses, m.evictions
    cap = int(settings.timeline * settings.cache_fraction)
    rows = []
    for pattern in patterns:
        steps = {p: [] for p in policies}
        restarts = {p: [] for p in policies}
        for rep in range(settings.reps):
            spec = TraceSpec(pattern, settings.timeline, settings.clients, settings.length_min,
                             settings.length_max, 1, 0.0, seed + rep)
            trace = gen_trace(spec)
            for policy in policies:
                out = run(trace, settings.steps_per_restart, cap, policy)
                steps[policy].append(int(out[0]))
                restarts[policy].append(int(out[1]))
        for policy in policies:
            q = statistics.quantiles(steps[policy], n=4) if len(steps[policy]) > 1 else \
                [steps[policy][0]] * 3
            rows.append({"pattern": pattern, "policy": policy, "reps": settings.reps,
                         "median_steps": statistics.median(steps[policy]),
                         "median_restarts": statistics.median(restarts[policy]),
                         "q1_steps": q[0], "q3_steps": q[2]})
    return rows


# --- cost model -------------------------------------------------------------------

def cost_workload(params: CostParams, z: int, overlap: float, seed: int,
                  length_min: int = 100, length_max: int = 400) -> AnalysisWorkload:
    """``z`` forward analyses with random starts and U[length_min, length_max] lengths."""
    rng = random.Random(seed * 1_000_003 + z)
    starts, lengths = [], []
    for _ in range(z):
        length = rng.randint(length_min, length_max)
        starts.append(rng.randrange(params.n_o - length + 1))
        lengths.append(length)
    return AnalysisWorkload(starts, lengths, overlap)


def cost_resim_steps(params: CostParams, workload: AnalysisWorkload, policy: str,
                     seed: int) -> int:
    """V: output steps re-simulated when the workload runs against an empty cache."""
    from .fastcache import replay_cache_fast

    clients = [list(range(i, i + n)) for i, n in zip(workload.starts, workload.lengths)]
    trace = interleave(clients, workload.overlap)
    if not trace:
        return 0
    # a zero-size cache still holds the step being handed to the analysis
    return int(replay_cache_fast(trace, params.steps_per_restart, max(1, params.M), policy)[0])


def cost(scenario: Scenario = Scenario(), sink=None) -> list[dict]:
    def make(params, z, overlap, seed):
        return cost_workload(params, z, overlap, seed, scenario.length_min, scenario.length_max)
    return sweep(scenario, make, cost_resim_steps, sink)


# --- live scalability and latency ------------------------------------------------------

@dataclass(frozen=True)
class LivePreset:
    name: str
    delta_d: int
    delta_r: int
    alpha_ms: float
    tau_ms: float
    m: int
    tau_cli_ms: float = 0.0


COSMO = LivePreset("cosmo", 5, 60, 130.0, 30.0, 72)
FLASH = LivePreset("flash", 1, 20, 70.0, 140.0, 60)


def measure_single(preset: LivePreset, alpha_ms: float) -> float:
    """Wall time of one simulation producing all m steps (no daemon)."""
    from .synth import SynthConfig, run

    with tempfile.TemporaryDirectory() as d:
        cfg = SynthConfig(preset.name, d, 0, preset.m - 1, alpha_ms=alpha_ms,
                          tau_ms={0: preset.tau_ms}, size=64)
        t = time.monotonic()
        run(cfg, lambda k: f"s_{k:06d}")
        return time.monotonic() - t


def live_run(preset: LivePreset, direction: str, s_max: int, alpha_ms=None,
             workdir=None, single=None) -> dict:
    from .live import LiveClient, replay_live, synth_context
    from .prefetch import warmup_models

    alpha_ms = preset.alpha_ms if alpha_ms is None else alpha_ms
    keys = list(range(preset.m))
    if direction == "backward":
        keys.reverse()
    with tempfile.TemporaryDirectory(dir=workdir) as d:
        ctx = synth_context(d, f"{preset.name}", preset.delta_d, preset.delta_r,
                            alpha_ms=alpha_ms, tau_ms=preset.tau_ms, s_max=s_max,
                            last_key=preset.m - 1)
        m = replay_live(ctx, [LiveClient(keys, preset.tau_cli_ms / 1000.0)])
    alpha = m.alpha.get("alpha.0", alpha_ms / 1000.0)
    tau = m.alpha.get("tau_sim.0", preset.tau_ms / 1000.0)
    per = preset.delta_r // preset.delta_d
    from .prefetch import ceil_to_multiple, _ceil
    cli = max(preset.tau_cli_ms / 1000.0, 1e-9)
    n = ceil_to_multiple(_ceil(alpha / max(tau, cli) + 2), per)
    w = warmup_models(alpha, tau, cli, 1, n, s_max, per, 0, preset.m, s_max)
    if single is None:
        single = measure_single(preset, alpha_ms)
    return {"preset": preset.name, "direction": direction, "s_max": s_max, "m": preset.m,
            "completion": round(m.completion, 4), "t_single_measured": round(single, 4),
            "t_single": round(w.t_single, 4), "t_lower": round(w.t_lower, 4),
            "t_pre_fw": round(w.t_pre_fw, 4), "speedup": round(single / m.completion, 4),
            "alpha_est": round(alpha, 4), "tau_est": round(tau, 4),
            "restarts": m.restarts, "steps": m.steps}


def scal(preset: LivePreset = COSMO, directions=("forward", "backward"),
         s_values=(1, 2, 4, 8, 16)) -> list[dict]:
    single = measure_single(preset, preset.alpha_ms)
    return [live_run(preset, d, s, single=single) for d in directions for s in s_values]


def latency(preset: LivePreset = FLASH, factors=(1, 5, 25), s_max: int = 8) -> list[dict]:
    rows = []
    for f in factors:
        a = preset.alpha_ms * f
        row = live_run(preset, "forward", s_max, alpha_ms=a, single=measure_single(preset, a))
        row["alpha_factor"] = f
        rows.append(row)
    return rows


LATENCY_HEADER = ("alpha_factor",) + SCAL_HEADER
