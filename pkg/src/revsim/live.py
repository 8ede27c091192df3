"""Live replay: real daemon, real synthetic-simulator processes, real clients.

Times here are wall-clock seconds.  Presets express paper seconds and scale
them by 1/1000 (milliseconds) so runs fit on a desk.
"""
from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .client import ClientHandle
from .core import filename_of, format_context_config, load_context
from .replay import Metrics

SYNTH_TEMPLATE = ("{python} -m revsim.synth --config {config} --start {start_key} "
                  "--stop {stop_key} --level {parallelism} --job {job_id} --addr {addr}")


def synth_context(directory, name: str, delta_d: int, delta_r: int, alpha_ms: float,
                  tau_ms, capacity_steps: int = 10_000, step_bytes: int = 64,
                  s_max: int = 1, max_parallelism_level: int = 0, prefetch: bool = True,
                  last_key: Optional[int] = None, **extra):
    """Write a context config driving the synthetic simulator and load it."""
    from .core import DriverSpec, SimulationContext

    os.makedirs(directory, exist_ok=True)
    storage = os.path.join(directory, f"{name}.store")
    if isinstance(tau_ms, dict):
        tau_text = ", ".join(f"{k}:{v}" for k, v in sorted(tau_ms.items()))
    else:
        tau_text = str(tau_ms)
    ctx = SimulationContext(
        name=name, delta_d=delta_d, delta_r=delta_r, storage_dir=storage,
        capacity_bytes=capacity_steps * step_bytes,
        driver=DriverSpec(f"{name}_{{key:06}}.out", SYNTH_TEMPLATE,
                          output_step_bytes=step_bytes, restart_step_bytes=step_bytes),
        s_max=s_max, max_parallelism_level=max_parallelism_level, prefetch=prefetch,
        last_key=last_key,
        extra={"synth.alpha_ms": str(alpha_ms), "synth.tau_ms": tau_text,
               "synth.bytes": str(step_bytes),
               **{f"synth.{k}": str(v) for k, v in extra.items()}},
    )
    path = os.path.join(directory, f"{name}.ctx")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_context_config(ctx))
    return load_context(path)


@dataclass
class LiveClient:
    keys: Sequence[int]
    tau_cli: float = 0.0          # seconds of processing per accessed step
    start: float = 0.0


def _client_loop(ctx, addr, spec: LiveClient, t0: float, out: dict, timeout: float):
    delay = t0 + spec.start - time.monotonic()
    if delay > 0:
        time.sleep(delay)
    waits, failures = [], 0
    with ClientHandle(ctx.name, addr) as h:
        begin = time.monotonic()
        for k in spec.keys:
            name = filename_of(ctx, k)
            t = time.monotonic()
            st = h.acquire([name], timeout=timeout)
            waits.append(time.monotonic() - t)
            if st.error:
                failures += 1
                continue
            if spec.tau_cli > 0:
                time.sleep(spec.tau_cli)
            h.release([name])
        out.update(begin=begin, end=time.monotonic(), waits=waits, failures=failures)


def replay_live(ctx, clients, daemon=None, timeout: float = 120.0) -> Metrics:
    """Drive ``clients`` (LiveClient or key lists) against a daemon for ``ctx``.

    A private daemon is started (and stopped) when none is given.
    """
    from .daemon import Daemon

    clients = [c if isinstance(c, LiveClient) else LiveClient(list(c)) for c in clients]
    own = daemon is None
    if own:
        daemon = Daemon([ctx]).start()
    try:
        results = [dict() for _ in clients]
        t0 = time.monotonic()
        threads = [threading.Thread(target=_client_loop,
                                    args=(ctx, daemon.addr, c, t0, r, timeout), daemon=True)
                   for c, r in zip(clients, results)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout)
        m = Metrics()
        for r in results:
            if not r:
                raise RuntimeError("a live client did not finish")
            m.waits.extend(r["waits"])
            m.failures += r["failures"]
        m.completion = max(r["end"] for r in results) - min(r["begin"] for r in results)
        cs = daemon.call(lambda: daemon.dv.contexts[ctx.name])
        stats = daemon.call(cs.cache.snapshot_stats)
        m.hits, m.misses, m.evictions = stats["hits"], stats["misses"], stats["evictions"]
        jobs = daemon.call(lambda: [j for j in daemon.dv.jobs.values() if j.ctx == ctx.name])
        m.restarts = sum(1 for j in jobs if j.launched_at is not None)
        m.steps = sum(0 if j.last_key is None else j.last_key - j.start_key + 1 for j in jobs)
        m.alpha = daemon.call(lambda: dict(cs.perf.snapshot()))
        return m
    finally:
        if own:
            daemon.stop()
