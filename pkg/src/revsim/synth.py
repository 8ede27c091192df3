"""Synthetic simulator used as a stand-in for a real re-simulation.

It waits out a restart latency, then writes one output step every
``tau_ms(level)`` milliseconds over ``[start, stop]``, notifying the daemon
after each file is complete.  File content depends only on the context
name, the key and the size, so re-simulations are bitwise reproducible.

Rates come from the context config::

    synth.alpha_ms = 130
    synth.tau_ms = 0:30, 1:20      # per parallelism level, or a single value
    synth.bytes = 4096
    synth.fail_at_key = 3          # optional failure injection
    synth.fail_before_start = 0
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

log = logging.getLogger(__name__)

HEADER = 16


def file_content(ctx_name: str, key: int, size: int) -> bytes:
    size = max(size, HEADER)
    body = hashlib.shake_256(f"{ctx_name}:{key}".encode()).digest(size - HEADER)
    return key.to_bytes(HEADER, "big") + body


def parse_level_map(text: str) -> dict[int, float]:
    text = str(text).strip()
    if ":" not in text:
        return {0: float(text)}
    out = {}
    for part in text.split(","):
        level, _, value = part.partition(":")
        out[int(level)] = float(value)
    return out


@dataclass
class SynthConfig:
    ctx: str
    storage_dir: str
    start_key: int
    stop_key: int
    level: int = 0
    alpha_ms: float = 0.0
    tau_ms: dict = field(default_factory=lambda: {0: 10.0})
    size: int = HEADER
    fail_before_start: bool = False
    fail_at_key: Optional[int] = None

    def __post_init__(self):
        if self.stop_key < self.start_key:
            raise ValueError("stop_key < start_key")
        if self.alpha_ms < 0 or any(v <= 0 for v in self.tau_ms.values()):
            raise ValueError("rates must be positive")

    def tau(self) -> float:
        """Seconds per output step at this level (nearest configured level)."""
        best = min(self.tau_ms, key=lambda q: (abs(q - self.level), q))
        return self.tau_ms[best] / 1000.0

    @classmethod
    def from_context(cls, ctx, start_key, stop_key, level=0) -> "SynthConfig":
        x = ctx.extra
        fail = x.get("synth.fail_at_key")
        return cls(
            ctx=ctx.name, storage_dir=ctx.storage_dir, start_key=start_key,
            stop_key=stop_key, level=level,
            alpha_ms=float(x.get("synth.alpha_ms", 0)),
            tau_ms=parse_level_map(x.get("synth.tau_ms", "10")),
            size=int(x.get("synth.bytes", ctx.driver.output_step_bytes)),
            fail_before_start=x.get("synth.fail_before_start", "0").lower() in ("1", "true", "yes"),
            fail_at_key=int(fail) if fail not in (None, "") else None,
        )


def write_step(path: str, content: bytes):
    tmp = f"{path}.{os.getpid()}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(content)
    os.replace(tmp, path)


def run(cfg: SynthConfig, filename_of, notifier=None, launched_at: Optional[float] = None,
        sleep=time.sleep, clock=time.monotonic) -> int:
    """Produce the configured range; returns the process exit code.

    ``notifier`` has ``sim_created(name)`` and ``sim_closed(name, size)``.
    ``launched_at`` (a ``time.time()`` stamp) lets process start-up count
    towards the restart latency.
    """
    if cfg.fail_before_start:
        return 3
    wait = cfg.alpha_ms / 1000.0
    if launched_at is not None:
        wait -= max(0.0, time.time() - launched_at)
    if wait > 0:
        sleep(wait)
    tau = cfg.tau()
    os.makedirs(cfg.storage_dir, exist_ok=True)
    first = True
    for key in range(cfg.start_key, cfg.stop_key + 1):
        if cfg.fail_at_key is not None and key >= cfg.fail_at_key:
            return 4
        name = filename_of(key)
        if first and notifier is not None:
            notifier.sim_created(name)
        first = False
        t0 = clock()
        content = file_content(cfg.ctx, key, cfg.size)
        left = tau - (clock() - t0)
        if left > 0:
            sleep(left)
        write_step(os.path.join(cfg.storage_dir, name), content)
        if notifier is not None:
            notifier.sim_closed(name, len(content))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="synth-sim", description=__doc__.splitlines()[0])
    ap.add_argument("--config", "--ctx", dest="config", required=True, help="context config file")
    ap.add_argument("--start", type=int, required=True)
    ap.add_argument("--stop", type=int, required=True)
    ap.add_argument("--level", type=int, default=0)
    ap.add_argument("--job", type=int, default=None)
    ap.add_argument("--addr", default=None)
    ap.add_argument("--offline", action="store_true", help="write files without a daemon")
    args = ap.parse_args(argv)

    from .core import filename_of, load_context

    ctx = load_context(args.config)
    cfg = SynthConfig.from_context(ctx, args.start, args.stop, args.level)
    handle = None
    if not args.offline:
        from .client import ClientHandle

        job = args.job if args.job is not None else os.environ.get("REVSIM_JOB")
        handle = ClientHandle(ctx.name, args.addr or os.environ.get("REVSIM_ADDR"),
                              role="simulator", job=int(job) if job is not None else None)
    launched = os.environ.get("REVSIM_LAUNCH_TS")
    try:
        code = run(cfg, lambda k: filename_of(ctx, k), handle,
                   launched_at=float(launched) if launched else None)
    finally:
        if handle is not None:
            handle.finalize()
    return code


if __name__ == "__main__":
    sys.exit(main())
