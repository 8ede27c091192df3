"""Online estimates of restart latency, production rate and client pace."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


class UnseededError(LookupError):
    """An estimate was requested before any observation was recorded."""


class Ema:
    """Exponential moving average; the first observation seeds it directly."""

    __slots__ = ("alpha", "value", "count", "lo", "hi")

    def __init__(self, alpha: float):
        self.alpha = alpha
        self.value: Optional[float] = None
        self.count = 0
        self.lo = self.hi = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = float(x)
            self.lo = self.hi = x
        else:
            self.value = self.alpha * x + (1.0 - self.alpha) * self.value
            self.lo, self.hi = min(self.lo, x), max(self.hi, x)
        self.count += 1
        return self.value

    def __repr__(self):
        return f"Ema(alpha={self.alpha}, value={self.value}, n={self.count})"


@dataclass
class JobView:
    """What the estimator needs to know about a running re-simulation."""

    start_key: int
    stop_key: int
    level: int
    launched_at: float
    last_key: Optional[int] = None     # highest key produced so far
    last_at: Optional[float] = None    # when it was produced


@dataclass
class PerfEstimator:
    ema_alpha: float = 0.5
    alpha: dict = field(default_factory=dict)      # level -> Ema of restart latency
    tau_sim: dict = field(default_factory=dict)    # level -> Ema of inter-production time
    tau_cli: dict = field(default_factory=dict)    # stride -> Ema of inter-access time
    # (observed restart latency, estimate in force when the job was launched)
    alpha_history: list = field(default_factory=list)

    def _ema(self, table, key):
        ema = table.get(key)
        if ema is None:
            ema = table[key] = Ema(self.ema_alpha)
        return ema

    def record_restart_latency(self, p: int, seconds: float,
                               predicted: Optional[float] = None) -> float:
        if seconds < 0:
            raise ValueError("negative restart latency")
        if predicted is not None:
            self.alpha_history.append((seconds, predicted))
        return self._ema(self.alpha, p).update(seconds)

    def record_production(self, p: int, seconds: float) -> float:
        return self._ema(self.tau_sim, p).update(seconds)

    def record_client_access(self, k: int, seconds: float) -> float:
        if k < 1:
            raise ValueError("stride must be >= 1")
        return self._ema(self.tau_cli, k).update(seconds)

    @staticmethod
    def _lookup(table, key, what):
        ema = table.get(key)
        if ema is not None and ema.value is not None:
            return ema.value
        seeded = [(abs(k - key), k) for k, e in table.items() if e.value is not None]
        if not seeded:
            raise UnseededError(f"no {what} observation yet")
        return table[min(seeded)[1]].value

    def alpha_sim(self, p: int = 0) -> float:
        return self._lookup(self.alpha, p, "restart latency")

    def tau_sim_of(self, p: int = 0) -> float:
        return self._lookup(self.tau_sim, p, "production time")

    def tau_cli_of(self, k: int = 1) -> float:
        return self._lookup(self.tau_cli, k, "client access time")

    def has(self, what: str, key: int = 0) -> bool:
        table = getattr(self, what)
        ema = table.get(key)
        return ema is not None and ema.value is not None

    def seeded(self) -> bool:
        return any(e.value is not None for e in self.alpha.values()) and \
            any(e.value is not None for e in self.tau_sim.values())

    def t_sim(self, n: int, p: int = 0) -> float:
        """Time to restart and produce n output steps at parallelism level p."""
        if n < 0:
            raise ValueError("n must be >= 0")
        return self.alpha_sim(p) + n * self.tau_sim_of(p)

    def estimated_wait(self, miss_steps: int, job: Optional[JobView] = None,
                       key: Optional[int] = None, now: float = 0.0,
                       on_disk: bool = False, p: int = 0) -> float:
        """Seconds until output step ``key`` is available.

        ``miss_steps`` is the miss cost used when no running job covers the
        key; ``job`` is the running job that will produce it, if any.
        """
        if on_disk:
            return 0.0
        if job is None:
            return self.t_sim(miss_steps, p)
        tau = self.tau_sim_of(job.level)
        if job.last_key is None:
            left_alpha = max(0.0, self.alpha_sim(job.level) - (now - job.launched_at))
            return left_alpha + (key - job.start_key + 1) * tau
        steps = key - job.last_key
        return max(0.0, steps * tau - (now - job.last_at))

    def snapshot(self) -> dict:
        out = {}
        for name in ("alpha", "tau_sim", "tau_cli"):
            for k, e in sorted(getattr(self, name).items()):
                if e.value is not None:
                    out[f"{name}.{k}"] = round(e.value, 6)
        return out


def estimation_error_delay(history) -> float:
    """Extra analysis delay caused by underestimated restart latencies."""
    return sum(max(0.0, actual - estimate) for actual, estimate in history)
