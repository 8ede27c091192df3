"""Dollar cost of keeping simulation output available for analysis.

Three ways to serve a set of analyses over an availability period of
``dt`` months:

* on-disk: run the simulation once and keep every output step,
* in-situ: re-run the simulation alongside every analysis, keep nothing,
* virtualized: keep restart steps plus a cache of ``M`` output steps and
  re-simulate the ``V`` steps the cache cannot serve.

Compute time is billed without restart latency.  Months are 30-day months.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core import ConfigError, parse_kv_lines

CSV_HEADER = ("dt_months", "overlap", "z", "cache_pct", "delta_r",
              "cost_ondisk", "cost_insitu", "cost_simfs", "ratio")


@dataclass(frozen=True)
class CostParams:
    c_c: float = 2.07          # $/node/hour
    c_s: float = 0.06          # $/GiB/month
    s_o: float = 6.0           # GiB per output step
    s_r: float = 36.0          # GiB per restart step
    delta_d: int = 15
    delta_r: int = 1440        # 8 h of 20 s timesteps
    n: int = 128000            # timesteps
    P: int = 100               # re-simulation nodes
    N: int = 100               # initial simulation nodes
    tau_sim: float = 20.0      # seconds per output step at P (and N) nodes
    M: int = 0                 # cached output steps

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "M":
                if v < 0:
                    raise ValueError("M must be >= 0")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.delta_r % self.delta_d:
            raise ValueError("delta_r not a multiple of delta_d")

    @property
    def n_o(self) -> int:
        return self.n // self.delta_d

    @property
    def n_r(self) -> int:
        return self.n // self.delta_r

    @property
    def steps_per_restart(self) -> int:
        return self.delta_r // self.delta_d

    def with_cache_fraction(self, fraction: float) -> "CostParams":
        return dataclasses.replace(self, M=int(self.n_o * fraction))

    def replace(self, **changes) -> "CostParams":
        return dataclasses.replace(self, **changes)


@dataclass
class AnalysisWorkload:
    """Forward analyses: analysis j reads ``lengths[j]`` steps from ``starts[j]``."""

    starts: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    overlap: float = 0.0       # percent of accesses interleaved with other analyses
    dt_months: float = 12.0

    def __post_init__(self):
        if len(self.starts) != len(self.lengths):
            raise ValueError("starts and lengths differ in length")
        if any(x < 0 for x in self.lengths) or any(x < 0 for x in self.starts):
            raise ValueError("negative start or length")
        if not 0 <= self.overlap <= 100:
            raise ValueError("overlap must be in [0, 100]")

    @property
    def z(self) -> int:
        return len(self.starts)

    def __add__(self, other: "AnalysisWorkload") -> "AnalysisWorkload":
        return AnalysisWorkload(self.starts + other.starts, self.lengths + other.lengths,
                                self.overlap, self.dt_months)


def c_sim(params: CostParams, O: float, P: Optional[int] = None) -> float:
    """Compute cost of producing O output steps on P nodes."""
    if O < 0:
        raise ValueError("O must be >= 0")
    P = params.P if P is None else P
    return O * (params.tau_sim / 3600.0) * P * params.c_c


def c_store(params: CostParams, F: float, m: float, dt: float) -> float:
    """Cost of keeping F files of m GiB for dt months."""
    if F < 0 or m < 0 or dt < 0:
        raise ValueError("F, m and dt must be >= 0")
    return F * m * dt * params.c_s


def cost_on_disk(params: CostParams, dt: float) -> float:
    return c_sim(params, params.n_o, params.N) + c_store(params, params.n_o, params.s_o, dt)


def cost_in_situ(params: CostParams, workload: AnalysisWorkload) -> float:
    return sum(c_sim(params, i + n, params.P)
               for i, n in zip(workload.starts, workload.lengths))


def cost_simfs(params: CostParams, dt: float, V: float) -> float:
    if V < 0:
        raise ValueError("V must be >= 0")
    return (c_sim(params, params.n_o, params.P)
            + c_store(params, params.n_r, params.s_r, dt)
            + c_store(params, params.M, params.s_o, dt)
            + c_sim(params, V, params.P))


def cost_row(params: CostParams, workload: AnalysisWorkload, dt: float, V: float,
             cache_pct: float) -> dict:
    on_disk = cost_on_disk(params, dt)
    in_situ = cost_in_situ(params, workload)
    simfs = cost_simfs(params, dt, V)
    return {
        "dt_months": dt, "overlap": workload.overlap, "z": workload.z,
        "cache_pct": cache_pct, "delta_r": params.delta_r,
        "cost_ondisk": round(on_disk, 2), "cost_insitu": round(in_situ, 2),
        "cost_simfs": round(simfs, 2),
        "ratio": round(min(on_disk, in_situ) / simfs, 6) if simfs else float("inf"),
    }


# --- sweeps -------------------------------------------------------------------

@dataclass
class Scenario:
    """Grid of a cost experiment; every list is one sweep axis."""

    params: CostParams = field(default_factory=CostParams)
    dt_months: list = field(default_factory=lambda: [1, 6, 12, 24, 36, 48, 60])
    overlap: list = field(default_factory=lambda: [50.0])
    z: list = field(default_factory=lambda: [100])
    cache_pct: list = field(default_factory=lambda: [25.0])
    delta_r: list = field(default_factory=lambda: [1440])
    length_min: int = 100
    length_max: int = 400
    policy: str = "DCL"
    seed: int = 0

    def grid(self):
        return itertools.product(self.delta_r, self.cache_pct, self.z, self.overlap,
                                 self.dt_months)


def sweep(scenario: Scenario, make_workload: Callable, resim_steps: Callable,
          sink=None) -> list[dict]:
    """Evaluate every grid point.

    ``make_workload(params, z, overlap, seed)`` builds the analyses and
    ``resim_steps(params, workload, policy, seed)`` returns V for them (it
    does not depend on dt, so it is computed once per remaining axes).
    Rows are written to ``sink`` (a text stream) as CSV when given.
    """
    rows = []
    memo = {}
    for delta_r, cache_pct, z, overlap, dt in scenario.grid():
        params = scenario.params.replace(delta_r=delta_r)
        params = params.with_cache_fraction(cache_pct / 100.0)
        mkey = (delta_r, cache_pct, z, overlap)
        if mkey not in memo:
            workload = make_workload(params, z, overlap, scenario.seed)
            memo[mkey] = (workload, resim_steps(params, workload, scenario.policy,
                                                scenario.seed))
        workload, V = memo[mkey]
        rows.append(cost_row(params, workload, dt, V, cache_pct))
    if sink is not None:
        write_csv(rows, sink)
    return rows


def write_csv(rows: Iterable[dict], sink):
    writer = csv.DictWriter(sink, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


_LIST_KEYS = {"dt_months": float, "overlap": float, "z": int, "cache_pct": float,
              "delta_r": int}
_PARAM_TYPES = {f.name: f.type for f in dataclasses.fields(CostParams)}


def parse_scenario(text: str) -> Scenario:
    """Flat ``key = value`` scenario file; sweep axes take comma-separated lists."""
    errors = []
    params = {}
    kwargs = {}
    for lineno, key, value in parse_kv_lines(text):
        if key is None:
            errors.append((lineno, f"expected 'key = value', got {value!r}"))
            continue
        try:
            if key in _LIST_KEYS:
                conv = _LIST_KEYS[key]
                kwargs[key] = [conv(v) for v in value.split(",") if v.strip()]
            elif key in _PARAM_TYPES:
                params[key] = float(value) if _PARAM_TYPES[key] == "float" else int(value)
            elif key in ("length_min", "length_max", "seed"):
                kwargs[key] = int(value)
            elif key == "policy":
                kwargs[key] = value.upper()
            else:
                errors.append((lineno, f"unknown field {key!r}"))
        except ValueError as exc:
            errors.append((lineno, f"{key}: {exc}"))
    if errors:
        raise ConfigError(errors)
    try:
        cp = CostParams(**params)
    except ValueError as exc:
        raise ConfigError([(0, str(exc))]) from None
    return Scenario(params=cp, **kwargs)
