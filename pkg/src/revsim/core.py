"""Simulation contexts, step arithmetic and context config parsing.

A context describes one simulator configuration: how many timesteps go into
an output step (``delta_d``), how many between restart steps (``delta_r``),
where its output lives and how big that storage area may grow.  Output steps
are addressed by an integer key ``i`` (the index of output step d_i).
"""
from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from typing import Optional

POLICIES = ("LRU", "LIRS", "ARC", "BCL", "DCL")

_PLACEHOLDER = re.compile(r"\{key:(\d+)\}")


class PatternError(ValueError):
    pass


class ConfigError(ValueError):
    """Raised by :func:`parse_context_config`; ``errors`` holds (line, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(
            f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors))


@dataclass(frozen=True)
class DriverSpec:
    out_pattern: str
    job_template: str
    checksum_cmd: Optional[str] = None
    output_step_bytes: int = 1
    restart_step_bytes: int = 1

    def __post_init__(self):
        _compile_pattern(self.out_pattern)

    @property
    def key_width(self) -> int:
        return _compile_pattern(self.out_pattern)[0]


def _compile_pattern(pattern: str):
    found = _PLACEHOLDER.findall(pattern)
    if len(found) != 1 or pattern.count("{") != 1 or pattern.count("}") != 1:
        raise PatternError(
            f"pattern {pattern!r} must contain exactly one {{key:WIDTH}} placeholder")
    width = int(found[0])
    if not 1 <= width <= 18:
        raise PatternError(f"key width {width} outside [1, 18]")
    head, tail = _PLACEHOLDER.split(pattern)[0], _PLACEHOLDER.split(pattern)[2]
    regex = re.compile(re.escape(head) + r"(\d{%d})" % width + re.escape(tail) + r"\Z")
    return width, head, tail, regex


@dataclass(frozen=True)
class SimulationContext:
    name: str
    delta_d: int
    delta_r: int
    storage_dir: str
    capacity_bytes: int
    driver: DriverSpec
    policy: str = "DCL"
    max_parallelism_level: int = 0
    s_max: int = 1
    ema_alpha: float = 0.5
    checksum_db: Optional[str] = None
    upstream: Optional[str] = None
    prefetch: bool = True
    # start fan-out at s=1 and double per prefetching step instead of going to s_opt directly
    fanout_ramp: bool = False
    # backward prefetch job length in output steps; 0 means one restart interval
    backward_block: int = 0
    # last valid output key of the timeline, None when unbounded
    last_key: Optional[int] = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        problems = validate_context(self)
        if problems:
            raise ConfigError([(0, p) for p in problems])
        # frozen dataclass: cache the compiled pattern on the instance
        object.__setattr__(self, "_pattern", _compile_pattern(self.driver.out_pattern))

    @property
    def steps_per_restart(self) -> int:
        """Output steps per restart interval (Δr/Δd)."""
        return self.delta_r // self.delta_d

    def replace(self, **changes) -> "SimulationContext":
        return dataclasses.replace(self, **changes)

    def path_of(self, key: int) -> str:
        return os.path.join(self.storage_dir, filename_of(self, key))


def validate_context(ctx: SimulationContext) -> list[str]:
    problems = []
    if not isinstance(ctx.delta_d, int) or ctx.delta_d <= 0:
        problems.append("delta_d must be a positive integer")
    if not isinstance(ctx.delta_r, int) or ctx.delta_r <= 0:
        problems.append("delta_r must be a positive integer")
    elif isinstance(ctx.delta_d, int) and ctx.delta_d > 0 and ctx.delta_r % ctx.delta_d:
        problems.append("delta_r not a multiple of delta_d")
    if ctx.capacity_bytes <= 0:
        problems.append("capacity_bytes must be > 0")
    if ctx.s_max < 1:
        problems.append("s_max must be >= 1")
    if ctx.max_parallelism_level < 0:
        problems.append("max_parallelism_level must be >= 0")
    if not 0 < ctx.ema_alpha <= 1:
        problems.append("ema_alpha must be in (0, 1]")
    if ctx.policy not in POLICIES:
        problems.append(f"unknown policy {ctx.policy!r}")
    if ctx.backward_block < 0:
        problems.append("backward_block must be >= 0")
    return problems


def key_of(ctx: SimulationContext, filename) -> Optional[int]:
    """Key of an output-step filename, or None when the name does not match."""
    m = ctx._pattern[3].match(os.path.basename(os.fspath(filename)))
    if m is None:
        return None
    return int(m.group(1))


def filename_of(ctx: SimulationContext, k: int) -> str:
    width, head, tail, _ = ctx._pattern
    if k < 0:
        raise ValueError(f"negative key {k}")
    digits = f"{k:0{width}d}"
    if len(digits) > width:
        raise PatternError(f"key {k} does not fit in {width} digits")
    return head + digits + tail


def restart_of(ctx: SimulationContext, k: int) -> int:
    """Index of the closest restart step at or before output step k."""
    return (k * ctx.delta_d) // ctx.delta_r


def resim_interval(ctx: SimulationContext, k: int) -> tuple[int, int]:
    """Default re-simulation range (first, last) covering output step k."""
    per = ctx.steps_per_restart
    first = restart_of(ctx, k) * per
    return first, first + per - 1


def miss_cost(ctx: SimulationContext, k: int) -> int:
    """Output steps a re-simulation must produce to materialize d_k (>= 1)."""
    return k - restart_of(ctx, k) * ctx.steps_per_restart + 1


# --- config files ----------------------------------------------------------

_INT_FIELDS = {"delta_d", "delta_r", "capacity_bytes", "max_parallelism_level", "s_max",
               "output_step_bytes", "restart_step_bytes", "backward_block", "last_key"}
_FLOAT_FIELDS = {"ema_alpha"}
_BOOL_FIELDS = {"prefetch", "fanout_ramp"}
_STR_FIELDS = {"name", "storage_dir", "policy", "out_pattern", "job_template",
               "checksum_cmd", "checksum_db", "upstream"}
_REQUIRED = ("name", "delta_d", "delta_r", "storage_dir", "capacity_bytes",
             "out_pattern", "job_template")
_DRIVER_FIELDS = ("out_pattern", "job_template", "checksum_cmd",
                  "output_step_bytes", "restart_step_bytes")


def parse_kv_lines(text: str):
    """Yield (lineno, key, value) from flat ``key = value`` text; ``#`` starts a comment."""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            yield lineno, None, line
            continue
        key, value = line.split("=", 1)
        yield lineno, key.strip(), value.strip()


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_context_config(text: str, base_dir: Optional[str] = None) -> SimulationContext:
    """Parse a context config file.

    Keys with a dotted prefix (``synth.alpha_ms``) are kept verbatim in
    ``extra`` for other tools.  All problems are collected and raised together
    as a :class:`ConfigError` carrying line numbers.
    """
    errors = []
    values = {}
    lines = {}
    extra = {}
    for lineno, key, value in parse_kv_lines(text):
        if key is None:
            errors.append((lineno, f"expected 'key = value', got {value!r}"))
            continue
        if "." in key:
            extra[key] = value
            continue
        lines[key] = lineno
        try:
            if key in _INT_FIELDS:
                values[key] = int(value)
            elif key in _FLOAT_FIELDS:
                values[key] = float(value)
            elif key in _BOOL_FIELDS:
                values[key] = _parse_bool(value)
            elif key in _STR_FIELDS:
                values[key] = value
            else:
                errors.append((lineno, f"unknown field {key!r}"))
        except ValueError as exc:
            errors.append((lineno, f"{key}: {exc}"))

    for key in _REQUIRED:
        if key not in values and not any(ln for ln, m in errors if m.startswith(key + ":")):
            errors.append((0, f"missing field {key!r}"))

    def err(field_name, msg):
        errors.append((lines.get(field_name, 0), msg))

    dd, dr = values.get("delta_d"), values.get("delta_r")
    if dd is not None and dd <= 0:
        err("delta_d", "delta_d must be a positive integer")
    if dr is not None and dr <= 0:
        err("delta_r", "delta_r must be a positive integer")
    if dd and dr and dd > 0 and dr > 0 and dr % dd:
        err("delta_r", "delta_r not a multiple of delta_d")
    if "ema_alpha" in values and not 0 < values["ema_alpha"] <= 1:
        err("ema_alpha", "ema_alpha out of range (0, 1]")
    if "capacity_bytes" in values and values["capacity_bytes"] <= 0:
        err("capacity_bytes", "capacity_bytes must be > 0")
    if "s_max" in values and values["s_max"] < 1:
        err("s_max", "s_max must be >= 1")
    if "policy" in values:
        values["policy"] = values["policy"].upper()
        if values["policy"] not in POLICIES:
            err("policy", f"unknown policy {values['policy']!r}")
    if "out_pattern" in values:
        try:
            _compile_pattern(values["out_pattern"])
        except PatternError as exc:
            err("out_pattern", str(exc))
    if errors:
        raise ConfigError(sorted(errors))

    driver = DriverSpec(**{k: values.pop(k) for k in _DRIVER_FIELDS if k in values})
    if base_dir and not os.path.isabs(values["storage_dir"]):
        values["storage_dir"] = os.path.join(base_dir, values["storage_dir"])
    return SimulationContext(driver=driver, extra=extra, **values)


def load_context(path) -> SimulationContext:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        ctx = parse_context_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))
    ctx.extra.setdefault("config_path", os.path.abspath(path))
    return ctx


def load_context_dir(directory) -> dict[str, SimulationContext]:
    contexts = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".ctx") or name.endswith(".conf"):
            ctx = load_context(os.path.join(directory, name))
            contexts[ctx.name] = ctx
    return contexts


def format_context_config(ctx: SimulationContext) -> str:
    """Inverse of :func:`parse_context_config` (defaults included)."""
    out = []
    for f in dataclasses.fields(ctx):
        if f.name in ("driver", "extra"):
            continue
        v = getattr(ctx, f.name)
        if v is None:
            continue
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    for f in dataclasses.fields(ctx.driver):
        v = getattr(ctx.driver, f.name)
        if v is not None:
            out.append(f"{f.name} = {v}")
    for k, v in ctx.extra.items():
        if "." in k:
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"
