"""``revsim`` command line.

Every data-producing subcommand writes CSV to ``--out`` (stdout by default).
Headers:

  trace gen            client,key
  replay virtual|live  steps,restarts,hits,misses,evictions,completion,alpha_stalls,failures
  cost sweep / preset cost
                       dt_months,overlap,z,cache_pct,delta_r,cost_ondisk,cost_insitu,cost_simfs,ratio
  preset fig4          pattern,policy,reps,median_steps,median_restarts,q1_steps,q3_steps
  preset scal          preset,direction,s_max,m,completion,... (see presets.SCAL_HEADER)
  preset latency       alpha_factor,preset,direction,s_max,...
  ctx validate         file,name,ok,problems
  checksum populate    filename,digest
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys

from . import __version__

REPLAY_HEADER = ("steps", "restarts", "hits", "misses", "evictions", "completion",
                 "alpha_stalls", "failures")


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _write(rows, header, path):
    from .presets import write_rows

    with _sink(path) as fh:
        write_rows(rows, header, fh)


def _read_trace(path) -> list[tuple[int, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["client"]), int(r["key"])) for r in csv.DictReader(fh)]


def _per_client(trace) -> list[list[int]]:
    clients: dict[int, list[int]] = {}
    for c, k in trace:
        clients.setdefault(c, []).append(k)
    return [clients[c] for c in sorted(clients)]


def _level_map(text: str):
    """``0.5`` or ``0:2,1:1.2`` (parallelism level -> seconds)."""
    if ":" not in text:
        return float(text)
    from .synth import parse_level_map
    return parse_level_map(text)


# --- subcommands ------------------------------------------------------------------

def cmd_server(args):
    from .core import load_context_dir
    from .daemon import Daemon

    contexts = load_context_dir(args.contexts)
    if not contexts:
        raise SystemExit(f"no *.ctx or *.conf files in {args.contexts}")
    addr = args.addr or os.environ.get("REVSIM_ADDR", "127.0.0.1:7777")
    d = Daemon(list(contexts.values()), addr=addr, dry_run=args.dry_run,
               events_path=args.events)
    logging.getLogger(__name__).info("serving %s on %s", ", ".join(contexts), addr)
    try:
        d.run()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_ctx_validate(args):
    from .core import ConfigError, load_context, validate_context

    rows, bad = [], 0
    for path in args.files:
        try:
            ctx = load_context(path)
            problems = validate_context(ctx)
            name = ctx.name
        except ConfigError as exc:
            problems = [f"line {n}: {m}" for n, m in exc.errors]
            name = ""
        except OSError as exc:
            problems, name = [str(exc)], ""
        bad += bool(problems)
        rows.append({"file": path, "name": name, "ok": int(not problems),
                     "problems": "; ".join(problems)})
    _write(rows, ("file", "name", "ok", "problems"), args.out)
    return 1 if bad else 0


def cmd_trace_gen(args):
    from .traces import TraceSpec, gen_trace

    spec = TraceSpec(args.pattern, args.timeline, args.clients, args.length_min,
                     args.length_max, args.stride, args.overlap, args.seed)
    _write(({"client": c, "key": k} for c, k in gen_trace(spec)), ("client", "key"), args.out)
    return 0


def _metrics_row(m):
    row = m.row()
    row["alpha_stalls"] = len(m.alpha_stalls)
    row["failures"] = m.failures
    return row


def cmd_replay(args):
    from .core import load_context

    ctx = load_context(args.ctx)
    if args.s_max is not None:
        ctx = ctx.replace(s_max=args.s_max)
    if args.no_prefetch:
        ctx = ctx.replace(prefetch=False)
    trace = _read_trace(args.trace)
    if args.mode == "live":
        from .live import LiveClient, replay_live

        clients = [LiveClient(keys, args.tau_cli) for keys in _per_client(trace)]
        m = replay_live(ctx, clients)
    elif args.cache_only:
        from .replay import replay_cache

        cap = ctx.capacity_bytes // ctx.driver.output_step_bytes
        m = replay_cache(trace, ctx.steps_per_restart, cap, ctx.policy)
    else:
        from .replay import VirtualClient, replay_full

        clients = [VirtualClient(keys, args.tau_cli) for keys in _per_client(trace)]
        m, _ = replay_full(ctx, clients, _level_map(args.alpha), _level_map(args.tau))
    _write([_metrics_row(m)], REPLAY_HEADER, args.out)
    return 0


def cmd_cost_sweep(args):
    from .cost import Scenario, parse_scenario
    from .presets import cost

    if args.scenario:
        with open(args.scenario, encoding="utf-8") as fh:
            scenario = parse_scenario(fh.read())
    else:
        scenario = Scenario()
    if args.seed is not None:
        scenario.seed = args.seed
    with _sink(args.out) as fh:
        cost(scenario, fh)
    return 0


def cmd_checksum_populate(args):
    from .checksums import populate
    from .core import load_context

    ctx = load_context(args.ctx)
    db = populate(ctx, args.directory or ctx.storage_dir, args.db)
    _write(({"filename": n, "digest": d} for n, d in sorted(db.entries.items())),
           ("filename", "digest"), args.out)
    return 0


def cmd_preset(args):
    from . import presets

    seed = args.seed or 0
    if args.name == "fig4":
        settings = presets.Fig4Settings(reps=args.reps)
        _write(presets.fig4(settings, seed=seed), presets.FIG4_HEADER, args.out)
    elif args.name == "scal":
        preset = presets.FLASH if args.preset == "flash" else presets.COSMO
        rows = presets.scal(preset, tuple(args.directions.split(",")),
                            tuple(int(s) for s in args.s_values.split(",")))
        _write(rows, presets.SCAL_HEADER, args.out)
    elif args.name == "latency":
        preset = presets.COSMO if args.preset == "cosmo" else presets.FLASH
        rows = presets.latency(preset, tuple(float(f) for f in args.factors.split(",")),
                               s_max=args.s_max)
        _write(rows, presets.LATENCY_HEADER, args.out)
    else:
        from .cost import Scenario
        scenario = Scenario(dt_months=[1, 6, 12, 24, 36, 48, 60],
                            z=[1, 5, 10, 20, 30, 50, 100], seed=seed)
        with _sink(args.out) as fh:
            presets.cost(scenario, fh)
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="revsim", description="Simulation data virtualizer tools.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def out_flags(p, seed=True):
        p.add_argument("--out", default=None, help="output CSV (default stdout)")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("server", help="run the daemon")
    p.add_argument("contexts", help="directory of context configs")
    p.add_argument("--addr", default=None, help="host:port (default $REVSIM_ADDR or 127.0.0.1:7777)")
    p.add_argument("--dry-run", action="store_true", help="log job commands instead of running them")
    p.add_argument("--events", default=None, help="append EVT lines to this file")
    p.set_defaults(fn=cmd_server)

    ctx = sub.add_parser("ctx").add_subparsers(dest="ctx_command", required=True)
    p = ctx.add_parser("validate", help="check context config files")
    p.add_argument("files", nargs="+")
    out_flags(p, seed=False)
    p.set_defaults(fn=cmd_ctx_validate)

    tr = sub.add_parser("trace").add_subparsers(dest="trace_command", required=True)
    p = tr.add_parser("gen", help="generate a synthetic access trace")
    p.add_argument("--pattern", default="forward", choices=("forward", "backward", "random", "mixed"))
    p.add_argument("--timeline", type=int, default=1152)
    p.add_argument("--clients", type=int, default=1)
    p.add_argument("--length-min", type=int, default=100)
    p.add_argument("--length-max", type=int, default=400)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_trace_gen)

    p = sub.add_parser("replay", help="replay a trace on a virtual clock or live")
    p.add_argument("mode", choices=("virtual", "live"))
    p.add_argument("ctx", help="context config file")
    p.add_argument("trace", help="trace CSV (client,key)")
    p.add_argument("--cache-only", action="store_true", help="virtual: cache replay without timing")
    p.add_argument("--alpha", default="2", help="virtual: restart latency, seconds or level map")
    p.add_argument("--tau", default="1", help="virtual: seconds per output step, or level map")
    p.add_argument("--tau-cli", type=float, default=0.0, help="analysis seconds per step")
    p.add_argument("--s-max", type=int, default=None)
    p.add_argument("--no-prefetch", action="store_true")
    out_flags(p)
    p.set_defaults(fn=cmd_replay)

    cs = sub.add_parser("cost").add_subparsers(dest="cost_command", required=True)
    p = cs.add_parser("sweep", help="cost-model sweep")
    p.add_argument("scenario", nargs="?", default=None, help="scenario config file")
    out_flags(p)
    p.set_defaults(fn=cmd_cost_sweep)

    ck = sub.add_parser("checksum").add_subparsers(dest="checksum_command", required=True)
    p = ck.add_parser("populate", help="record digests of original output steps")
    p.add_argument("ctx", help="context config file")
    p.add_argument("directory", nargs="?", default=None, help="default: the context storage dir")
    p.add_argument("--db", default=None, help="default: the context checksum_db")
    out_flags(p, seed=False)
    p.set_defaults(fn=cmd_checksum_populate)

    p = sub.add_parser("preset", help="canned experiments")
    p.add_argument("name", choices=("fig4", "scal", "latency", "cost"))
    p.add_argument("--reps", type=int, default=100, help="fig4 repetitions")
    p.add_argument("--preset", choices=("cosmo", "flash"), default=None)
    p.add_argument("--directions", default="forward,backward")
    p.add_argument("--s-values", default="1,2,4,8,16")
    p.add_argument("--factors", default="1,5,25")
    p.add_argument("--s-max", type=int, default=8)
    out_flags(p)
    p.set_defaults(fn=cmd_preset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
