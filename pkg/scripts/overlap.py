"""Re-simulated steps versus analysis overlap, per cache policy.

    python scripts/overlap.py --out results/overlap.csv
"""
import argparse
import csv
import statistics
import sys

from revsim.core import POLICIES
from revsim.fastcache import replay_cache_fast
from revsim.traces import TraceSpec, gen_clients, interleave


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pattern", default="forward")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--overlaps", default="0,25,50,75,100")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["pattern", "overlap", "policy", "median_steps"])
    for o in (float(x) for x in args.overlaps.split(",")):
        steps = {p: [] for p in POLICIES}
        for rep in range(args.reps):
            clients = gen_clients(TraceSpec(args.pattern, 1152, 50, 100, 400, 1, o,
                                            args.seed + rep))
            trace = interleave(clients, o)
            for p in POLICIES:
                steps[p].append(int(replay_cache_fast(trace, 48, 288, p)[0]))
        for p in POLICIES:
            w.writerow([args.pattern, o, p, statistics.median(steps[p])])
    if args.out:
        sink.close()


if __name__ == "__main__":
    main()
