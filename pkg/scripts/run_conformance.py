"""Replay the bundled scenarios over many seeds (and optionally tcp) and
diff each run against its golden report."""

import argparse
import time

from equicom.harness import diff_golden, load_scenario, run_scenario

SCENARIOS = ("fig2", "pubsub", "pushpull")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--tcp", action="store_true", help="also run each scenario once over loopback tcp")
    args = ap.parse_args()

    failures = 0
    for name in SCENARIOS:
        sc = load_scenario(name)
        t0 = time.perf_counter()
        bad = [s for s in range(args.seeds) if not diff_golden(run_scenario(sc, seed=s), f"{name}.golden")]
        failures += len(bad)
        print(f"{name:9s} sim  {args.seeds - len(bad):4d}/{args.seeds} seeds  {time.perf_counter() - t0:6.2f}s"
              + (f"  failing seeds: {bad[:10]}" if bad else ""))
        if args.tcp:
            t0 = time.perf_counter()
            res = diff_golden(run_scenario(sc, transport="tcp"), f"{name}.golden")
            failures += not res
            print(f"{name:9s} tcp  {'ok' if res else res.message}  {time.perf_counter() - t0:6.2f}s")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
