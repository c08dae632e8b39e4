"""Measure how long a simulated overlay takes to reach a full, agreeing
membership view, for several bootstrap graph shapes and sizes.

Writes one CSV row per run: family, n, seed, virtual ms to converge, and
that time in gossip intervals.
"""

import argparse
import csv
import random
import statistics
import sys

from equicom import Communicator, CommunicatorConfig, MembershipConfig, SimNet

FAMILIES = ("path", "ring", "star", "random")


def bootstrap_graph(family: str, n: int, rng: random.Random) -> list[tuple[int, int]]:
    if family == "path":
        return [(i, i + 1) for i in range(n - 1)]
    if family == "ring":
        return [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)]
    if family == "star":
        hub = rng.randrange(n)
        return [(hub, i) for i in range(n) if i != hub]
    order = list(range(n))
    rng.shuffle(order)
    edges = [(order[i], order[rng.randrange(i)]) for i in range(1, n)]
    return edges + [(a, b) for a, b in ((rng.randrange(n), rng.randrange(n)) for _ in range(n)) if a != b]


def time_to_converge(family: str, n: int, seed: int, membership: MembershipConfig, limit_ms: int):
    rng = random.Random(seed)
    net = SimNet(seed)
    ids = rng.sample(range(1, 10 * n), n)
    nbrs = {i: set() for i in range(n)}
    for a, b in bootstrap_graph(family, n, rng):
        nbrs[a].add(b)
        nbrs[b].add(a)
    comms = []
    for i in range(n):
        boot = tuple(f"sim:{j}" for j in sorted(nbrs[i]) if j < i)
        cfg = CommunicatorConfig(f"sim:{i}", node_id=ids[i], bootstrap=boot, membership=membership)
        comm = Communicator(cfg, net)
        comm.subscribe(f"t{i}")
        comms.append(comm)
    truth = {c.id: (c.address, c.subscriptions) for c in comms}

    def agreed() -> bool:
        return all(
            {k: (r.addr, r.subscriptions) for k, r in c.peers().items()}
            == {k: v for k, v in truth.items() if k != c.id}
            for c in comms
        )

    start = net.now_ms()
    return net.now_ms() - start if net.run_until(agreed, limit_ms) else None


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-n", type=int, default=16)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--gossip-ms", type=int, default=200)
    ap.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    args = ap.parse_args()

    membership = MembershipConfig(gossip_interval_ms=args.gossip_ms)
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(out)
    writer.writerow(["family", "n", "seed", "ms", "intervals"])
    for family in FAMILIES:
        for n in range(2, args.max_n + 1):
            times = []
            for seed in range(args.seeds):
                ms = time_to_converge(family, n, seed, membership, 10 * n * args.gossip_ms)
                writer.writerow([family, n, seed, ms, "" if ms is None else round(ms / args.gossip_ms, 3)])
                times.append(ms)
            done = [t for t in times if t is not None]
            print(f"{family:6s} n={n:2d}  converged {len(done)}/{len(times)}  "
                  f"median {statistics.median(done) if done else float('nan'):.0f} ms  "
                  f"max {max(done, default=float('nan')):.0f} ms", file=sys.stderr)
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
