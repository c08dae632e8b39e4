"""``equicom`` command line: run scenarios, bench, or start an interactive node."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import threading

from equicom.communicator import Communicator, CommunicatorConfig, Message, ShutDown
from equicom.harness import (
    ConvergenceTimeout,
    ParseError,
    ValidationError,
    bench,
    diff_golden,
    load_scenario,
    run_scenario,
)
from equicom.routing import InvalidDirective, Mechanism, RoutingDirective

LOG_LEVELS = ("error", "warn", "info", "debug")


def setup_logging() -> None:
    level = os.environ.get("EQUICOM_LOG", "warn").lower()
    if level not in LOG_LEVELS:
        level = "warn"
    logging.basicConfig(
        level={"warn": logging.WARNING}.get(level, getattr(logging, level.upper())),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        report = run_scenario(scenario, seed=args.seed, transport=args.transport)
    except (ParseError, ValidationError, ConvergenceTimeout, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.to_json())
    if args.golden is None:
        return 0
    try:
        result = diff_golden(report, args.golden)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("PASS" if result.ok else f"FAIL: {result.message}", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_bench(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else None
    report = bench(args.mode, scenario=scenario, n=args.n, window_ms=args.window_ms,
                   transport=args.transport)
    print(report.to_json())
    print(report.summary(), file=sys.stderr)
    return 0


def parse_command(line: str):
    """``send <mechanism> <tag> <text>``; a tag of ``-`` means empty."""
    parts = line.strip().split(" ", 3)
    if not parts or parts[0] != "send" or len(parts) < 4:
        raise ValueError("usage: send <mechanism> <tag> <text>")
    tag = "" if parts[2] == "-" else parts[2]
    return RoutingDirective(Mechanism.parse(parts[1]), tag), parts[3]


def cmd_node(args) -> int:
    cfg = CommunicatorConfig(listen=args.listen, node_id=args.id, bootstrap=tuple(args.bootstrap))
    comm = Communicator(cfg)
    for tag in args.subscribe:
        comm.subscribe(tag)
    print(f"node {comm.id} listening on {comm.address}", flush=True)

    def printer() -> None:
        while True:
            try:
                d = comm.recv()
            except ShutDown:
                return
            print(f"Received: {d.text}", flush=True)

    threading.Thread(target=printer, daemon=True).start()
    try:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            if line == "peers":
                for nid, rec in sorted(comm.peers().items()):
                    print(f"{nid} {rec.addr} {sorted(rec.subscriptions)}", flush=True)
                continue
            try:
                directive, text = parse_command(line)
            except (ValueError, InvalidDirective) as exc:
                print(f"error: {exc}", file=sys.stderr, flush=True)
                continue
            receipt = comm.send(Message(text, (directive,)))
            print(f"Sent: {text} ({receipt.recipients} recipients)", flush=True)
    except KeyboardInterrupt:
        pass
    finally:
        comm.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equicom", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a scenario and optionally diff it against a golden report")
    run.add_argument("--scenario", required=True, help="scenario JSON path or bundled name (fig2, pubsub, pushpull)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--transport", choices=("sim", "tcp"), default="sim")
    run.add_argument("--golden", help="expected report; exit status is 0 only if it matches")
    run.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="usability / scalability / efficiency metrics")
    b.add_argument("--mode", choices=("objects", "connections", "transfer"), required=True)
    b.add_argument("--scenario")
    b.add_argument("--n", type=int, default=1000, help="messages per mechanism (transfer)")
    b.add_argument("--window-ms", type=int, default=1000, help="measurement window (connections)")
    b.add_argument("--transport", choices=("sim", "tcp"), default="sim")
    b.set_defaults(func=cmd_bench)

    node = sub.add_parser("node", help="run one interactive communicator over tcp")
    node.add_argument("--listen", required=True, help="e.g. tcp:127.0.0.1:40899")
    node.add_argument("--id", type=int)
    node.add_argument("--bootstrap", action="append", default=[])
    node.add_argument("--subscribe", action="append", default=[])
    node.set_defaults(func=cmd_node)
    return p


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
