"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line and the
lines are repeated in the pytest terminal summary."""

import itertools
import json
import random
import time
from collections import Counter

import pytest

from equicom import Communicator, CommunicatorConfig, Mechanism, Message, RoutingDirective, SimNet
from equicom.cli import main as cli_main
from equicom.harness import diff_golden, load_scenario, run_scenario
from equicom.routing import resolve_recipients
from equicom.wire import (
    BadMagic,
    Bye,
    Data,
    Hello,
    HelloAck,
    MalformedBody,
    PeerEntry,
    Peers,
    Ping,
    Pong,
    Sub,
    SubOp,
    Truncated,
    decode_frame,
    encode_frame,
)
from oracles import brute_force_resolve
from results import record

P, B, G, L = Mechanism.PRIVATE, Mechanism.BROADCAST, Mechanism.GROUP_BROADCAST, Mechanism.BALANCE

# expected consumer outputs for the FIG2 scenario
FIG2_EXPECTED = {
    "0": [],
    "1": ["private msg1", "fanout broadcast", "cluster1 broadcast"],
    "2": ["private msg2", "fanout broadcast", "cluster2 broadcast", "cluster2 task1"],
    "3": ["fanout broadcast", "cluster2 broadcast", "cluster2 task2"],
}
PUBSUB_SENT = ["t1aaaaa", "t1bbbbb", "bbbt1bb", "t2ccccc", "t2ddddd", "t3ddddd"]
PUSHPULL_SENT = ["http://google.com", "http://golang.org"] + [f"http://web{i}.com" for i in range(10)]


def check(number, ok, started, limit, detail):
    elapsed = time.perf_counter() - started
    passed = ok and (limit is None or elapsed < limit)
    line = record(number, passed, elapsed, limit, detail)
    assert passed, line


def test_criterion_1_fig2_golden():
    t0 = time.perf_counter()
    sc = load_scenario("fig2")
    seeds = range(25)
    bad = []
    reports = set()
    for seed in seeds:
        report = run_scenario(sc, seed=seed)
        got = {n: report.payloads(n) for n in report.deliveries}
        if got != FIG2_EXPECTED or not diff_golden(report, "fig2.golden"):
            bad.append(seed)
        reports.add(json.dumps(report.deliveries, sort_keys=True))
    ok = not bad and len(reports) == 1
    check(1, ok, t0, 5, f"FIG2 exact on {len(seeds) - len(bad)}/{len(seeds)} seeds, "
                        f"{len(reports)} distinct report(s)")


def test_criterion_2_pubsub_golden():
    t0 = time.perf_counter()
    report = run_scenario(load_scenario("pubsub"), seed=0)
    t1, everything = report.payloads(1), report.payloads(2)
    ok = t1 == PUBSUB_SENT[:2] and everything == PUBSUB_SENT and report.payloads(0) == []
    ok = ok and bool(diff_golden(report, "pubsub.golden"))
    check(2, ok, t0, 5, f"subscriber 't1' got {t1}, subscriber '' got {len(everything)}/6 in order")


def test_criterion_3_pushpull_round_robin():
    t0 = time.perf_counter()
    report = run_scenario(load_scenario("pushpull"), seed=0)
    a, b = report.payloads(1), report.payloads(2)
    in_order = all(lst == [p for p in PUSHPULL_SENT if p in lst] for lst in (a, b))
    ok = (not set(a) & set(b) and sorted(a + b) == sorted(PUSHPULL_SENT)
          and sorted([len(a), len(b)]) == [6, 6] and in_order)
    ok = ok and bool(diff_golden(report, "pushpull.golden"))
    check(3, ok, t0, 5, f"split {len(a)}/{len(b)}, disjoint={not set(a) & set(b)}, order kept={in_order}")


def _random_frame(rng: random.Random):
    def u64():
        return rng.choice([0, 1, 2**64 - 1, rng.getrandbits(64)])

    def nid():
        return rng.randrange(1, 2**64)

    def text():
        return "".join(rng.choice("abcxyz019:/é€🚀") for _ in range(rng.randrange(12)))

    def tags():
        return tuple(text() for _ in range(rng.randrange(4)))

    kind = rng.randrange(9)
    if kind == 0:
        return Hello(nid(), text(), tags())
    if kind == 1:
        return HelloAck(nid(), text(), tags())
    if kind == 2:
        return Peers(tuple(PeerEntry(nid(), text(), tags()) for _ in range(rng.randrange(4))))
    if kind == 3:
        return Sub(nid(), rng.choice(list(SubOp)), text())
    if kind in (4, 5):
        return Data(nid(), u64(), rng.choice(list(Mechanism)), text(), rng.randbytes(rng.randrange(64)))
    if kind == 6:
        return Ping(u64())
    if kind == 7:
        return Pong(u64())
    return Bye()


def _raises(exc, raw) -> bool:
    try:
        decode_frame(raw)
    except exc:
        return True
    except Exception:
        return False
    return False


def test_criterion_4_codec_round_trip():
    t0 = time.perf_counter()
    rng = random.Random(4)
    frames = [_random_frame(rng) for _ in range(2000)]
    mismatches = sum(decode_frame(encode_frame(f)) != f for f in frames)
    kinds = {type(f).__name__ for f in frames}
    good = encode_frame(Data(1, 2, B, "", b"x"))
    errors = {
        "BadMagic": _raises(BadMagic, b"\x00\x00" + good[2:]),
        "Truncated": _raises(Truncated, good[:-1]),
        "MalformedBody": _raises(MalformedBody, bytes.fromhex("5543010800000001") + b"\x00"),
    }
    ok = mismatches == 0 and len(kinds) == 8 and all(errors.values())
    check(4, ok, t0, 10, f"{len(frames) - mismatches}/{len(frames)} frames round-trip over {len(kinds)} kinds, "
                         f"errors raised: {sorted(k for k, v in errors.items() if v)}")


ALPHABET = ("a", "ab", "b")
DIRECTIVE_OPTIONS = (
    [RoutingDirective(P, t) for t in ALPHABET]
    + [RoutingDirective(B)]
    + [RoutingDirective(G, t) for t in ALPHABET]
    + [RoutingDirective(L, t) for t in ALPHABET]
)


def _routing_domain():
    """Every overlay of at most 4 nodes (sender included), each node holding
    any subset of a 3-tag alphabet, with the sender placed both lowest and
    highest in id order."""
    subsets = [frozenset(c) for k in range(4) for c in itertools.combinations(ALPHABET, k)]
    for others in range(4):
        for assignment in itertools.product(subsets, repeat=others):
            subs = {i + 2: s for i, s in enumerate(assignment)}
            for sender in (1, others + 2):
                table = dict(subs)
                table[sender] = frozenset(ALPHABET)
                yield table, sender


@pytest.mark.slow
def test_criterion_5_routing_matches_oracle_exhaustively():
    t0 = time.perf_counter()
    lists = [list(c) for k in (1, 2, 3) for c in itertools.product(DIRECTIVE_OPTIONS, repeat=k)]
    compared = mismatches = 0
    for subs, sender in _routing_domain():
        ids = list(subs)
        for ds in lists:
            want, rr_want, no_rec, conflicts, dedup = brute_force_resolve(ds, ids, subs, {}, sender)
            rr = {}
            res = resolve_recipients(ds, ids, subs, rr, sender)
            compared += 1
            if ([tuple(r) for r in res.recipients] != want or rr != rr_want
                    or (res.no_recipients, res.private_conflicts, res.dedup_suppressed) != (no_rec, conflicts, dedup)):
                mismatches += 1
    check(5, mismatches == 0, t0, 60, f"{mismatches} mismatches in {compared} configurations")


def _graph(family: str, n: int, rng: random.Random):
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
    edges += [(a, b) for a, b in ((rng.randrange(n), rng.randrange(n)) for _ in range(n)) if a != b]
    return edges


def _converge(family: str, n: int, seed: int):
    """Virtual ms for every table to hold the same N-1 entries, or None."""
    rng = random.Random(seed)
    net = SimNet(seed)
    interval = 200
    ids = rng.sample(range(1, 10 * n), n)
    nbrs = {i: set() for i in range(n)}
    for a, b in _graph(family, n, rng):
        nbrs[a].add(b)
        nbrs[b].add(a)
    comms = []
    for i in range(n):
        # each bootstrap edge is dialed by whichever end starts later
        boot = tuple(f"sim:{j}" for j in sorted(nbrs[i]) if j < i)
        c = Communicator(CommunicatorConfig(f"sim:{i}", node_id=ids[i], bootstrap=boot), net)
        c.subscribe(f"t{i}")
        comms.append(c)
    truth = {c.id: (c.address, c.subscriptions) for c in comms}

    def agreed():
        for c in comms:
            table = c.peers()
            if {k: (r.addr, r.subscriptions) for k, r in table.items()} != \
                    {k: v for k, v in truth.items() if k != c.id}:
                return False
        return True

    start = net.now_ms()
    if not net.run_until(agreed, n * interval):
        return None
    return net.now_ms() - start


@pytest.mark.slow
def test_criterion_6_membership_convergence():
    t0 = time.perf_counter()
    runs = failures = 0
    worst = 0.0
    for seed in range(50):
        for family in ("path", "ring", "star", "random"):
            n = 2 + (seed + len(family)) % 15
            took = _converge(family, n, seed)
            runs += 1
            if took is None:
                failures += 1
            else:
                worst = max(worst, took / (n * 200))
    check(6, failures == 0, t0, 30,
          f"{runs - failures}/{runs} runs converged within N gossip intervals "
          f"(worst {worst:.0%} of the bound)")


def _chatter(seed: int):
    rng = random.Random(seed)
    net = SimNet(seed, latency=(1, 5))
    ids = rng.sample(range(1, 2**16), 5)
    tags = ["", "a", "ab", "b", "c"]
    comms = []
    for i, nid in enumerate(ids):
        cfg = CommunicatorConfig(f"sim:{i}", node_id=nid, bootstrap=("sim:0",) if i else (),
                                 inbox_capacity=rng.randint(2, 32))
        c = Communicator(cfg, net)
        for t in rng.sample(tags, rng.randint(0, 3)):
            c.subscribe(t)
        comms.append(c)
    net.run_for(rng.randint(0, 300))
    got = {c.id: [] for c in comms}

    def pull(c, limit):
        while limit and (d := c.try_recv()) is not None:
            got[c.id].append(d)
            limit -= 1

    expected = 0
    for _ in range(40):
        c = rng.choice(comms)
        roll = rng.random()
        if roll < 0.1:
            c.subscribe(rng.choice(tags))
        elif roll < 0.15:
            c.unsubscribe(rng.choice(tags))
        else:
            ds = []
            for _ in range(rng.randint(1, 3)):
                mech = rng.choice(list(Mechanism))
                tag = "" if mech is B else rng.choice(tags[1:] if mech in (P, L) else tags)
                ds.append(RoutingDirective(mech, tag))
            expected += c.send(Message(f"{c.id}:{rng.random()}", ds)).recipients
        net.run_for(rng.randint(0, 4))
        pull(rng.choice(comms), rng.randint(0, 3))
    # frames to peers without a link yet wait in the outbox until the mesh
    # forms, so let the overlay run for a few gossip rounds while draining
    for _ in range(40):
        net.run_for(50)
        for c in comms:
            pull(c, -1)

    single_port = all(c.endpoints_bound == 1 for c in comms) and len(net.listen_calls) == 5
    no_dup = fifo = True
    for deliveries in got.values():
        keys = [(d.sender, d.seq) for d in deliveries]
        no_dup &= len(keys) == len(set(keys))
        for sender in {d.sender for d in deliveries}:
            seqs = [d.seq for d in deliveries if d.sender == sender]
            fifo &= all(a < b for a, b in zip(seqs, seqs[1:]))
    total = sum(len(v) for v in got.values())
    return single_port, no_dup, fifo, total == expected


@pytest.mark.slow
def test_criterion_7_single_port_fifo_at_most_once():
    t0 = time.perf_counter()
    outcomes = [_chatter(seed) for seed in range(100)]
    names = ("one endpoint", "no duplicate", "seq increasing", "no loss")
    tallies = {name: sum(o[i] for o in outcomes) for i, name in enumerate(names)}
    ok = all(v == 100 for v in tallies.values())
    check(7, ok, t0, 60, ", ".join(f"{k} {v}/100" for k, v in tallies.items()))


def test_criterion_8_objects_metric(capsys):
    t0 = time.perf_counter()
    rc = cli_main(["bench", "--mode", "objects", "--scenario", "fig2.json"])
    out, err = capsys.readouterr()
    report = json.loads(out)
    ok = (rc == 0 and report["object_count"] == 4 and report["baseline"]["sockets"] == 12
          and "12 sockets" in err)
    with capsys.disabled():
        check(8, ok, t0, None, f"objects={report['object_count']}, "
                               f"baseline={report['baseline'] and report['baseline']['sockets']} Mangos sockets")


@pytest.mark.tcp
def test_criterion_9_tcp_matches_sim():
    t0 = time.perf_counter()
    sc = load_scenario("fig2")
    sim = run_scenario(sc, seed=0)
    tcp = run_scenario(sc, transport="tcp")

    def multisets(report):
        return {n: Counter(json.dumps(e, sort_keys=True) for e in v) for n, v in report.deliveries.items()}

    ok = multisets(sim) == multisets(tcp)
    check(9, ok, t0, 15, f"tcp delivery multisets {'equal' if ok else 'differ from'} sim "
                         f"({sum(len(v) for v in tcp.deliveries.values())} deliveries)")
