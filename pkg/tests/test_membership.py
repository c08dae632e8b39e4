import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from equicom import membership as mb
from equicom.membership import DuplicateNodeId, MembershipConfig, PeerRecord
from equicom.wire import Hello, HelloAck, PeerEntry, Peers
from oracles import gossip_rounds

# rounds for a path bootstrap 1-2-...-N, from oracles.gossip_rounds
PATH_ROUNDS = {2: 0, 3: 1, 4: 2, 5: 2, 6: 3, 7: 3, 8: 3}


def test_handshake_records_remote_subscriptions():
    local = PeerRecord(1, "sim:0")
    rec, ack = mb.handshake(local, Hello(3, "sim:2", ("p2", "cluster2", "c2t")))
    assert rec.id == 3
    assert rec.subscriptions == {"p2", "cluster2", "c2t"}
    assert ack == HelloAck(1, "sim:0", ())


def test_handshake_is_symmetric():
    a = PeerRecord(1, "sim:a", frozenset({"x"}))
    b = PeerRecord(2, "sim:b", frozenset({"y"}))
    rec_b, ack = mb.handshake(a, mb.hello_for(b))
    rec_a = mb.record_from_hello(ack)
    assert (rec_a.id, rec_a.addr, rec_a.subscriptions) == (a.id, a.addr, a.subscriptions)
    assert (rec_b.id, rec_b.addr, rec_b.subscriptions) == (b.id, b.addr, b.subscriptions)


def test_handshake_rejects_own_id():
    with pytest.raises(DuplicateNodeId):
        mb.handshake(PeerRecord(1, "sim:0"), Hello(1, "sim:9"))


def test_handshake_rejects_live_peer_at_other_address():
    table = {2: PeerRecord(2, "sim:2")}
    with pytest.raises(DuplicateNodeId):
        mb.handshake(PeerRecord(1, "sim:0"), Hello(2, "sim:other"), table, connected=frozenset({2}))
    # a stale, unconnected record is simply superseded
    rec, _ = mb.handshake(PeerRecord(1, "sim:0"), Hello(2, "sim:other"), table)
    assert rec.addr == "sim:other"


def test_handshake_empty_subscriptions():
    rec, _ = mb.handshake(PeerRecord(1, "sim:1"), Hello(5, "sim:5"))
    assert rec.subscriptions == frozenset()


def test_gossip_merge_union_and_dial_list():
    table = {2: PeerRecord(2, "sim:2")}
    frame = Peers((PeerEntry(2, "sim:2"), PeerEntry(3, "sim:3")))
    result = mb.gossip_merge(table, frame, 1)
    assert set(result.table) == {2, 3}
    assert result.dial == ["sim:3"]


def test_gossip_merge_filters_self():
    result = mb.gossip_merge({}, Peers((PeerEntry(1, "sim:1"),)), 1)
    assert result.table == {}
    assert result.dial == []


def test_gossip_merge_replaces_only_on_change():
    old = PeerRecord(2, "sim:2", frozenset({"a"}), last_seen=50)
    same = mb.gossip_merge({2: old}, Peers((PeerEntry(2, "sim:2", ("a",)),)), 1, now=90)
    assert same.table[2] is old
    changed = mb.gossip_merge({2: old}, Peers((PeerEntry(2, "sim:2", ("b",)),)), 1, now=90)
    assert changed.table[2].subscriptions == {"b"}
    assert changed.table[2].last_seen == 50
    protected = mb.gossip_merge({2: old}, Peers((PeerEntry(2, "sim:2", ("b",)),)), 1,
                                protected=frozenset({2}))
    assert protected.table[2] is old


def test_gossip_merge_skips_malformed_entries():
    result = mb.gossip_merge({}, Peers((PeerEntry(0, "sim:0"), PeerEntry(4, ""))), 1)
    assert result.table == {}
    assert result.skipped == 2


def test_detect_failures_boundary():
    cfg = MembershipConfig(failure_timeout_ms=2000)
    assert mb.detect_failures({2: PeerRecord(2, "a", last_seen=1000)}, 1000, cfg) == []
    assert mb.detect_failures({2: PeerRecord(2, "a", last_seen=1000)}, 3000, cfg) == []
    assert mb.detect_failures({2: PeerRecord(2, "a", last_seen=1000)}, 3001, cfg) == [2]


def test_membership_config_invariant():
    with pytest.raises(ValueError):
        MembershipConfig(ping_interval_ms=500, failure_timeout_ms=999)
    with pytest.raises(ValueError):
        MembershipConfig(ping_interval_ms=0)


def test_last_seen_never_decreases():
    rec = PeerRecord(2, "a", last_seen=10)
    assert rec.touched(5).last_seen == 10
    assert rec.touched(11).last_seen == 11


# -- round-based overlay driven by the real merge/handshake functions ---------


def run_rounds(n: int, edges) -> tuple[int, dict]:
    recs = {i: PeerRecord(i + 1, f"sim:{i}", frozenset({f"t{i}"})) for i in range(n)}
    by_addr = {r.addr: i for i, r in recs.items()}
    tables = {i: {} for i in range(n)}
    adj = {i: set() for i in range(n)}

    def connect(a, b):
        rec_b, ack = mb.handshake(recs[a], mb.hello_for(recs[b]), tables[a])
        tables[a][rec_b.id] = rec_b
        tables[b][ack.node_id] = mb.record_from_hello(ack)
        adj[a].add(b)
        adj[b].add(a)

    for a, b in edges:
        connect(a, b)
    rounds = 0
    while any(len(tables[i]) < n - 1 for i in range(n)) and rounds <= n:
        rounds += 1
        frames = {i: mb.peers_frame(tables[i]) for i in range(n)}
        dials = []
        for i in range(n):
            for j in sorted(adj[i]):
                result = mb.gossip_merge(tables[j], frames[i], recs[j].id)
                tables[j] = result.table
                dials += [(j, by_addr[a]) for a in result.dial]
        for a, b in dials:
            if b not in adj[a]:
                connect(a, b)
    return rounds, tables


@pytest.mark.parametrize("n", sorted(PATH_ROUNDS))
def test_path_bootstrap_converges_like_oracle(n):
    edges = [(i, i + 1) for i in range(n - 1)]
    rounds, tables = run_rounds(n, edges)
    assert rounds == PATH_ROUNDS[n] == gossip_rounds(n, edges)
    assert all(len(t) == n - 1 for t in tables.values())


def test_line_of_four_converges_within_three_rounds():
    rounds, tables = run_rounds(4, [(0, 1), (1, 2), (2, 3)])
    assert rounds <= 3
    assert all(len(t) == 3 for t in tables.values())


@given(st.integers(2, 16), st.randoms(use_true_random=False))
def test_random_connected_graphs_converge_and_agree(n, rnd):
    order = list(range(n))
    rnd.shuffle(order)
    edges = [(order[i], order[rnd.randrange(i)]) for i in range(1, n)]
    edges += [(rnd.randrange(n), rnd.randrange(n)) for _ in range(rnd.randrange(n))]
    edges = [(a, b) for a, b in edges if a != b]
    rounds, tables = run_rounds(n, edges)
    assert rounds <= n
    assert rounds == gossip_rounds(n, edges)
    views = [{r.id: (r.addr, r.subscriptions) for r in t.values()} for t in tables.values()]
    full = {}
    for v in views:
        full.update(v)
    for i, v in enumerate(views):
        assert len(v) == n - 1
        assert v == {k: full[k] for k in full if k != i + 1}
