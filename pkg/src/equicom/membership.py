"""Full-mesh overlay bookkeeping: handshake, peer exchange, failure detection.

These are pure functions over a port mapping table (``dict[int, PeerRecord]``).
The communicator owns the table and calls them from its router worker.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

from equicom.wire import Hello, HelloAck, PeerEntry, Peers

log = logging.getLogger(__name__)

MAX_NODE_ID = (1 << 64) - 1


class DuplicateNodeId(Exception):
    pass


@dataclass(frozen=True)
class PeerRecord:
    id: int
    addr: str
    subscriptions: frozenset = field(default_factory=frozenset)
    last_seen: int = 0

    def touched(self, now: int) -> "PeerRecord":
        if now <= self.last_seen:
            return self
        return replace(self, last_seen=now)

    def to_entry(self) -> PeerEntry:
        return PeerEntry(self.id, self.addr, tuple(sorted(self.subscriptions)))


@dataclass(frozen=True)
class MembershipConfig:
    gossip_interval_ms: int = 200
    ping_interval_ms: int = 500
    failure_timeout_ms: int = 2000

    def __post_init__(self) -> None:
        if self.gossip_interval_ms <= 0 or self.ping_interval_ms <= 0:
            raise ValueError("intervals must be positive")
        if self.failure_timeout_ms < 2 * self.ping_interval_ms:
            raise ValueError("failure_timeout_ms must be at least 2 * ping_interval_ms")


PortMappingTable = dict  # NodeId -> PeerRecord


class MergeResult(NamedTuple):
    table: dict
    dial: list
    skipped: int


def record_from_hello(hello: Union[Hello, HelloAck], now: int = 0) -> PeerRecord:
    return PeerRecord(hello.node_id, hello.listen_addr, frozenset(hello.subscriptions), now)


def check_remote(local_id: int, remote: PeerRecord, table: Optional[dict] = None,
                 connected: frozenset = frozenset()) -> None:
    """Raise DuplicateNodeId if ``remote`` collides with us or a live peer.

    A collision with a known peer only counts when that peer is currently
    connected under a different address; a stale gossip record is replaced.
    """
    if remote.id == 0:
        raise DuplicateNodeId("node id 0 is reserved")
    if remote.id == local_id:
        raise DuplicateNodeId(f"remote claims our own id {local_id}")
    existing = (table or {}).get(remote.id)
    if existing is not None and existing.addr != remote.addr and remote.id in connected:
        raise DuplicateNodeId(
            f"id {remote.id} already live at {existing.addr}, not {remote.addr}"
        )


def handshake(local: PeerRecord, remote_hello: Hello, table: Optional[dict] = None,
              connected: frozenset = frozenset(), now: int = 0) -> tuple[PeerRecord, HelloAck]:
    """Accept a HELLO: return the remote's record and our HELLO_ACK."""
    remote = record_from_hello(remote_hello, now)
    check_remote(local.id, remote, table, connected)
    ack = HelloAck(local.id, local.addr, tuple(sorted(local.subscriptions)))
    return remote, ack


def hello_for(local: PeerRecord) -> Hello:
    return Hello(local.id, local.addr, tuple(sorted(local.subscriptions)))


def peers_frame(table: dict) -> Peers:
    return Peers(tuple(table[n].to_entry() for n in sorted(table)))


def gossip_merge(table: dict, peers: Peers, self_id: int, now: int = 0,
                 protected: frozenset = frozenset()) -> MergeResult:
    """Merge a PEERS frame into ``table``.

    Unknown ids are inserted (stamped ``now``) and their addresses returned
    for dialing. A known id is replaced only when the entry changes its
    address or subscriptions; ids in ``protected`` are never replaced, which
    lets directly connected peers stay authoritative about themselves.
    """
    out = dict(table)
    dial = []
    skipped = 0
    for e in peers.entries:
        if e.node_id == 0 or e.node_id > MAX_NODE_ID or not e.addr:
            skipped += 1
            continue
        if e.node_id == self_id:
            continue
        subs = frozenset(e.subscriptions)
        old = out.get(e.node_id)
        if old is None:
            out[e.node_id] = PeerRecord(e.node_id, e.addr, subs, now)
            dial.append(e.addr)
        elif e.node_id not in protected and (old.addr != e.addr or old.subscriptions != subs):
            out[e.node_id] = replace(old, addr=e.addr, subscriptions=subs)
    if skipped:
        log.debug("gossip merge skipped %d malformed entries", skipped)
    return MergeResult(out, dial, skipped)


def detect_failures(table: dict, now: int, cfg: MembershipConfig) -> list:
    return sorted(n for n, rec in table.items() if now - rec.last_seen > cfg.failure_timeout_ms)


def evict(table: dict, ids) -> dict:
    gone = set(ids)
    return {n: rec for n, rec in table.items() if n not in gone}
