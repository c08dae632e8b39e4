"""The per-process messaging object.

A :class:`Communicator` binds exactly one endpoint, keeps a port mapping
table of every other node, and sends each message according to a list of
routing directives. All state changes happen on one router worker: a
background thread under the tcp transport, or inline under :class:`SimNet`
(where the simulator's event loop already serializes everything).
"""

from __future__ import annotations

import collections
import dataclasses
import logging
import queue
import random
import threading
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Optional, Sequence

from equicom import membership as mb
from equicom.membership import MembershipConfig, PeerRecord
from equicom.routing import Mechanism, RoutingDirective, resolve_recipients
from equicom.transport import Address, ConnectionClosed, TcpTransport, TransportError
from equicom.wire import (
    MAX_PAYLOAD,
    MAX_STRING,
    Bye,
    Data,
    FrameDecoder,
    Hello,
    HelloAck,
    OversizeField,
    Peers,
    Ping,
    Pong,
    Sub,
    SubOp,
    WireError,
    encode_frame,
)

log = logging.getLogger(__name__)


class ShutDown(Exception):
    """The communicator has been shut down."""


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class CommunicatorConfig:
    listen: str
    node_id: Optional[int] = None
    bootstrap: Sequence[str] = ()
    membership: MembershipConfig = field(default_factory=MembershipConfig)
    inbox_capacity: int = 1024

    def validate(self) -> None:
        if self.node_id is not None and not 0 < self.node_id < 1 << 64:
            raise InvalidConfig(f"node_id must be a nonzero u64, got {self.node_id}")
        if self.inbox_capacity < 1:
            raise InvalidConfig("inbox_capacity must be >= 1")
        try:
            Address.parse(self.listen)
            for b in self.bootstrap:
                Address.parse(b)
        except (ValueError, TransportError) as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True)
class Message:
    payload: bytes
    directives: tuple

    def __post_init__(self) -> None:
        payload = self.payload.encode("utf-8") if isinstance(self.payload, str) else bytes(self.payload)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "directives", tuple(self.directives))
        if not self.directives:
            raise ValueError("a message needs at least one routing directive")
        for d in self.directives:
            if not isinstance(d, RoutingDirective):
                raise TypeError(f"not a RoutingDirective: {d!r}")


@dataclass(frozen=True)
class Delivery:
    sender: int
    mechanism: Mechanism
    tag: str
    payload: bytes
    seq: int

    @property
    def text(self) -> str:
        return self.payload.decode("utf-8", errors="replace")


@dataclass
class Diagnostics:
    sent_frames: int = 0
    dropped_no_recipient: int = 0
    private_tag_conflicts: int = 0
    dedup_suppressed: int = 0
    evicted_peers: int = 0
    duplicates_dropped: int = 0
    malformed_frames: int = 0

    def __sub__(self, other: "Diagnostics") -> "Diagnostics":
        return Diagnostics(**{
            f.name: getattr(self, f.name) - getattr(other, f.name)
            for f in dataclasses.fields(self)
        })


@dataclass(frozen=True)
class SendReceipt:
    seq: int
    recipients: int
    diagnostics: Diagnostics


# -- router workers ----------------------------------------------------------


class _InlineRouter:
    """Runs work immediately; used when the transport is single-threaded."""

    def call(self, fn, *args):
        return fn(*args)

    def post(self, fn, *args) -> None:
        fn(*args)

    def stop(self) -> None:
        pass


class _ThreadRouter:
    def __init__(self, name: str):
        self._q: "queue.Queue" = queue.Queue()
        self._stopped = False
        self._thread = threading.Thread(target=self._loop, daemon=True, name=name)
        self._thread.start()

    def _loop(self) -> None:
        while True:
            item = self._q.get()
            if item is None:
                break
            fn, args, fut = item
            try:
                result = fn(*args)
            except BaseException as exc:
                if fut is not None:
                    fut.set_exception(exc)
                else:
                    log.exception("router task %r failed", fn)
            else:
                if fut is not None:
                    fut.set_result(result)

    def call(self, fn, *args):
        if threading.current_thread() is self._thread:
            return fn(*args)
        if self._stopped:
            raise ShutDown("communicator is shut down")
        fut: Future = Future()
        self._q.put((fn, args, fut))
        return fut.result()

    def post(self, fn, *args) -> None:
        if not self._stopped:
            self._q.put((fn, args, None))

    def stop(self) -> None:
        if not self._stopped:
            self._stopped = True
            self._q.put(None)


class _Link:
    __slots__ = ("conn", "dialed", "peer_id", "decoder", "gate", "alive", "addr")

    def __init__(self, conn, dialed: bool, addr: str = ""):
        self.conn = conn
        self.dialed = dialed
        self.peer_id: Optional[int] = None
        self.decoder = FrameDecoder()
        self.gate: Optional[threading.Event] = None
        self.alive = True
        self.addr = addr


def _default_transport(listen: str):
    if Address.parse(listen).scheme == "tcp":
        return TcpTransport()
    raise InvalidConfig("sim addresses need an explicit SimNet transport")


class Communicator:
    """One node of the overlay. See the module docstring."""

    def __init__(self, cfg: CommunicatorConfig, transport=None):
        cfg.validate()
        self.cfg = cfg
        self.id = cfg.node_id or random.SystemRandom().randrange(1, 1 << 64)
        self.transport = transport if transport is not None else _default_transport(cfg.listen)
        self._threaded = bool(getattr(self.transport, "threaded", False))
        self._router = _ThreadRouter(f"router-{self.id}") if self._threaded else _InlineRouter()

        self.table: dict[int, PeerRecord] = {}
        self._subs: set[str] = set()
        self._links: set[_Link] = set()
        self._primary: dict[int, _Link] = {}
        self._outbox: dict[int, list[bytes]] = collections.defaultdict(list)
        self._dialing: set[str] = set()
        self._tombstones: dict[int, int] = {}
        self._rr: dict[str, int] = {}
        self._seq = 0
        self._last_seq: dict[int, int] = {}
        self._diag = Diagnostics()
        self._pending: collections.deque = collections.deque()
        self._inbox: collections.deque = collections.deque()
        self._cv = threading.Condition()
        self._timers: dict = {}
        self._shut = False

        self._endpoint = self.transport.listen(cfg.listen, on_accept=self._accepted)
        self.endpoints_bound = 1
        self.address = str(self._endpoint.address)
        self._router.call(self._start)

    @classmethod
    def create(cls, cfg: CommunicatorConfig, transport=None) -> "Communicator":
        return cls(cfg, transport)

    def __repr__(self) -> str:
        return f"<Communicator id={self.id} at {self.address}>"

    # -- public API --

    def subscribe(self, tag: str) -> None:
        self._router.call(self._set_subscription, tag, SubOp.ADD)

    def unsubscribe(self, tag: str) -> None:
        self._router.call(self._set_subscription, tag, SubOp.REMOVE)

    @property
    def subscriptions(self) -> frozenset:
        return frozenset(self._subs)

    def send(self, msg: Message) -> SendReceipt:
        return self._call(self._send, msg)

    def try_recv(self) -> Optional[Delivery]:
        with self._cv:
            item = self._inbox.popleft() if self._inbox else None
            refill = bool(self._pending)
        if refill and not self._shut:
            self._router.post(self._refill)
        return item

    def recv(self, timeout: Optional[float] = None) -> Delivery:
        """Block until a delivery arrives.

        Under the simulator this advances virtual time (``timeout`` is then in
        virtual seconds, default 60). Raises ShutDown once shut down and
        drained, TimeoutError when the timeout passes.
        """
        if not self._threaded:
            net = self.transport
            deadline = net.now_ms() + int((60.0 if timeout is None else timeout) * 1000)
            while True:
                item = self.try_recv()
                if item is not None:
                    return item
                if self._shut:
                    raise ShutDown("communicator is shut down")
                if net.now_ms() > deadline or net.step() is None:
                    raise TimeoutError("no delivery")
        with self._cv:
            if not self._cv.wait_for(lambda: self._inbox or self._shut, timeout):
                raise TimeoutError("no delivery")
        item = self.try_recv()
        if item is None:
            raise ShutDown("communicator is shut down")
        return item

    def peers(self) -> dict[int, PeerRecord]:
        return self._snapshot(dict, self.table)

    def connected(self) -> frozenset:
        """Ids of peers with an established direct link."""
        return self._snapshot(lambda: frozenset(self._primary))

    def diagnostics(self) -> Diagnostics:
        return self._snapshot(dataclasses.replace, self._diag)

    def shutdown(self, graceful: bool = True) -> None:
        """Leave the overlay. ``graceful=False`` skips BYE, like a crash."""
        if self._shut:
            return
        try:
            self._router.call(self._shutdown, graceful)
        except ShutDown:
            pass
        self._router.stop()

    def __enter__(self) -> "Communicator":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # -- router-side internals --

    def _call(self, fn, *args):
        return self._router.call(fn, *args)

    def _snapshot(self, fn, *args):
        # read-only views stay available after shutdown
        try:
            return self._router.call(fn, *args)
        except ShutDown:
            return fn(*args)

    def _now(self) -> int:
        return self.transport.now_ms()

    def _start(self) -> None:
        m = self.cfg.membership
        self._every(m.gossip_interval_ms, self._gossip_tick)
        self._every(m.ping_interval_ms, self._ping_tick)
        for addr in self.cfg.bootstrap:
            self._dial(str(Address.parse(addr)))

    def _every(self, interval: int, fn) -> None:
        name = fn.__name__

        def fire() -> None:
            if self._shut:
                return
            fn()
            self._timers[name] = self.transport.call_later(interval, tick)

        def tick() -> None:
            self._router.post(fire)

        self._timers[name] = self.transport.call_later(interval, tick)

    def _local_record(self) -> PeerRecord:
        return PeerRecord(self.id, self.address, frozenset(self._subs))

    def _accepted(self, conn) -> None:
        self._router.post(self._adopt, conn, False, "")

    def _dial(self, addr: str) -> None:
        if addr == self.address or addr in self._dialing:
            return
        try:
            conn = self.transport.dial(addr)
        except TransportError as exc:
            log.debug("node %d: dial %s failed: %s", self.id, addr, exc)
            return
        self._dialing.add(addr)
        self._adopt(conn, True, addr)

    def _adopt(self, conn, dialed: bool, addr: str) -> None:
        if self._shut:
            conn.close()
            return
        link = _Link(conn, dialed, addr)
        if self._threaded:
            link.gate = threading.Event()
            if not self._pending:
                link.gate.set()
        self._links.add(link)
        self.transport.attach(
            conn,
            lambda data: self._router.post(self._on_bytes, link, data),
            lambda: self._router.post(self._on_closed, link),
            link.gate,
        )
        if dialed:
            self._write(link, mb.hello_for(self._local_record()))

    def _write(self, link: _Link, frame) -> bool:
        return self._write_raw(link, encode_frame(frame))

    def _write_raw(self, link: _Link, raw: bytes) -> bool:
        try:
            link.conn.send_bytes(raw)
            return True
        except (ConnectionClosed, OSError):
            self._on_closed(link)
            return False

    def _drop(self, link: _Link) -> None:
        link.conn.close()
        self._on_closed(link)

    def _on_closed(self, link: _Link) -> None:
        if not link.alive:
            return
        link.alive = False
        self._links.discard(link)
        self._dialing.discard(link.addr)
        pid = link.peer_id
        if pid is not None and self._primary.get(pid) is link:
            del self._primary[pid]
            spare = [l for l in self._links if l.peer_id == pid]
            if spare and pid in self.table and not self._shut:
                self._promote(pid, spare[0])

    def _on_bytes(self, link: _Link, data: bytes) -> None:
        if not link.alive or self._shut:
            return
        try:
            frames = link.decoder.feed(data)
        except WireError as exc:
            log.warning("node %d: malformed stream from %s: %s", self.id, link.conn.peer, exc)
            self._diag.malformed_frames += 1
            self._drop(link)
            return
        for frame in frames:
            if not link.alive:
                break
            self._handle(link, frame)

    def _handle(self, link: _Link, frame) -> None:
        now = self._now()
        if link.peer_id is None:
            self._handshake(link, frame, now)
            return
        pid = link.peer_id
        rec = self.table.get(pid)
        if rec is not None:
            self.table[pid] = rec.touched(now)

        if isinstance(frame, Data):
            if frame.sender == pid:
                self._on_data(frame)
            else:
                self._diag.malformed_frames += 1
        elif isinstance(frame, Peers):
            self._merge(frame, now)
        elif isinstance(frame, Sub):
            if frame.node_id == pid and rec is not None:
                subs = rec.subscriptions | {frame.tag} if frame.op == SubOp.ADD else rec.subscriptions - {frame.tag}
                self.table[pid] = dataclasses.replace(self.table[pid], subscriptions=frozenset(subs))
        elif isinstance(frame, Ping):
            self._write(link, Pong(frame.nonce))
        elif isinstance(frame, Bye):
            self._evict(pid, tombstone=True)
        # Pong and repeated Hello/HelloAck only refresh liveness

    def _handshake(self, link: _Link, frame, now: int) -> None:
        try:
            if not link.dialed and isinstance(frame, Hello):
                rec, ack = mb.handshake(self._local_record(), frame, self.table,
                                        frozenset(self._primary), now)
            elif link.dialed and isinstance(frame, HelloAck):
                rec = mb.record_from_hello(frame, now)
                mb.check_remote(self.id, rec, self.table, frozenset(self._primary))
                ack = None
            else:
                log.warning("node %d: unexpected %s before handshake", self.id, type(frame).__name__)
                self._diag.malformed_frames += 1
                self._drop(link)
                return
        except mb.DuplicateNodeId as exc:
            log.warning("node %d: %s", self.id, exc)
            self._drop(link)
            return
        if ack is not None and not self._write(link, ack):
            return
        self._dialing.discard(link.addr)
        self._tombstones.pop(rec.id, None)
        old = self.table.get(rec.id)
        if old is not None:
            rec = dataclasses.replace(rec, last_seen=max(old.last_seen, rec.last_seen))
        self.table[rec.id] = rec
        link.peer_id = rec.id
        current = self._primary.get(rec.id)
        if current is None:
            self._promote(rec.id, link)
        else:
            # Both ends apply the same rule, so they agree on which
            # connection carries traffic: the one dialed by the lower id.
            def dialer(l: _Link) -> int:
                return self.id if l.dialed else rec.id
            if dialer(link) < dialer(current):
                self._promote(rec.id, link)
        others = {n: r for n, r in self.table.items() if n != rec.id}
        if others:
            self._write(link, mb.peers_frame(others))

    def _promote(self, pid: int, link: _Link) -> None:
        self._primary[pid] = link
        backlog = self._outbox.pop(pid, [])
        for raw in backlog:
            if not self._write_raw(link, raw):
                break

    def _merge(self, frame: Peers, now: int) -> None:
        live = [e for e in frame.entries
                if self._tombstones.get(e.node_id, -1) < now]
        self._tombstones = {n: t for n, t in self._tombstones.items() if t >= now}
        result = mb.gossip_merge(self.table, Peers(tuple(live)), self.id, now,
                                 protected=frozenset(self._primary))
        self._diag.malformed_frames += result.skipped
        self.table = result.table
        new_ids = {r.addr: n for n, r in self.table.items()}
        for addr in result.dial:
            # the lower id dials, so each pair ends up with one connection
            if self.id < new_ids.get(addr, 0):
                self._dial(addr)

    def _on_data(self, frame: Data) -> None:
        if frame.seq <= self._last_seq.get(frame.sender, -1):
            self._diag.duplicates_dropped += 1
            return
        self._last_seq[frame.sender] = frame.seq
        d = Delivery(frame.sender, frame.mechanism, frame.tag, frame.payload, frame.seq)
        with self._cv:
            if self._pending or len(self._inbox) >= self.cfg.inbox_capacity:
                self._pending.append(d)
                self._set_gates(False)
            else:
                self._inbox.append(d)
                self._cv.notify_all()

    def _refill(self) -> None:
        with self._cv:
            while self._pending and len(self._inbox) < self.cfg.inbox_capacity:
                self._inbox.append(self._pending.popleft())
            if not self._pending:
                self._set_gates(True)
            self._cv.notify_all()

    def _set_gates(self, open_: bool) -> None:
        for l in self._links:
            if l.gate is not None:
                l.gate.set() if open_ else l.gate.clear()

    def _set_subscription(self, tag: str, op: SubOp) -> None:
        if self._shut:
            raise ShutDown("communicator is shut down")
        if len(tag.encode("utf-8")) > MAX_STRING:
            raise OversizeField("tag too long")
        if (op == SubOp.ADD) == (tag in self._subs):
            return
        if op == SubOp.ADD:
            self._subs.add(tag)
        else:
            self._subs.discard(tag)
        raw = encode_frame(Sub(self.id, op, tag))
        # accepted links that have not seen our HELLO_ACK yet get the new set in it
        for link in list(self._links):
            if link.peer_id is not None or link.dialed:
                self._write_raw(link, raw)

    def _send(self, msg: Message) -> SendReceipt:
        if self._shut:
            raise ShutDown("communicator is shut down")
        if len(msg.payload) > MAX_PAYLOAD:
            raise OversizeField(f"payload is {len(msg.payload)} bytes")
        for d in msg.directives:
            if len(d.tag.encode("utf-8")) > MAX_STRING:
                raise OversizeField("tag too long")
        before = dataclasses.replace(self._diag)
        seq = self._seq
        self._seq += 1
        subs = {n: r.subscriptions for n, r in self.table.items()}
        res = resolve_recipients(list(msg.directives), self.table.keys(), subs, self._rr, self.id)
        for node, mech, tag in res.recipients:
            raw = encode_frame(Data(self.id, seq, mech, tag, msg.payload))
            link = self._primary.get(node)
            if link is None or not self._write_raw(link, raw):
                self._outbox[node].append(raw)
        self._diag.sent_frames += len(res.recipients)
        self._diag.dropped_no_recipient += res.no_recipients
        self._diag.private_tag_conflicts += res.private_conflicts
        self._diag.dedup_suppressed += res.dedup_suppressed
        return SendReceipt(seq, len(res.recipients), self._diag - before)

    def _gossip_tick(self) -> None:
        if not self._primary:
            return
        raw = encode_frame(mb.peers_frame(self.table))
        for link in list(self._primary.values()):
            self._write_raw(link, raw)

    def _ping_tick(self) -> None:
        now = self._now()
        raw = encode_frame(Ping(now))
        for link in list(self._primary.values()):
            self._write_raw(link, raw)
        for pid in mb.detect_failures(self.table, now, self.cfg.membership):
            log.info("node %d: peer %d timed out", self.id, pid)
            self._evict(pid, tombstone=True)
        for pid, rec in list(self.table.items()):
            if pid not in self._primary and self.id < pid:
                self._dial(rec.addr)

    def _evict(self, pid: int, tombstone: bool) -> None:
        if pid not in self.table:
            return
        del self.table[pid]
        self._primary.pop(pid, None)
        self._outbox.pop(pid, None)
        self._last_seq.pop(pid, None)
        self._diag.evicted_peers += 1
        if tombstone:
            self._tombstones[pid] = self._now() + 2 * self.cfg.membership.failure_timeout_ms
        for link in [l for l in self._links if l.peer_id == pid]:
            self._drop(link)

    def _shutdown(self, graceful: bool) -> None:
        with self._cv:
            self._shut = True
        for t in self._timers.values():
            t.cancel()
        self._timers.clear()
        if graceful:
            bye = encode_frame(Bye())
            for link in list(self._links):
                if link.peer_id is not None:
                    self._write_raw(link, bye)
        for link in list(self._links):
            self._drop(link)
        self._endpoint.close()
        with self._cv:
            self._pending.clear()
            self._set_gates(True)
            self._cv.notify_all()


def create(cfg: CommunicatorConfig, transport=None) -> Communicator:
    return Communicator(cfg, transport)
