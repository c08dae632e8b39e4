"""Deterministic in-memory network.

A single-threaded discrete-event simulator. Every byte chunk, connection
accept, end-of-stream, and timer is an event on a virtual clock; the caller
advances time with :meth:`SimNet.step`. Same seed and same calls give the
same delivery order and timestamps.
"""

from __future__ import annotations

import heapq
import itertools
import random
from typing import Callable, NamedTuple, Optional

from equicom.transport.base import (
    Address,
    AddressInUse,
    ConnectionClosed,
    ConnectionRefused,
    UnsupportedScheme,
)


class SimEvent(NamedTuple):
    time: int
    kind: str  # accept | data | timer
    detail: str


class _Scheduled:
    __slots__ = ("fn", "kind", "detail", "cancelled")

    def __init__(self, fn, kind, detail):
        self.fn = fn
        self.kind = kind
        self.detail = detail
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class _Segment:
    """Bytes (and possibly end-of-stream) arriving at one instant on one direction."""

    __slots__ = ("at", "data", "eof", "done")

    def __init__(self, at: int):
        self.at = at
        self.data = bytearray()
        self.eof = False
        self.done = False


class SimEndpoint:
    def __init__(self, net: "SimNet", address: Address, on_accept):
        self._net = net
        self.address = address
        self.on_accept = on_accept
        self.backlog: list[SimConnection] = []
        self.closed = False

    def accept(self) -> "SimConnection":
        if not self.backlog:
            raise BlockingIOError("no pending connection")
        return self.backlog.pop(0)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._net._endpoints.pop(self.address.locator, None)


class SimConnection:
    """One side of a simulated duplex byte stream."""

    def __init__(self, net: "SimNet", local: Address, peer: Address):
        self._net = net
        self.local = local
        self.peer = peer
        self._other: Optional[SimConnection] = None
        self._buf = bytearray()
        self._last_arrival = 0
        self._tail: Optional[_Segment] = None
        self._on_data: Optional[Callable[[bytes], None]] = None
        self._on_close: Optional[Callable[[], None]] = None
        self.closed = False
        self.peer_closed = False

    def attach(self, on_data, on_close) -> None:
        self._on_data = on_data
        self._on_close = on_close
        if self._buf:
            data = bytes(self._buf)
            self._buf.clear()
            on_data(data)
        if self.peer_closed:
            on_close()

    def _arrival(self) -> int:
        at = max(self._net.now + self._net.draw_latency(), self._last_arrival)
        self._last_arrival = at
        return at

    def _segment(self) -> _Segment:
        at = self._arrival()
        tail = self._tail
        if tail is not None and tail.at == at and not tail.done:
            return tail
        seg = _Segment(at)
        other = self._other

        def arrive() -> None:
            seg.done = True
            if seg.data:
                other._deliver(bytes(seg.data))
            if seg.eof:
                other._eof()

        self._net._schedule(at, arrive, "data", f"{self.local}->{self.peer}", network=True)
        self._tail = seg
        return seg

    def send_bytes(self, data: bytes) -> None:
        if self.closed or self.peer_closed:
            raise ConnectionClosed(f"connection to {self.peer} is closed")
        if data:
            self._segment().data += data

    def recv_bytes(self, max_bytes: int = 65536) -> bytes:
        if self._buf:
            out = bytes(self._buf[:max_bytes])
            del self._buf[:max_bytes]
            return out
        if self.peer_closed:
            return b""
        if self.closed:
            raise ConnectionClosed(f"connection to {self.peer} is closed")
        raise BlockingIOError("no data available")

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._segment().eof = True

    def _deliver(self, data: bytes) -> None:
        if self.closed:
            return
        if self._on_data is not None:
            self._on_data(data)
        else:
            self._buf += data

    def _eof(self) -> None:
        if self.closed or self.peer_closed:
            return
        self.peer_closed = True
        if self._on_close is not None:
            self._on_close()


class SimNet:
    """Seeded event scheduler plus an address space of simulated endpoints."""

    threaded = False

    def __init__(self, seed: int = 0, latency: tuple[int, int] = (1, 5)):
        lo, hi = latency
        if not 0 <= lo <= hi:
            raise ValueError(f"bad latency bounds {latency}")
        self.seed = seed
        self.latency = (lo, hi)
        self.rng = random.Random(seed)
        self.now = 0
        self._queue: list = []
        self._order = itertools.count()
        self._endpoints: dict[str, SimEndpoint] = {}
        self._ephemeral = itertools.count(1)
        self.in_flight = 0
        self.listen_calls: list[str] = []
        self.trace: list[SimEvent] = []
        self.record_trace = False

    # -- scheduling --

    def draw_latency(self) -> int:
        return self.rng.randint(*self.latency)

    def _schedule(self, at: int, fn, kind: str, detail: str = "", network: bool = False):
        item = _Scheduled(fn, kind, detail)
        if network:
            self.in_flight += 1
        heapq.heappush(self._queue, (at, self.rng.random(), next(self._order), network, item))
        return item

    def call_later(self, delay_ms: int, fn) -> _Scheduled:
        return self._schedule(self.now + max(0, int(delay_ms)), fn, "timer")

    def now_ms(self) -> int:
        return self.now

    def step(self) -> Optional[SimEvent]:
        """Apply the earliest pending event; None when nothing is pending."""
        while self._queue:
            at, _, _, network, item = heapq.heappop(self._queue)
            if network:
                self.in_flight -= 1
            if item.cancelled:
                continue
            self.now = max(self.now, at)
            item.fn()
            ev = SimEvent(self.now, item.kind, item.detail)
            if self.record_trace:
                self.trace.append(ev)
            return ev
        return None

    def run_until(self, predicate: Callable[[], bool], timeout_ms: int) -> bool:
        deadline = self.now + timeout_ms
        while not predicate():
            if not self._queue or self._queue[0][0] > deadline:
                self.now = max(self.now, deadline)
                return predicate()
            self.step()
        return True

    def run_for(self, duration_ms: int) -> None:
        deadline = self.now + duration_ms
        while self._queue and self._queue[0][0] <= deadline:
            self.step()
        self.now = max(self.now, deadline)

    def settle(self, timeout_ms: int = 60_000) -> bool:
        """Run until no bytes, accepts, or closes are in flight."""
        return self.run_until(lambda: self.in_flight == 0, timeout_ms)

    # -- address space --

    def listen(self, addr, on_accept=None) -> SimEndpoint:
        addr = Address.parse(addr)
        if addr.scheme != "sim":
            raise UnsupportedScheme(f"SimNet cannot listen on {addr}")
        if addr.locator in self._endpoints:
            raise AddressInUse(str(addr))
        ep = SimEndpoint(self, addr, on_accept)
        self._endpoints[addr.locator] = ep
        self.listen_calls.append(str(addr))
        return ep

    def dial(self, addr) -> SimConnection:
        addr = Address.parse(addr)
        if addr.scheme != "sim":
            raise UnsupportedScheme(f"SimNet cannot dial {addr}")
        ep = self._endpoints.get(addr.locator)
        if ep is None:
            raise ConnectionRefused(str(addr))
        local = Address("sim", f"~{next(self._ephemeral)}")
        ours = SimConnection(self, local, addr)
        theirs = SimConnection(self, addr, local)
        ours._other, theirs._other = theirs, ours

        def accept() -> None:
            if ep.closed:
                theirs.closed = True
                ours._eof()
                return
            if ep.on_accept is not None:
                ep.on_accept(theirs)
            else:
                ep.backlog.append(theirs)

        ours._last_arrival = self.now + self.draw_latency()
        self._schedule(ours._last_arrival, accept, "accept", f"{local}->{addr}", network=True)
        return ours

    def attach(self, conn: SimConnection, on_data, on_close, gate=None) -> None:
        conn.attach(on_data, on_close)

    def drop_connection(self, conn: SimConnection) -> None:
        """Failure injection: both ends observe end-of-stream now."""
        other = conn._other
        for side in (conn, other):
            if side is not None and not side.closed:
                side.closed = True
        for side in (conn, other):
            if side is not None and side._on_close is not None and not side.peer_closed:
                side.peer_closed = True
                side._on_close()
