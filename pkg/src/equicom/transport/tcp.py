"""Plain stream-socket transport.

Each connection gets a writer thread (so sends never block the caller) and,
once attached, a reader thread that hands chunks to a callback.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Optional

from equicom.transport.base import (
    Address,
    AddressInUse,
    ConnectionClosed,
    ConnectionRefused,
    Timeout,
    UnsupportedScheme,
)

log = logging.getLogger(__name__)

_CLOSE = object()


class TcpConnection:
    def __init__(self, sock: socket.socket, peer: Address):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self.peer = peer
        self.closed = False
        self._out: "queue.Queue" = queue.Queue()
        self._writer = threading.Thread(target=self._write_loop, daemon=True,
                                        name=f"tcp-writer-{peer}")
        self._writer.start()

    def _write_loop(self) -> None:
        while True:
            item = self._out.get()
            if item is _CLOSE:
                break
            try:
                self._sock.sendall(item)
            except OSError as exc:
                log.debug("write to %s failed: %s", self.peer, exc)
                break
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def send_bytes(self, data: bytes) -> None:
        if self.closed:
            raise ConnectionClosed(f"connection to {self.peer} is closed")
        if data:
            self._out.put(bytes(data))

    def recv_bytes(self, max_bytes: int = 65536) -> bytes:
        try:
            return self._sock.recv(max_bytes)
        except OSError:
            if self.closed:
                raise ConnectionClosed(f"connection to {self.peer} is closed") from None
            return b""

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._out.put(_CLOSE)


class TcpEndpoint:
    def __init__(self, sock: socket.socket, address: Address, on_accept):
        self._sock = sock
        self.address = address
        self.on_accept = on_accept
        self._backlog: "queue.Queue[TcpConnection]" = queue.Queue()
        self.closed = False
        self._thread = threading.Thread(target=self._accept_loop, daemon=True,
                                        name=f"tcp-accept-{address}")
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self.closed:
            try:
                sock, (host, port) = self._sock.accept()[:2]
            except OSError:
                break
            conn = TcpConnection(sock, Address("tcp", f"{host}:{port}"))
            if self.on_accept is not None:
                self.on_accept(conn)
            else:
                self._backlog.put(conn)

    def accept(self, timeout: Optional[float] = None) -> TcpConnection:
        try:
            return self._backlog.get(timeout=timeout)
        except queue.Empty:
            raise Timeout("no inbound connection") from None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()


class _Timer:
    def __init__(self, delay_ms: int, fn):
        self._t = threading.Timer(delay_ms / 1000.0, fn)
        self._t.daemon = True
        self._t.start()

    def cancel(self) -> None:
        self._t.cancel()


class TcpTransport:
    threaded = True

    def __init__(self, connect_timeout: float = 5.0):
        self.connect_timeout = connect_timeout
        self.listen_calls: list[str] = []
        self._lock = threading.Lock()
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def call_later(self, delay_ms: int, fn) -> _Timer:
        return _Timer(delay_ms, fn)

    def listen(self, addr, on_accept=None) -> TcpEndpoint:
        addr = Address.parse(addr)
        if addr.scheme != "tcp":
            raise UnsupportedScheme(f"tcp transport cannot listen on {addr}")
        host, port = addr.host_port
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            raise AddressInUse(f"{addr}: {exc}") from None
        sock.listen(128)
        bound = Address("tcp", f"{host}:{sock.getsockname()[1]}")
        with self._lock:
            self.listen_calls.append(str(bound))
        return TcpEndpoint(sock, bound, on_accept)

    def dial(self, addr) -> TcpConnection:
        addr = Address.parse(addr)
        if addr.scheme != "tcp":
            raise UnsupportedScheme(f"tcp transport cannot dial {addr}")
        try:
            sock = socket.create_connection(addr.host_port, timeout=self.connect_timeout)
        except socket.timeout:
            raise Timeout(str(addr)) from None
        except OSError as exc:
            raise ConnectionRefused(f"{addr}: {exc}") from None
        sock.settimeout(None)
        return TcpConnection(sock, addr)

    def attach(self, conn: TcpConnection, on_data, on_close, gate: Optional[threading.Event] = None) -> None:
        def read_loop() -> None:
            while True:
                if gate is not None:
                    gate.wait()
                try:
                    data = conn.recv_bytes() if not conn.closed else b""
                except ConnectionClosed:
                    data = b""
                if not data:
                    break
                on_data(data)
            on_close()

        threading.Thread(target=read_loop, daemon=True, name=f"tcp-reader-{conn.peer}").start()
