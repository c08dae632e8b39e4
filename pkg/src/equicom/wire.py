"""Binary frame codec.

Header: magic ``UC`` | version 0x01 | kind u8 | body_len u32, all big-endian.
Strings are a u16 byte length followed by UTF-8. DATA frames carry exactly one
(mechanism, tag) pair: the routing list never travels past the sender.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import ClassVar, Union

from equicom.routing import Mechanism

MAGIC = b"\x55\x43"
VERSION = 0x01
HEADER = struct.Struct("!2sBBI")
HEADER_SIZE = HEADER.size

MAX_STRING = 0xFFFF
MAX_COUNT = 0xFFFF
MAX_PAYLOAD = 0xFFFFFFFF

_U8 = struct.Struct("!B")
_U16 = struct.Struct("!H")
_U32 = struct.Struct("!I")
_U64 = struct.Struct("!Q")


class Kind(enum.IntEnum):
    HELLO = 0x01
    HELLO_ACK = 0x02
    PEERS = 0x03
    SUB = 0x04
    DATA = 0x05
    PING = 0x06
    PONG = 0x07
    BYE = 0x08


class SubOp(enum.IntEnum):
    ADD = 1
    REMOVE = 2


class WireError(Exception):
    pass


class OversizeField(WireError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class UnknownKind(WireError):
    pass


class Truncated(WireError):
    pass


class MalformedBody(WireError):
    pass


@dataclass(frozen=True)
class Hello:
    KIND: ClassVar[Kind] = Kind.HELLO
    node_id: int
    listen_addr: str
    subscriptions: tuple[str, ...] = ()


@dataclass(frozen=True)
class HelloAck:
    KIND: ClassVar[Kind] = Kind.HELLO_ACK
    node_id: int
    listen_addr: str
    subscriptions: tuple[str, ...] = ()


@dataclass(frozen=True)
class PeerEntry:
    node_id: int
    addr: str
    subscriptions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Peers:
    KIND: ClassVar[Kind] = Kind.PEERS
    entries: tuple[PeerEntry, ...] = ()


@dataclass(frozen=True)
class Sub:
    KIND: ClassVar[Kind] = Kind.SUB
    node_id: int
    op: SubOp
    tag: str


@dataclass(frozen=True)
class Data:
    KIND: ClassVar[Kind] = Kind.DATA
    sender: int
    seq: int
    mechanism: Mechanism
    tag: str
    payload: bytes


@dataclass(frozen=True)
class Ping:
    KIND: ClassVar[Kind] = Kind.PING
    nonce: int


@dataclass(frozen=True)
class Pong:
    KIND: ClassVar[Kind] = Kind.PONG
    nonce: int


@dataclass(frozen=True)
class Bye:
    KIND: ClassVar[Kind] = Kind.BYE


Frame = Union[Hello, HelloAck, Peers, Sub, Data, Ping, Pong, Bye]


# -- encoding ---------------------------------------------------------------


def _uint(packer: struct.Struct, value: int, what: str) -> bytes:
    try:
        return packer.pack(value)
    except struct.error:
        raise ValueError(f"{what}={value!r} out of range") from None


def _string(value: str, what: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > MAX_STRING:
        raise OversizeField(f"{what} is {len(raw)} bytes (max {MAX_STRING})")
    return _U16.pack(len(raw)) + raw


def _string_list(values: tuple[str, ...], what: str) -> bytes:
    if len(values) > MAX_COUNT:
        raise OversizeField(f"{len(values)} {what} (max {MAX_COUNT})")
    return _U16.pack(len(values)) + b"".join(_string(v, what) for v in values)


def _encode_body(frame: Frame) -> bytes:
    if isinstance(frame, (Hello, HelloAck)):
        return (
            _uint(_U64, frame.node_id, "node_id")
            + _string(frame.listen_addr, "listen_addr")
            + _string_list(frame.subscriptions, "subscriptions")
        )
    if isinstance(frame, Peers):
        if len(frame.entries) > MAX_COUNT:
            raise OversizeField(f"{len(frame.entries)} peer entries (max {MAX_COUNT})")
        parts = [_U16.pack(len(frame.entries))]
        for e in frame.entries:
            parts.append(_uint(_U64, e.node_id, "node_id"))
            parts.append(_string(e.addr, "addr"))
            parts.append(_string_list(e.subscriptions, "subscriptions"))
        return b"".join(parts)
    if isinstance(frame, Sub):
        return (
            _uint(_U64, frame.node_id, "node_id")
            + _U8.pack(SubOp(frame.op))
            + _string(frame.tag, "tag")
        )
    if isinstance(frame, Data):
        if len(frame.payload) > MAX_PAYLOAD:
            raise OversizeField(f"payload is {len(frame.payload)} bytes (max {MAX_PAYLOAD})")
        return b"".join((
            _uint(_U64, frame.sender, "sender"),
            _uint(_U64, frame.seq, "seq"),
            _U8.pack(Mechanism(frame.mechanism)),
            _string(frame.tag, "tag"),
            _U32.pack(len(frame.payload)),
            bytes(frame.payload),
        ))
    if isinstance(frame, (Ping, Pong)):
        return _uint(_U64, frame.nonce, "nonce")
    if isinstance(frame, Bye):
        return b""
    raise TypeError(f"not a frame: {frame!r}")


def encode_frame(frame: Frame) -> bytes:
    body = _encode_body(frame)
    if len(body) > MAX_PAYLOAD:
        raise OversizeField(f"frame body is {len(body)} bytes")
    return HEADER.pack(MAGIC, VERSION, frame.KIND, len(body)) + body


# -- decoding ---------------------------------------------------------------


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: memoryview):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if end > len(self.buf):
            raise MalformedBody("body ends mid-field")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return str(raw, "utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedBody(f"invalid UTF-8: {exc}") from None

    def strings(self) -> tuple[str, ...]:
        return tuple(self.string() for _ in range(self.u16()))


def _decode_body(kind: Kind, body: memoryview) -> Frame:
    r = _Reader(body)
    if kind in (Kind.HELLO, Kind.HELLO_ACK):
        cls = Hello if kind is Kind.HELLO else HelloAck
        frame: Frame = cls(r.u64(), r.string(), r.strings())
    elif kind is Kind.PEERS:
        frame = Peers(tuple(PeerEntry(r.u64(), r.string(), r.strings()) for _ in range(r.u16())))
    elif kind is Kind.SUB:
        node_id, op = r.u64(), r.u8()
        if op not in (1, 2):
            raise MalformedBody(f"bad SUB op {op}")
        frame = Sub(node_id, SubOp(op), r.string())
    elif kind is Kind.DATA:
        sender, seq, mech = r.u64(), r.u64(), r.u8()
        if mech not in (1, 2, 3, 4):
            raise MalformedBody(f"bad mechanism {mech}")
        tag = r.string()
        payload = bytes(r.take(r.u32()))
        frame = Data(sender, seq, Mechanism(mech), tag, payload)
    elif kind in (Kind.PING, Kind.PONG):
        frame = (Ping if kind is Kind.PING else Pong)(r.u64())
    else:
        frame = Bye()
    if r.pos != len(body):
        raise MalformedBody(f"{len(body) - r.pos} unparsed body bytes")
    return frame


def read_frame(data: bytes) -> tuple[Frame, int]:
    """Decode the frame at the start of ``data``; return it and bytes consumed."""
    view = memoryview(data)
    if len(view) < 2 or bytes(view[:2]) != MAGIC:
        if len(view) < 2 and bytes(view) == MAGIC[: len(view)]:
            raise Truncated("incomplete header")
        raise BadMagic(f"bad magic {bytes(view[:2]).hex()}")
    if len(view) < HEADER_SIZE:
        if len(view) >= 3 and view[2] != VERSION:
            raise UnsupportedVersion(f"version {view[2]}")
        raise Truncated("incomplete header")
    _, version, kind, body_len = HEADER.unpack(view[:HEADER_SIZE])
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnknownKind(f"kind 0x{kind:02x}") from None
    end = HEADER_SIZE + body_len
    if len(view) < end:
        raise Truncated(f"body needs {body_len} bytes, have {len(view) - HEADER_SIZE}")
    return _decode_body(kind, view[HEADER_SIZE:end]), end


def decode_frame(data: bytes) -> Frame:
    return read_frame(data)[0]


class FrameDecoder:
    """Incremental decoder for a byte stream of back-to-back frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        frames = []
        while len(self._buf) >= 2:
            try:
                frame, used = read_frame(self._buf)
            except Truncated:
                break
            frames.append(frame)
            del self._buf[:used]
        if len(self._buf) == 1 and self._buf[0] != MAGIC[0]:
            raise BadMagic(f"bad magic {bytes(self._buf).hex()}")
        return frames

    @property
    def buffered(self) -> int:
        return len(self._buf)
