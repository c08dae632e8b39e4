from __future__ import annotations

from dataclasses import dataclass

SCHEMES = ("tcp", "sim")


class TransportError(Exception):
    pass


class AddressInUse(TransportError):
    pass


class UnsupportedScheme(TransportError):
    pass


class ConnectionRefused(TransportError):
    pass


class Timeout(TransportError):
    pass


class ConnectionClosed(TransportError):
    pass


@dataclass(frozen=True)
class Address:
    scheme: str
    locator: str

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise UnsupportedScheme(f"unsupported scheme {self.scheme!r}")
        if not self.locator:
            raise ValueError("empty address locator")

    @classmethod
    def parse(cls, text: "str | Address") -> "Address":
        if isinstance(text, Address):
            return text
        scheme, sep, rest = text.partition(":")
        if not sep:
            raise ValueError(f"address {text!r} has no scheme")
        if rest.startswith("//"):
            rest = rest[2:]
        return cls(scheme, rest)

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.locator.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp locator must be host:port, got {self.locator!r}")
        return host, int(port)

    def __str__(self) -> str:
        return f"{self.scheme}:{self.locator}"
