from equicom.transport.base import (
    Address,
    AddressInUse,
    ConnectionClosed,
    ConnectionRefused,
    Timeout,
    TransportError,
    UnsupportedScheme,
)
from equicom.transport.sim import SimConnection, SimEndpoint, SimEvent, SimNet
from equicom.transport.tcp import TcpConnection, TcpEndpoint, TcpTransport


def sim_step(net: SimNet):
    """Apply one simulated event; returns it, or None when idle."""
    return net.step()


__all__ = [
    "Address",
    "AddressInUse",
    "ConnectionClosed",
    "ConnectionRefused",
    "SimConnection",
    "SimEndpoint",
    "SimEvent",
    "SimNet",
    "TcpConnection",
    "TcpEndpoint",
    "TcpTransport",
    "Timeout",
    "TransportError",
    "UnsupportedScheme",
    "sim_step",
]
