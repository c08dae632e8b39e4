"""Brokerless symmetric messaging: one communicator, one port, one send."""

from equicom.communicator import (
    Communicator,
    CommunicatorConfig,
    Delivery,
    Diagnostics,
    InvalidConfig,
    Message,
    SendReceipt,
    ShutDown,
    create,
)
from equicom.membership import MembershipConfig, PeerRecord
from equicom.routing import Mechanism, RoutingDirective, match_tag, resolve_recipients
from equicom.transport import Address, SimNet, TcpTransport

__version__ = "0.1.0"

__all__ = [
    "Address",
    "Communicator",
    "CommunicatorConfig",
    "Delivery",
    "Diagnostics",
    "InvalidConfig",
    "MembershipConfig",
    "Mechanism",
    "Message",
    "PeerRecord",
    "RoutingDirective",
    "SendReceipt",
    "ShutDown",
    "SimNet",
    "TcpTransport",
    "create",
    "match_tag",
    "resolve_recipients",
]
