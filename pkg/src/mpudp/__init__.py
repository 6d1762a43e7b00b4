"""Multipath UDP sessions.

Every (local, remote) address pair is a flow.  The client probes each flow,
keeps a smoothed RTT plus an idle-time penalty per flow, and sends on the
flow with the lowest sum; the server answers on whatever flow the client
last used.
"""

from .flows import Flow, FlowKey, FlowTable, filter_pair
from .rtt import RttEstimator, TimestampState
from .session import Datagram, Endpoint, HmacCipher, NullCipher, Role
from .wire import ADDR_FLAG, PROBE_FLAG, AddressRecord, Direction, Packet, PacketHeader

__all__ = [
    "ADDR_FLAG",
    "PROBE_FLAG",
    "AddressRecord",
    "Datagram",
    "Direction",
    "Endpoint",
    "Flow",
    "FlowKey",
    "FlowTable",
    "HmacCipher",
    "NullCipher",
    "Packet",
    "PacketHeader",
    "Role",
    "RttEstimator",
    "TimestampState",
    "filter_pair",
]
