"""Packet header and address sub-message codec.

Header layout (14 octets, big-endian)::

    0               8        10          12               14
    | nonce (64)    | flags  | timestamp | timestamp reply |

The nonce packs the direction in its top bit, a 15-bit flow ID and a
48-bit sequence number.  Address sub-messages are
``length(1) | family(1) | port(2) | address(length - 3)``.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Union

HEADER_LEN = 14
NONCE_LEN = 8

PROBE_FLAG = 0x0001
ADDR_FLAG = 0x0002
KNOWN_FLAGS = PROBE_FLAG | ADDR_FLAG

MAX_FLOW_ID = (1 << 15) - 1
MAX_SEQNO = (1 << 48) - 1

FAMILY_IPV4 = 4
FAMILY_IPV6 = 6
_ADDR_LEN = {FAMILY_IPV4: 4, FAMILY_IPV6: 16}

_HEADER = struct.Struct("!QHHH")

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]


class WireError(ValueError):
    pass


class TooShort(WireError):
    pass


class MalformedFlags(WireError):
    pass


class Malformed(WireError):
    pass


class Direction(IntEnum):
    TO_SERVER = 0
    TO_CLIENT = 1


@dataclass(frozen=True)
class PacketHeader:
    direction: Direction
    flow_id: int
    seqno: int
    flags: int = 0
    timestamp: int = 0
    timestamp_reply: int = 0

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 0 <= self.flow_id <= MAX_FLOW_ID:
            raise ValueError(f"flow_id out of range: {self.flow_id}")
        if not 0 <= self.seqno <= MAX_SEQNO:
            raise ValueError(f"seqno out of range: {self.seqno}")
        if self.flags & ~KNOWN_FLAGS:
            raise ValueError(f"unknown flag bits: {self.flags:#06x}")
        if self.flags == KNOWN_FLAGS:
            raise MalformedFlags("PROBE_FLAG and ADDR_FLAG are exclusive")
        for name in ("timestamp", "timestamp_reply"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFFFF:
                raise ValueError(f"{name} out of range: {value}")

    @property
    def nonce(self) -> int:
        return (int(self.direction) << 63) | (self.flow_id << 48) | self.seqno

    @property
    def is_probe(self) -> bool:
        return bool(self.flags & PROBE_FLAG)

    @property
    def is_addr(self) -> bool:
        return bool(self.flags & ADDR_FLAG)

    @property
    def is_data(self) -> bool:
        return self.flags == 0


def encode_header(h: PacketHeader) -> bytes:
    return _HEADER.pack(h.nonce, h.flags, h.timestamp, h.timestamp_reply)


def decode_header(b: bytes) -> PacketHeader:
    if len(b) < HEADER_LEN:
        raise TooShort(f"need {HEADER_LEN} octets, got {len(b)}")
    nonce, flags, ts, tsr = _HEADER.unpack_from(b)
    flags &= KNOWN_FLAGS
    if flags == KNOWN_FLAGS:
        raise MalformedFlags("PROBE_FLAG and ADDR_FLAG both set")
    return PacketHeader(
        direction=Direction(nonce >> 63),
        flow_id=(nonce >> 48) & MAX_FLOW_ID,
        seqno=nonce & MAX_SEQNO,
        flags=flags,
        timestamp=ts,
        timestamp_reply=tsr,
    )


@dataclass(frozen=True)
class AddressRecord:
    """An IP address and UDP port."""

    address: IPAddress
    port: int

    def __post_init__(self):
        if not isinstance(self.address, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
            object.__setattr__(self, "address", ipaddress.ip_address(self.address))
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str) -> "AddressRecord":
        """Parse ``1.2.3.4:80`` or ``[::1]:80``."""
        if text.startswith("["):
            host, _, port = text[1:].partition("]:")
        else:
            host, _, port = text.rpartition(":")
        if not host or not port:
            raise ValueError(f"expected address:port, got {text!r}")
        return cls(ipaddress.ip_address(host), int(port))

    @property
    def family(self) -> int:
        return self.address.version

    @property
    def is_loopback(self) -> bool:
        return self.address.is_loopback

    @property
    def is_link_local(self) -> bool:
        return self.address.is_link_local

    def with_port(self, port: int) -> "AddressRecord":
        return AddressRecord(self.address, port)

    def sort_key(self):
        return (self.family, self.address.packed, self.port)

    def __str__(self):
        if self.family == FAMILY_IPV6:
            return f"[{self.address}]:{self.port}"
        return f"{self.address}:{self.port}"


def encode_address_list(addrs: Iterable[AddressRecord]) -> bytes:
    out = bytearray()
    for a in addrs:
        packed = a.address.packed
        out += struct.pack("!BBH", 3 + len(packed), a.family, a.port)
        out += packed
    return bytes(out)


def decode_address_list(b: bytes) -> list[AddressRecord]:
    """Parse consecutive address sub-messages.

    Sub-messages with an unknown family are skipped; a length that overruns
    the buffer or disagrees with a known family raises Malformed.
    """
    out = []
    pos = 0
    while pos < len(b):
        length = b[pos]
        if length < 4 or pos + 1 + length > len(b):
            raise Malformed(f"bad sub-message length {length} at offset {pos}")
        family = b[pos + 1]
        port = struct.unpack_from("!H", b, pos + 2)[0]
        raw = bytes(b[pos + 4 : pos + 1 + length])
        pos += 1 + length
        expected = _ADDR_LEN.get(family)
        if expected is None:
            continue
        if length != 3 + expected:
            raise Malformed(f"family {family} with length {length}")
        out.append(AddressRecord(ipaddress.ip_address(raw), port))
    return out


@dataclass(frozen=True)
class Packet:
    header: PacketHeader
    payload: bytes = b""

    def __post_init__(self):
        if self.header.is_probe and self.payload:
            raise Malformed("probe packets carry no payload")


def encode_packet(p: Packet) -> bytes:
    return encode_header(p.header) + p.payload


def decode_packet(b: bytes) -> Packet:
    return Packet(decode_header(b), bytes(b[HEADER_LEN:]))
