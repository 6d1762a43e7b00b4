"""Client and server endpoints.

An endpoint never touches a socket or a clock.  The host pushes incoming
datagrams through :meth:`Endpoint.receive`, asks :meth:`Endpoint.next_wakeup`
when it should next call :meth:`Endpoint.advance`, and sends whatever
datagrams come back.  Every datagram carries a concrete source and
destination address, so the host must be able to pick the source address
per packet.

Datagram layout: ``nonce(8) | seal(nonce, flags | ts | tsr | payload)``.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Protocol

from .flows import (
    BOOTSTRAP_FLOW_ID,
    Flow,
    FlowKey,
    FlowTable,
    filter_pair,
    on_in_order_receipt,
)
from .rtt import make_timestamp, make_timestamp_reply
from .wire import (
    ADDR_FLAG,
    HEADER_LEN,
    NONCE_LEN,
    PROBE_FLAG,
    AddressRecord,
    Direction,
    Packet,
    PacketHeader,
    WireError,
    decode_address_list,
    decode_packet,
    encode_address_list,
    encode_packet,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_DELACK = 100.0
DEFAULT_ADDR_REQUEST_INTERVAL = 30000.0
PORT_HOP_EXPIRIES = 3
RETAINED_PORTS = 3

# observer event kinds
SRTT_UPDATE = "srtt"
IDLE_INCREMENT = "idle"
FLOW_SWITCH = "switch"
PORT_HOP = "hop"


class SessionError(Exception):
    pass


class NoFlow(SessionError):
    pass


class AuthFailure(SessionError):
    pass


class Cipher(Protocol):
    overhead: int

    def seal(self, nonce: bytes, plaintext: bytes) -> bytes: ...

    def open(self, nonce: bytes, ciphertext: bytes) -> bytes: ...


class NullCipher:
    """Identity cipher with an all-zero 16-octet tag."""

    overhead = 16
    _TAG = bytes(16)

    def seal(self, nonce: bytes, plaintext: bytes) -> bytes:
        return plaintext + self._TAG

    def open(self, nonce: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < self.overhead or ciphertext[-self.overhead :] != self._TAG:
            raise AuthFailure("bad tag")
        return ciphertext[: -self.overhead]


class HmacCipher:
    """Authentication only: plaintext followed by a truncated HMAC-SHA256 tag.

    Keeps the nonce discipline and rejects forged or corrupted packets, but
    does not hide the payload.
    """

    overhead = 16

    def __init__(self, key: bytes):
        if not key:
            raise ValueError("empty key")
        self.key = bytes(key)

    def _tag(self, nonce: bytes, data: bytes) -> bytes:
        return hmac.new(self.key, nonce + data, hashlib.sha256).digest()[: self.overhead]

    def seal(self, nonce: bytes, plaintext: bytes) -> bytes:
        return plaintext + self._tag(nonce, plaintext)

    def open(self, nonce: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < self.overhead:
            raise AuthFailure("truncated")
        data, tag = ciphertext[: -self.overhead], ciphertext[-self.overhead :]
        if not hmac.compare_digest(tag, self._tag(nonce, data)):
            raise AuthFailure("bad tag")
        return data


class NonceRecordingCipher:
    """Wraps a cipher and refuses to seal under a nonce twice."""

    def __init__(self, inner: Optional[Cipher] = None):
        self.inner = inner or NullCipher()
        self.overhead = self.inner.overhead
        self.sealed: set[bytes] = set()

    def seal(self, nonce: bytes, plaintext: bytes) -> bytes:
        if nonce in self.sealed:
            raise AssertionError(f"nonce reused: {nonce.hex()}")
        self.sealed.add(nonce)
        return self.inner.seal(nonce, plaintext)

    def open(self, nonce: bytes, ciphertext: bytes) -> bytes:
        return self.inner.open(nonce, ciphertext)


@dataclass(frozen=True)
class Datagram:
    src: AddressRecord
    dst: AddressRecord
    payload: bytes


OutgoingDatagram = Datagram
IncomingDatagram = Datagram


@dataclass
class Received:
    payload: Optional[bytes] = None
    actions: list[Datagram] = field(default_factory=list)


class Role(Enum):
    CLIENT = "client"
    SERVER = "server"


def seal_packet(cipher: Cipher, packet: Packet) -> bytes:
    raw = encode_packet(packet)
    nonce = raw[:NONCE_LEN]
    return nonce + cipher.seal(nonce, raw[NONCE_LEN:])


def open_packet(cipher: Cipher, data: bytes) -> Packet:
    if len(data) < HEADER_LEN:
        raise AuthFailure("datagram too short")
    nonce = data[:NONCE_LEN]
    return decode_packet(nonce + cipher.open(nonce, data[NONCE_LEN:]))


def _next_port(family: int, old: int) -> int:
    return 1024 + (old - 1024 + 1) % (65536 - 1024)


class Endpoint:
    """One side of a multipath session.

    Use :meth:`client` or :meth:`server` to build one.  A freshly built
    client has its bootstrap probes and address request due immediately,
    so the host should call :meth:`advance` before sending data.
    """

    def __init__(
        self,
        role: Role,
        local_addrs: Iterable[AddressRecord],
        *,
        server_addr: Optional[AddressRecord] = None,
        now: float = 0.0,
        max_delack: float = DEFAULT_MAX_DELACK,
        addr_request_interval: float = DEFAULT_ADDR_REQUEST_INTERVAL,
        cipher: Optional[Cipher] = None,
        port_allocator: Optional[Callable[[int, int], int]] = None,
        observer: Optional[Callable[[str, int, float], None]] = None,
    ):
        self.role = role
        self.max_delack = max_delack
        self.addr_request_interval = addr_request_interval
        self.cipher = cipher or NullCipher()
        self.port_allocator = port_allocator or _next_port
        self.observer = observer
        self.flow_table = FlowTable(max_delack)
        self.local_addrs = sorted(set(local_addrs), key=AddressRecord.sort_key)
        self.remote_addrs: list[AddressRecord] = []
        self.current_flow: Optional[int] = None
        self.pending_replies: dict[int, float] = {}
        self.retained_ports: dict[int, list[int]] = {}
        self.consecutive_timeouts: dict[int, int] = {}
        self.next_addr_request_at: Optional[float] = None
        self.server_addr = server_addr
        self._direction_out = (
            Direction.TO_SERVER if role is Role.CLIENT else Direction.TO_CLIENT
        )

        if role is Role.CLIENT:
            if server_addr is None:
                raise ValueError("a client needs the server's address")
            src = next((a for a in self.local_addrs if filter_pair(a, server_addr)), None)
            if src is None:
                raise NoFlow(f"no local address can reach {server_addr}")
            self.flow_table.add_bootstrap(FlowKey(src, server_addr), now)
            self.remote_addrs = [server_addr]
            self.flow_table.rebuild(self.local_addrs, self.remote_addrs, now)
            self.current_flow = BOOTSTRAP_FLOW_ID
            self.next_addr_request_at = now

    @classmethod
    def client(cls, local_addrs, server_addr, now=0.0, **kwargs) -> "Endpoint":
        return cls(Role.CLIENT, local_addrs, server_addr=server_addr, now=now, **kwargs)

    @classmethod
    def server(cls, local_addrs, **kwargs) -> "Endpoint":
        return cls(Role.SERVER, local_addrs, **kwargs)

    @property
    def is_client(self) -> bool:
        return self.role is Role.CLIENT

    def _emit(self, kind: str, flow_id: int, value: float) -> None:
        if self.observer is not None:
            self.observer(kind, flow_id, value)

    # -- sending -----------------------------------------------------------

    def _packet_on(self, flow: Flow, flags: int, payload: bytes, now: float,
                   seqno: Optional[int] = None) -> Datagram:
        header = PacketHeader(
            direction=self._direction_out,
            flow_id=flow.id,
            seqno=flow.take_seqno() if seqno is None else seqno,
            flags=flags,
            timestamp=make_timestamp(now),
            timestamp_reply=make_timestamp_reply(flow.ts_state, now),
        )
        data = seal_packet(self.cipher, Packet(header, payload))
        return Datagram(flow.key.src, flow.key.dst, data)

    def _current(self) -> Flow:
        flow = self.flow_table.get(self.current_flow) if self.current_flow is not None else None
        if flow is None:
            raise NoFlow("no flow to send on")
        return flow

    def send_data(self, app_payload: bytes, now: float) -> Datagram:
        flow = self._current()
        # a pending probe reply on this flow rides on the data packet
        self.pending_replies.pop(flow.id, None)
        return self._packet_on(flow, 0, app_payload, now)

    def request_addresses(self, now: float) -> Datagram:
        if not self.is_client:
            raise SessionError("only the client requests addresses")
        dgram = self._packet_on(self._current(), ADDR_FLAG, b"", now)
        self.next_addr_request_at = now + self.addr_request_interval
        return dgram

    # -- timers ------------------------------------------------------------

    def next_wakeup(self, now: Optional[float] = None) -> Optional[float]:
        times = list(self.pending_replies.values())
        if self.is_client:
            times.append(self.next_addr_request_at)
            times.append(self.flow_table.next_probe_deadline())
        times = [t for t in times if t is not None]
        return min(times, default=None)

    def advance(self, now: float) -> list[Datagram]:
        out = []
        for flow_id, due in sorted(self.pending_replies.items()):
            if due <= now:
                del self.pending_replies[flow_id]
                flow = self.flow_table.get(flow_id)
                if flow is not None:
                    out.append(self._packet_on(flow, PROBE_FLAG, b"", now))
        if not self.is_client:
            return out

        for action in self.flow_table.on_timer(now):
            flow = self.flow_table.flows[action.flow_id]
            if action.expired:
                self._emit(IDLE_INCREMENT, flow.id, action.idle_step)
                self.consecutive_timeouts[flow.id] = self.consecutive_timeouts.get(flow.id, 0) + 1
            out.append(self._packet_on(flow, PROBE_FLAG, b"", now, seqno=action.seqno))
        self._reselect()

        if self._should_hop():
            self.port_hop(now)
        if self.next_addr_request_at is not None and self.next_addr_request_at <= now:
            out.append(self.request_addresses(now))
        return out

    def _should_hop(self) -> bool:
        if not self.flow_table.flows:
            return False
        return all(
            self.consecutive_timeouts.get(fid, 0) >= PORT_HOP_EXPIRIES
            for fid in self.flow_table.flows
        )

    # -- receiving ---------------------------------------------------------

    def _accepts_port(self, addr: AddressRecord) -> bool:
        if not self.is_client:
            return True
        ports = {a.port for a in self.local_addrs if a.family == addr.family}
        ports.update(self.retained_ports.get(addr.family, ()))
        return addr.port in ports

    def receive(self, dgram: Datagram, now: float) -> Received:
        result = Received()
        if not self._accepts_port(dgram.dst):
            return result
        try:
            packet = open_packet(self.cipher, dgram.payload)
        except (AuthFailure, WireError) as exc:
            log.debug("dropping datagram from %s: %s", dgram.src, exc)
            return result
        header = packet.header
        if header.direction is self._direction_out:
            return result

        if self.is_client:
            flow = self.flow_table.get(header.flow_id)
            if flow is None:
                log.debug("unknown flow %d", header.flow_id)
                return result
        else:
            flow = self._server_flow(header, dgram, now)

        in_order = flow.is_in_order(header.seqno)
        if in_order:
            if not self.is_client and flow.key != FlowKey(dgram.dst, dgram.src):
                self.flow_table.rekey(flow.id, FlowKey(dgram.dst, dgram.src))
            sample = on_in_order_receipt(flow, header, now)
            if sample is not None:
                self._emit(SRTT_UPDATE, flow.id, flow.estimator.srtt)
            if self.is_client:
                self.consecutive_timeouts.clear()

        if header.is_data:
            result.payload = packet.payload
            if in_order and not self.is_client:
                self.current_flow = flow.id
        elif header.is_probe:
            if not self.is_client:
                if self.max_delack <= 0:
                    result.actions.append(self._packet_on(flow, PROBE_FLAG, b"", now))
                else:
                    self.pending_replies.setdefault(flow.id, now + self.max_delack)
        elif header.is_addr:
            if not self.is_client:
                # out-of-order requests are ignored: no amplification by replay
                if in_order:
                    payload = encode_address_list(self.local_addrs)
                    result.actions.append(self._packet_on(flow, ADDR_FLAG, payload, now))
            else:
                self._on_addr_reply(packet.payload, now)

        if self.is_client:
            self._reselect()
        elif self.current_flow is None and in_order:
            self.current_flow = flow.id
        return result

    def _server_flow(self, header: PacketHeader, dgram: Datagram, now: float) -> Flow:
        flow = self.flow_table.get(header.flow_id)
        if flow is None:
            key = FlowKey(dgram.dst, dgram.src)
            stale = self.flow_table.by_key(key)
            if stale is not None:
                self.flow_table.retire(stale.id)
            flow = self.flow_table.add_flow(key, now, flow_id=header.flow_id)
        return flow

    def _on_addr_reply(self, payload: bytes, now: float) -> None:
        try:
            announced = decode_address_list(payload)
        except WireError as exc:
            log.debug("bad address list: %s", exc)
            return
        remote = set(announced)
        remote.add(self.server_addr)
        self.remote_addrs = sorted(remote, key=AddressRecord.sort_key)
        self._rebuild(now)

    # -- addresses ---------------------------------------------------------

    def set_local_addresses(self, addrs: Iterable[AddressRecord], now: float) -> None:
        self.local_addrs = sorted(set(addrs), key=AddressRecord.sort_key)
        if self.is_client:
            self._rebuild(now)

    def _rebuild(self, now: float) -> None:
        self.flow_table.rebuild(self.local_addrs, self.remote_addrs, now)
        for fid in list(self.consecutive_timeouts):
            if fid not in self.flow_table:
                del self.consecutive_timeouts[fid]
        self._reselect()

    def _reselect(self) -> None:
        best = self.flow_table.select_best()
        if best is None:
            if self.current_flow in self.flow_table:
                return
            best = min(self.flow_table.flows, default=None)
        if best != self.current_flow:
            self.current_flow = best
            if best is not None:
                self._emit(FLOW_SWITCH, best, 0.0)

    def port_hop(self, now: float) -> dict[int, int]:
        """Move every local address to a fresh port; return family -> new port."""
        if not self.is_client:
            raise SessionError("only the client hops ports")
        new_ports = {}
        for family in sorted({a.family for a in self.local_addrs}):
            old = next(a.port for a in self.local_addrs if a.family == family)
            new_ports[family] = self.port_allocator(family, old)
            kept = self.retained_ports.setdefault(family, [])
            kept.insert(0, old)
            del kept[RETAINED_PORTS:]
        self.local_addrs = sorted(
            (a.with_port(new_ports[a.family]) for a in self.local_addrs),
            key=AddressRecord.sort_key,
        )
        for flow in list(self.flow_table):
            src = flow.key.src.with_port(new_ports[flow.key.src.family])
            self.flow_table.rekey(flow.id, FlowKey(src, flow.key.dst))
        self.consecutive_timeouts.clear()
        for family, port in new_ports.items():
            self._emit(PORT_HOP, family, port)
        return new_ports
