"""UDP sockets with per-packet source address control.

One socket per address family, bound to the wildcard address.  Outgoing
packets carry their source address in an ``IP_PKTINFO`` / ``IPV6_PKTINFO``
control message; incoming packets report their destination address the
same way.  Port hopping opens a fresh socket per family and keeps the last
few old ones open for late replies.
"""

from __future__ import annotations

import ipaddress
import logging
import select
import socket
import struct
from typing import Iterable, Optional

from .session import RETAINED_PORTS, Datagram
from .wire import AddressRecord

log = logging.getLogger(__name__)

# not exported by every Python build; this is the Linux value
IP_PKTINFO = getattr(socket, "IP_PKTINFO", 8)
_AF = {4: socket.AF_INET, 6: socket.AF_INET6}
MAX_DATAGRAM = 65535


def _open(family: int, port: int) -> socket.socket:
    sock = socket.socket(_AF[family], socket.SOCK_DGRAM)
    if family == 6:
        sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_V6ONLY, 1)
        sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_RECVPKTINFO, 1)
        sock.bind(("::", port))
    else:
        sock.setsockopt(socket.IPPROTO_IP, IP_PKTINFO, 1)
        sock.bind(("0.0.0.0", port))
    sock.setblocking(False)
    return sock


def _pktinfo(src: AddressRecord):
    if src.family == 6:
        return (socket.IPPROTO_IPV6, socket.IPV6_PKTINFO, src.address.packed + struct.pack("@I", 0))
    return (socket.IPPROTO_IP, IP_PKTINFO, struct.pack("@I4s4s", 0, src.address.packed, bytes(4)))


def _dst_from_ancillary(ancdata) -> Optional[ipaddress._BaseAddress]:
    for level, kind, data in ancdata:
        if level == socket.IPPROTO_IP and kind == IP_PKTINFO:
            return ipaddress.IPv4Address(data[8:12])
        if level == socket.IPPROTO_IPV6 and kind == socket.IPV6_PKTINFO:
            return ipaddress.IPv6Address(data[:16])
    return None


class UdpTransport:
    def __init__(self, families: Iterable[int] = (4, 6), port: int = 0):
        self.sockets: dict[int, list[socket.socket]] = {}
        for family in sorted(set(families)):
            try:
                sock = _open(family, port)
            except OSError as exc:
                log.warning("no IPv%d socket: %s", family, exc)
                continue
            self.sockets[family] = [sock]
        if not self.sockets:
            raise OSError("could not open any UDP socket")

    def port(self, family: int) -> int:
        return self.sockets[family][0].getsockname()[1]

    @property
    def families(self) -> list[int]:
        return sorted(self.sockets)

    def _all(self):
        for socks in self.sockets.values():
            yield from socks

    def send(self, d: Datagram) -> bool:
        socks = self.sockets.get(d.src.family, [])
        sock = next((s for s in socks if s.getsockname()[1] == d.src.port), None)
        if sock is None:
            log.debug("no socket for %s", d.src)
            return False
        try:
            sock.sendmsg([d.payload], [_pktinfo(d.src)], 0, (str(d.dst.address), d.dst.port))
        except OSError as exc:
            log.info("send %s -> %s failed: %s", d.src, d.dst, exc)
            return False
        return True

    def recv(self, timeout: Optional[float]) -> list[Datagram]:
        """Wait up to ``timeout`` seconds; return everything that is readable."""
        socks = list(self._all())
        readable, _, _ = select.select(socks, [], [], timeout)
        out = []
        for sock in readable:
            while True:
                try:
                    data, anc, _, peer = sock.recvmsg(MAX_DATAGRAM, socket.CMSG_SPACE(32))
                except (BlockingIOError, InterruptedError):
                    break
                except OSError as exc:
                    log.info("recv failed: %s", exc)
                    break
                dst_ip = _dst_from_ancillary(anc)
                if dst_ip is None:
                    continue
                src_ip = ipaddress.ip_address(peer[0].split("%", 1)[0])
                out.append(Datagram(
                    AddressRecord(src_ip, peer[1]),
                    AddressRecord(dst_ip, sock.getsockname()[1]),
                    data,
                ))
        return out

    def hop(self, family: int, old_port: int) -> int:
        """Open a fresh socket for ``family``; older ones stay open for receipt."""
        sock = _open(family, 0)
        socks = self.sockets[family]
        socks.insert(0, sock)
        for stale in socks[RETAINED_PORTS + 1 :]:
            stale.close()
        del socks[RETAINED_PORTS + 1 :]
        return sock.getsockname()[1]

    def close(self) -> None:
        for sock in self._all():
            sock.close()
        self.sockets.clear()


def local_addresses(families: Iterable[int] = (4, 6)) -> list[ipaddress._BaseAddress]:
    """Addresses of the local interfaces, link-local ones left out.

    Link-local IPv6 addresses would need a scope ID on every send.
    """
    import psutil

    wanted = {_AF[f] for f in families}
    out = []
    for addrs in psutil.net_if_addrs().values():
        for a in addrs:
            if a.family not in wanted:
                continue
            ip = ipaddress.ip_address(a.address.split("%", 1)[0])
            if ip.is_link_local:
                continue
            out.append(ip)
    return sorted(set(out), key=lambda ip: (ip.version, ip.packed))
