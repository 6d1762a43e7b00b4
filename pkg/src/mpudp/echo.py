"""Event loop tying an Endpoint to real UDP sockets (echo demo)."""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

from .session import Endpoint
from .transport import UdpTransport

log = logging.getLogger(__name__)


def monotonic_ms() -> float:
    return time.monotonic() * 1000.0


class EchoHost:
    """Pumps datagrams between a transport and an endpoint.

    A server echoes every application payload back on its current flow; a
    client hands payloads to ``on_payload``.
    """

    def __init__(
        self,
        endpoint: Endpoint,
        transport: UdpTransport,
        clock: Callable[[], float] = monotonic_ms,
        on_payload: Optional[Callable[[bytes], None]] = None,
    ):
        self.endpoint = endpoint
        self.transport = transport
        self.clock = clock
        self.on_payload = on_payload
        self.sent = 0
        self.received = 0

    def _send(self, dgrams) -> None:
        for d in dgrams:
            if self.transport.send(d):
                self.sent += 1

    def send(self, payload: bytes) -> None:
        self._send([self.endpoint.send_data(payload, self.clock())])

    def step(self, max_wait: float = 0.5) -> None:
        """Wait for traffic or the next timer (at most ``max_wait`` s), then run both."""
        now = self.clock()
        wake = self.endpoint.next_wakeup(now)
        timeout = max_wait if wake is None else min(max_wait, max(0.0, (wake - now) / 1000.0))
        for d in self.transport.recv(timeout):
            now = self.clock()
            self.received += 1
            result = self.endpoint.receive(d, now)
            self._send(result.actions)
            if result.payload is None:
                continue
            if self.endpoint.is_client:
                if self.on_payload is not None:
                    self.on_payload(result.payload)
            else:
                self._send([self.endpoint.send_data(result.payload, now)])
        now = self.clock()
        wake = self.endpoint.next_wakeup(now)
        if wake is not None and wake <= now:
            self._send(self.endpoint.advance(now))

    def run_for(self, seconds: float) -> None:
        deadline = time.monotonic() + seconds
        while time.monotonic() < deadline:
            self.step(min(0.05, max(0.0, deadline - time.monotonic())))


def flow_report(endpoint: Endpoint) -> str:
    lines = []
    for flow in endpoint.flow_table:
        e = flow.estimator
        srtt = "-" if e.srtt is None else f"{e.srtt:.1f}"
        mark = "*" if flow.id == endpoint.current_flow else " "
        lines.append(f"{mark} flow {flow.id:3d} {flow.key}  srtt={srtt} idle={e.idle_time:.0f}")
    return "\n".join(lines)
