"""Deterministic discrete-event simulator for a client/server pair.

Hosts own addresses; a link joins two addresses and carries every packet
whose (source, destination) pair matches its ends, in either direction.
Links have a fixed one-way delay, an independent per-packet loss
probability and an up/down state.  The two endpoints are driven only
through ``next_wakeup``/``advance``/``receive``, on a 1 ms clock.

Scenario files are line based::

    seed 1
    host c client
    host s server
    addr c 4 10.0.1.2 60001
    addr s 4 10.1.0.1 60000
    link A c:10.0.1.2 s:10.1.0.1 delay=1 loss=0
    set max_delack=100 duration=20000
    at 0 send c 32 every=250 until=20000
    at 7000 delay A 150
    at 9000 down A
    at 12000 up A

Events: ``delay <link> <ms>``, ``loss <link> <p>``, ``down|up <link>``,
``send <host> <bytes> [every=<ms>] [until=<ms>]``,
``addaddr <host> <family> <address> <port>``, ``deladdr <host> <address>``,
``natblock|natunblock <host> <port>``.
"""

from __future__ import annotations

import csv
import heapq
import io
import ipaddress
import math
import random
import shlex
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from . import session as sess
from .session import Datagram, Endpoint
from .wire import HEADER_LEN, AddressRecord, WireError

PACKET_SENT = "PacketSent"
PACKET_DELIVERED = "PacketDelivered"
PACKET_LOST = "PacketLost"
SRTT_UPDATE = "SrttUpdate"
FLOW_SELECTED = "FlowSelected"
IDLE_INCREMENT = "IdleIncrement"
PROBE_SENT = "ProbeSent"

CSV_HEADER = ("time_ms", "kind", "flow_id", "value")

# Ethernet + IP + UDP header bytes around the 14-octet probe, plus the
# padding needed to land on the frame sizes seen on a real link (90 / 72 B).
FRAME_OVERHEAD = {6: 76, 4: 58}

_PARAMS = {
    "max_delack": float,
    "addr_interval": float,
    "routing_delay": int,
    "echo": int,
    "duration": int,
}


class ScenarioError(ValueError):
    pass


@dataclass
class Host:
    name: str
    role: Optional[str] = None
    addrs: list[AddressRecord] = field(default_factory=list)


@dataclass
class LinkModel:
    id: str
    ends: tuple[tuple[str, ipaddress._BaseAddress], tuple[str, ipaddress._BaseAddress]]
    one_way_delay: int = 0
    loss_prob: float = 0.0
    up: bool = True

    def __post_init__(self):
        if self.one_way_delay < 0:
            raise ScenarioError(f"link {self.id}: negative delay")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ScenarioError(f"link {self.id}: loss must be in [0, 1]")


@dataclass(frozen=True)
class ScenarioEvent:
    at: int
    action: str
    args: tuple


@dataclass
class Scenario:
    hosts: dict[str, Host] = field(default_factory=dict)
    links: dict[str, LinkModel] = field(default_factory=dict)
    events: list[ScenarioEvent] = field(default_factory=list)
    seed: int = 0
    max_delack: float = sess.DEFAULT_MAX_DELACK
    addr_interval: float = sess.DEFAULT_ADDR_REQUEST_INTERVAL
    routing_delay: int = 0
    echo: int = 1
    duration: Optional[int] = None

    def host_by_role(self, role: str) -> Host:
        for host in self.hosts.values():
            if host.role == role:
                return host
        raise ScenarioError(f"no {role} host")

    @property
    def end_time(self) -> int:
        if self.duration is not None:
            return self.duration
        last = max((e.at for e in self.events), default=0)
        return last + 10000


@dataclass(frozen=True)
class TraceRecord:
    at: int
    kind: str
    flow_id: int
    value: Union[int, float]


# -- parsing ---------------------------------------------------------------


def _num(text, kind=float, what="value"):
    try:
        return kind(text)
    except ValueError:
        raise ScenarioError(f"bad {what}: {text!r}") from None


def _kv(args):
    out = {}
    rest = []
    for a in args:
        if "=" in a:
            k, _, v = a.partition("=")
            out[k] = v
        else:
            rest.append(a)
    return rest, out


def _addr(family, address, port) -> AddressRecord:
    try:
        rec = AddressRecord(ipaddress.ip_address(address), int(port))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    if rec.family != _num(family, int, "family"):
        raise ScenarioError(f"{address} is not an IPv{family} address")
    return rec


def _endpoint_ref(scn: Scenario, text: str):
    name, sep, address = text.partition(":")
    if not sep or name not in scn.hosts:
        raise ScenarioError(f"bad link end {text!r}")
    try:
        ip = ipaddress.ip_address(address)
    except ValueError:
        raise ScenarioError(f"bad link end {text!r}") from None
    return name, ip


def parse_scenario(text: str) -> Scenario:
    scn = Scenario()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = shlex.split(line)
        try:
            _parse_line(scn, words)
        except ScenarioError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
        except (IndexError, ValueError) as exc:
            raise ScenarioError(f"line {lineno}: malformed {words[0]!r} ({exc})") from None
    _finish(scn)
    return scn


def _parse_line(scn: Scenario, words: list[str]) -> None:
    head, args = words[0], words[1:]
    if head == "seed":
        scn.seed = _num(args[0], int, "seed")
    elif head == "host":
        if args[0] in scn.hosts:
            raise ScenarioError(f"duplicate host {args[0]}")
        role = args[1] if len(args) > 1 else None
        if role not in (None, "client", "server"):
            raise ScenarioError(f"bad role {role!r}")
        scn.hosts[args[0]] = Host(args[0], role)
    elif head == "addr":
        if args[0] not in scn.hosts:
            raise ScenarioError(f"unknown host {args[0]}")
        scn.hosts[args[0]].addrs.append(_addr(*args[1:4]))
    elif head == "link":
        rest, opts = _kv(args)
        link_id, a, b = rest
        if link_id in scn.links:
            raise ScenarioError(f"duplicate link {link_id}")
        scn.links[link_id] = LinkModel(
            link_id,
            (_endpoint_ref(scn, a), _endpoint_ref(scn, b)),
            one_way_delay=_num(opts.get("delay", "0"), int, "delay"),
            loss_prob=_num(opts.get("loss", "0"), float, "loss"),
        )
    elif head == "set":
        for word in args:
            name, _, value = word.partition("=")
            if name not in _PARAMS:
                raise ScenarioError(f"unknown parameter {name!r}")
            setattr(scn, name, _num(value, _PARAMS[name], name))
    elif head == "at":
        at = _num(args[0], int, "time")
        if at < 0:
            raise ScenarioError("negative event time")
        scn.events.append(_parse_event(scn, at, args[1], args[2:]))
    else:
        raise ScenarioError(f"unknown directive {head!r}")


def _need_link(scn, link_id):
    if link_id not in scn.links:
        raise ScenarioError(f"unknown link {link_id}")
    return link_id


def _need_host(scn, name):
    if name not in scn.hosts:
        raise ScenarioError(f"unknown host {name}")
    return name


def _parse_event(scn: Scenario, at: int, action: str, args: list[str]) -> ScenarioEvent:
    if action == "delay":
        ms = _num(args[1], int, "delay")
        if ms < 0:
            raise ScenarioError("negative delay")
        return ScenarioEvent(at, action, (_need_link(scn, args[0]), ms))
    if action == "loss":
        p = _num(args[1], float, "loss")
        if not 0 <= p <= 1:
            raise ScenarioError("loss must be in [0, 1]")
        return ScenarioEvent(at, action, (_need_link(scn, args[0]), p))
    if action in ("up", "down"):
        return ScenarioEvent(at, action, (_need_link(scn, args[0]),))
    if action == "send":
        rest, opts = _kv(args)
        every = _num(opts.get("every", "0"), int, "every")
        until = _num(opts.get("until", str(at)), int, "until")
        if every < 0:
            raise ScenarioError("negative send period")
        return ScenarioEvent(
            at, action, (_need_host(scn, rest[0]), _num(rest[1], int, "size"), every, until)
        )
    if action == "addaddr":
        return ScenarioEvent(at, action, (_need_host(scn, args[0]), _addr(*args[1:4])))
    if action == "deladdr":
        try:
            ip = ipaddress.ip_address(args[1])
        except ValueError:
            raise ScenarioError(f"bad address {args[1]!r}") from None
        return ScenarioEvent(at, action, (_need_host(scn, args[0]), ip))
    if action in ("natblock", "natunblock"):
        return ScenarioEvent(at, action, (_need_host(scn, args[0]), _num(args[1], int, "port")))
    raise ScenarioError(f"unknown event {action!r}")


def _finish(scn: Scenario) -> None:
    hosts = list(scn.hosts.values())
    if len(hosts) != 2:
        raise ScenarioError("exactly two hosts are required")
    if hosts[0].role is None and hosts[1].role is None:
        hosts[0].role, hosts[1].role = "client", "server"
    elif hosts[0].role is None or hosts[1].role is None:
        missing = hosts[0] if hosts[0].role is None else hosts[1]
        other = hosts[1] if missing is hosts[0] else hosts[0]
        missing.role = "server" if other.role == "client" else "client"
    if {h.role for h in hosts} != {"client", "server"}:
        raise ScenarioError("need one client and one server")
    for host in hosts:
        if not host.addrs:
            raise ScenarioError(f"host {host.name} has no address")
    scn.events.sort(key=lambda e: e.at)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- running ---------------------------------------------------------------


@dataclass(order=True)
class _Item:
    at: int
    order: int
    kind: str = field(compare=False)
    data: tuple = field(compare=False)


class Simulation:
    """One run of a scenario.  Build, call :meth:`run`, inspect endpoints."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.rng = random.Random(scenario.seed if seed is None else seed)
        self.trace: list[TraceRecord] = []
        self.now = 0
        self._queue: list[_Item] = []
        self._order = 0
        self._in_flight: dict[int, tuple] = {}
        self._blocked: set[tuple[str, int]] = set()
        self.links = {
            lid: LinkModel(l.id, l.ends, l.one_way_delay, l.loss_prob, l.up)
            for lid, l in scenario.links.items()
        }
        self._routes = {}
        for link in self.links.values():
            (_, a), (_, b) = link.ends
            self._routes[(a, b)] = link
            self._routes[(b, a)] = link
        self.host_addrs = {name: list(h.addrs) for name, h in scenario.hosts.items()}
        self.client_host = scenario.host_by_role("client").name
        self.server_host = scenario.host_by_role("server").name
        self._used_ports = defaultdict(set)
        for a in self.host_addrs[self.client_host]:
            self._used_ports[a.family].add(a.port)

        self.server = Endpoint.server(
            self.host_addrs[self.server_host],
            max_delack=scenario.max_delack,
        )
        self.client = Endpoint.client(
            self.host_addrs[self.client_host],
            self.host_addrs[self.server_host][0],
            now=0,
            max_delack=scenario.max_delack,
            addr_request_interval=scenario.addr_interval,
            port_allocator=self._allocate_port,
            observer=self._observe,
        )
        for ev in scenario.events:
            self._push(ev.at, "event", (ev,))

    def _allocate_port(self, family: int, old: int) -> int:
        port = max(self._used_ports[family] | {old}) + 1
        if port > 0xFFFF:
            port = 1024
        self._used_ports[family].add(port)
        return port

    def _observe(self, kind: str, flow_id: int, value: float) -> None:
        if kind == sess.SRTT_UPDATE:
            self._record(SRTT_UPDATE, flow_id, value)
        elif kind == sess.IDLE_INCREMENT:
            self._record(IDLE_INCREMENT, flow_id, value)

    def _record(self, kind, flow_id, value):
        self.trace.append(TraceRecord(self.now, kind, flow_id, value))

    def _push(self, at, kind, data):
        self._order += 1
        heapq.heappush(self._queue, _Item(at, self._order, kind, data))

    def _owner(self, addr: AddressRecord) -> Optional[str]:
        for name, addrs in self.host_addrs.items():
            if any(a.address == addr.address for a in addrs):
                return name
        return None

    # packets

    def _send(self, sender: str, dgrams: list[Datagram]) -> None:
        for d in dgrams:
            self._send_one(sender, d)

    def _send_one(self, sender: str, d: Datagram) -> None:
        flow_id = (int.from_bytes(d.payload[:8], "big") >> 48) & 0x7FFF
        self._order += 1
        pid = self._order
        self._record(PACKET_SENT, flow_id, len(d.payload))
        if sender == self.client_host and self._is_probe(d.payload):
            self._record(PROBE_SENT, flow_id, len(d.payload))
        link = self._routes.get((d.src.address, d.dst.address))
        if (
            link is None
            or not link.up
            or self._owner(d.src) != sender
            or self._is_blocked(sender, d)
            or self.rng.random() < link.loss_prob
        ):
            self._record(PACKET_LOST, flow_id, len(d.payload))
            return
        self._in_flight[pid] = (sender, d, link.id, flow_id)
        self._push(self.now + link.one_way_delay, "deliver", (pid,))

    def _is_probe(self, data: bytes) -> bool:
        try:
            return sess.open_packet(self.client.cipher, data).header.is_probe
        except (sess.AuthFailure, WireError):
            return False

    def _is_blocked(self, host: str, d: Datagram) -> bool:
        if host == self.client_host:
            return (host, d.src.port) in self._blocked
        return (self.client_host, d.dst.port) in self._blocked

    def _deliver(self, pid: int, hand_off: bool = True) -> None:
        sender, d, link_id, flow_id = self._in_flight.pop(pid)
        link = self.links[link_id]
        receiver = self._owner(d.dst)
        if (
            not link.up
            or receiver is None
            or receiver == sender
            or self._is_blocked(sender, d)
        ):
            self._record(PACKET_LOST, flow_id, len(d.payload))
            return
        self._record(PACKET_DELIVERED, flow_id, len(d.payload))
        if not hand_off:
            return
        ep = self.client if receiver == self.client_host else self.server
        result = ep.receive(d, self.now)
        self._send(receiver, result.actions)
        if (
            ep is self.server
            and result.payload
            and self.scenario.echo
        ):
            self._send(receiver, [self.server.send_data(result.payload, self.now)])

    # scenario events

    def _apply(self, ev: ScenarioEvent) -> None:
        a = ev.args
        if ev.action == "delay":
            self.links[a[0]].one_way_delay = a[1]
        elif ev.action == "loss":
            self.links[a[0]].loss_prob = a[1]
        elif ev.action == "down":
            self.links[a[0]].up = False
        elif ev.action == "up":
            if self.scenario.routing_delay > 0:
                self._push(self.now + self.scenario.routing_delay, "linkup", (a[0],))
            else:
                self.links[a[0]].up = True
        elif ev.action == "send":
            host, size, every, until = a
            self._send_data(host, size)
            if every > 0 and self.now + every <= until:
                self._push(self.now + every, "event", (ScenarioEvent(self.now + every, "send", a),))
        elif ev.action == "addaddr":
            host, rec = a
            if rec not in self.host_addrs[host]:
                self.host_addrs[host].append(rec)
                if host == self.client_host:
                    self._used_ports[rec.family].add(rec.port)
            self._addresses_changed(host)
        elif ev.action == "deladdr":
            host, ip = a
            self.host_addrs[host] = [r for r in self.host_addrs[host] if r.address != ip]
            self._addresses_changed(host)
        elif ev.action == "natblock":
            self._blocked.add(a)
        elif ev.action == "natunblock":
            self._blocked.discard(a)

    def _addresses_changed(self, host: str) -> None:
        ep = self.client if host == self.client_host else self.server
        addrs = self.host_addrs[host]
        if ep is self.client:
            # the endpoint owns the port numbers once it has hopped
            ports = {a.family: a.port for a in ep.local_addrs}
            addrs = [r.with_port(ports.get(r.family, r.port)) for r in addrs]
        ep.set_local_addresses(addrs, self.now)

    def _send_data(self, host: str, size: int) -> None:
        payload = bytes(size)
        if host == self.client_host:
            try:
                d = self.client.send_data(payload, self.now)
            except sess.NoFlow:
                return
            flow_id = self.client.current_flow
            self._record(FLOW_SELECTED, flow_id, size)
            self._send(host, [d])
        else:
            try:
                d = self.server.send_data(payload, self.now)
            except sess.NoFlow:
                return
            self._send(host, [d])

    # main loop

    def _wakeup(self, ep: Endpoint) -> Optional[int]:
        w = ep.next_wakeup(self.now)
        if w is None:
            return None
        return max(math.ceil(w), self.now + 1)

    def _tick_endpoints(self) -> None:
        for host, ep in ((self.client_host, self.client), (self.server_host, self.server)):
            w = ep.next_wakeup(self.now)
            if w is not None and w <= self.now:
                self._send(host, ep.advance(self.now))

    def run(self) -> list[TraceRecord]:
        end = self.scenario.end_time
        self._tick_endpoints()
        while True:
            candidates = [self._queue[0].at] if self._queue else []
            for ep in (self.client, self.server):
                w = self._wakeup(ep)
                if w is not None:
                    candidates.append(w)
            if not candidates:
                break
            t = min(candidates)
            if t > end:
                break
            self.now = max(t, self.now)
            while self._queue and self._queue[0].at <= self.now:
                item = heapq.heappop(self._queue)
                if item.kind == "event":
                    self._apply(item.data[0])
                elif item.kind == "deliver":
                    self._deliver(item.data[0])
                elif item.kind == "linkup":
                    self.links[item.data[0]].up = True
            self._tick_endpoints()
        # drain packets still in flight so every send has an outcome
        while self._queue:
            item = heapq.heappop(self._queue)
            if item.kind == "deliver":
                self.now = item.at
                self._deliver(item.data[0], hand_off=False)
        return self.trace


def run(scenario: Scenario, seed: Optional[int] = None) -> list[TraceRecord]:
    return Simulation(scenario, seed).run()


# -- output ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float) and not value.is_integer():
        return f"{value:.3f}"
    return str(int(value))


def write_csv(trace, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace:
        w.writerow((r.at, r.kind, r.flow_id, _fmt(r.value)))


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    write_csv(trace, buf)
    return buf.getvalue()


def read_csv(fh) -> list[TraceRecord]:
    rows = csv.reader(fh)
    header = next(rows)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    out = []
    for at, kind, flow_id, value in rows:
        v = float(value)
        out.append(TraceRecord(int(at), kind, int(flow_id), int(v) if v.is_integer() else v))
    return out


# -- analysis --------------------------------------------------------------


def probe_overhead(frame_size: float, interval_ms: float) -> float:
    """Bytes per second of one flow probed every ``interval_ms``."""
    return frame_size * 1000.0 / interval_ms


def overhead_table(frame_size: float, intervals=(100, 500, 1000, 10000)) -> dict:
    return {iv: probe_overhead(frame_size, iv) for iv in intervals}


def overhead_report(
    trace,
    frame_overhead_bytes: Union[int, Mapping[int, int]] = FRAME_OVERHEAD,
    families: Optional[Mapping[int, int]] = None,
) -> dict[int, tuple[float, float]]:
    """Per-flow probe overhead measured from a trace.

    Returns ``flow_id -> (mean probe interval ms, bytes/s)`` with a frame of
    ``overhead + 14`` octets per probe.  ``frame_overhead_bytes`` is either
    one number or a per-family mapping, in which case ``families`` maps each
    flow ID to its address family (IPv6 if missing).
    """
    sends = defaultdict(list)
    for r in trace:
        if r.kind == PROBE_SENT:
            sends[r.flow_id].append(r.at)
    report = {}
    for flow_id, times in sorted(sends.items()):
        if len(times) < 2:
            continue
        interval = (times[-1] - times[0]) / (len(times) - 1)
        if isinstance(frame_overhead_bytes, Mapping):
            family = (families or {}).get(flow_id, 6)
            overhead = frame_overhead_bytes[family]
        else:
            overhead = frame_overhead_bytes
        report[flow_id] = (interval, probe_overhead(overhead + HEADER_LEN, interval))
    return report


def srtt_series(trace, flow_id: int) -> list[tuple[int, float]]:
    return [(r.at, r.value) for r in trace if r.kind == SRTT_UPDATE and r.flow_id == flow_id]


def data_flows(trace, start: int, end: int) -> list[int]:
    return [r.flow_id for r in trace if r.kind == FLOW_SELECTED and start <= r.at < end]


def convergence_time(trace, flow_id: int, start: int, end: int, target: float,
                     tolerance: float = 0.1) -> Optional[int]:
    """Time after ``start`` at which the flow's SRTT enters and stays within
    ``tolerance`` of ``target`` until ``end``; None if it never settles."""
    entered = None
    for at, value in srtt_series(trace, flow_id):
        if at < start or at >= end:
            continue
        if abs(value - target) <= tolerance * target:
            if entered is None:
                entered = at
        else:
            entered = None
    return None if entered is None else entered - start


def metric_series(trace, flow_id: int) -> list[tuple[int, float]]:
    """(time, srtt + idle_time) as seen by the client after every change."""
    out = []
    srtt = None
    idle = 0.0
    for r in trace:
        if r.flow_id != flow_id:
            continue
        if r.kind == SRTT_UPDATE:
            srtt, idle = r.value, 0.0
        elif r.kind == IDLE_INCREMENT:
            idle += r.value
        else:
            continue
        if srtt is not None:
            out.append((r.at, srtt + idle))
    return out
