"""Command line: ``mpudp sim`` runs a scenario, ``mpudp echo`` talks over real UDP."""

from __future__ import annotations

import argparse
import ipaddress
import logging
import os
import select
import sys
from collections import Counter
from importlib import resources

from . import netsim
from .echo import EchoHost, flow_report, monotonic_ms
from .session import (
    DEFAULT_ADDR_REQUEST_INTERVAL,
    DEFAULT_MAX_DELACK,
    FLOW_SWITCH,
    PORT_HOP,
    SRTT_UPDATE,
    Endpoint,
    HmacCipher,
)
from .wire import AddressRecord

log = logging.getLogger("mpudp")


def _scenario_text(path: str) -> str:
    if not os.path.exists(path):
        bundled = resources.files("mpudp") / "scenarios" / os.path.basename(path)
        if os.path.basename(path) == path and bundled.is_file():
            return bundled.read_text(encoding="utf-8")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _phases(scn: netsim.Scenario, end: int) -> list[tuple[int, int, str]]:
    """Split the run at every non-traffic event."""
    labels: dict[int, list[str]] = {0: []}
    for ev in scn.events:
        if ev.action != "send" and ev.at < end:
            labels.setdefault(ev.at, []).append(f"{ev.action} {' '.join(map(str, ev.args))}")
    edges = sorted(labels) + [end]
    return [(a, b, "; ".join(labels[a]) or "start") for a, b in zip(edges, edges[1:])]


def print_summary(scn: netsim.Scenario, trace, out) -> None:
    end = scn.end_time
    flows = sorted({r.flow_id for r in trace if r.kind == netsim.SRTT_UPDATE})
    print(f"{'phase':>15}  {'data packets per flow':<24} srtt at end / settle time", file=out)
    for start, stop, label in _phases(scn, end):
        counts = Counter(netsim.data_flows(trace, start, stop))
        chosen = ", ".join(f"{fid}:{n}" for fid, n in sorted(counts.items())) or "-"
        parts = []
        for fid in flows:
            series = [v for at, v in netsim.srtt_series(trace, fid) if at < stop]
            if not series:
                continue
            final = series[-1]
            settle = netsim.convergence_time(trace, fid, start, stop, final)
            settle_txt = "-" if settle is None else f"{settle}ms"
            parts.append(f"f{fid}={final:.0f}ms/{settle_txt}")
        print(f"{start:>6}-{stop:<8}  {chosen:<24} {' '.join(parts)}   # {label}", file=out)
    print("probe overhead per flow (mean interval ms, B/s):", file=out)
    families = {}
    client = scn.host_by_role("client")
    for fid in flows:
        families[fid] = client.addrs[0].family
    for fid, (interval, rate) in netsim.overhead_report(trace, families=families).items():
        print(f"  flow {fid}: {interval:8.1f} ms  {rate:8.1f} B/s", file=out)


def cmd_sim(args) -> int:
    try:
        text = _scenario_text(args.scenario)
    except OSError as exc:
        print(f"mpudp sim: cannot read {args.scenario}: {exc}", file=sys.stderr)
        return 2
    try:
        scn = netsim.parse_scenario(text)
        trace = netsim.run(scn, args.seed)
    except netsim.ScenarioError as exc:
        print(f"mpudp sim: {args.scenario}: {exc}", file=sys.stderr)
        return 1
    try:
        if args.csv in (None, "-"):
            netsim.write_csv(trace, sys.stdout)
        else:
            with open(args.csv, "w", encoding="utf-8", newline="") as fh:
                netsim.write_csv(trace, fh)
    except OSError as exc:
        print(f"mpudp sim: cannot write {args.csv}: {exc}", file=sys.stderr)
        return 2
    if args.summary:
        print_summary(scn, trace, sys.stderr if args.csv in (None, "-") else sys.stdout)
    return 0


def _parse_host_port(text: str, default_host: str = "") -> AddressRecord:
    if text.isdigit():
        return AddressRecord(ipaddress.ip_address(default_host or "0.0.0.0"), int(text))
    return AddressRecord.parse(text)


def _local_records(args, transport) -> list[AddressRecord]:
    from .transport import local_addresses

    if args.local:
        ips = [ipaddress.ip_address(a) for a in args.local]
    else:
        ips = local_addresses(transport.families)
    return [AddressRecord(ip, transport.port(ip.version)) for ip in ips if ip.version in transport.families]


def cmd_echo(args) -> int:
    from .transport import UdpTransport

    logging.basicConfig(
        level=logging.DEBUG if args.log else logging.INFO,
        format="%(asctime)s %(message)s",
        stream=sys.stderr,
    )
    cipher = HmacCipher(bytes.fromhex(args.key)) if args.key else None
    common = dict(
        max_delack=args.delack,
        addr_request_interval=args.addr_interval * 1000.0,
        cipher=cipher,
    )
    start = monotonic_ms()

    def clock():
        return monotonic_ms() - start

    try:
        if args.listen is not None:
            listen = _parse_host_port(args.listen)
            transport = UdpTransport(port=listen.port)
            endpoint = Endpoint.server(_local_records(args, transport), **common)
            log.info("listening on port %d: %s", listen.port,
                     ", ".join(str(a) for a in endpoint.local_addrs))
        else:
            server = AddressRecord.parse(args.connect)
            transport = UdpTransport()

            def observe(kind, flow_id, value):
                if kind == FLOW_SWITCH:
                    log.info("switched to flow %d\n%s", flow_id, flow_report(endpoint))
                elif kind == SRTT_UPDATE and args.log:
                    log.debug("flow %d srtt %.1f ms", flow_id, value)
                elif kind == PORT_HOP:
                    log.info("IPv%d port hop to %d", flow_id, value)

            endpoint = Endpoint.client(
                _local_records(args, transport), server,
                now=clock(), port_allocator=transport.hop, observer=observe, **common,
            )
    except (OSError, ValueError) as exc:
        print(f"mpudp echo: {exc}", file=sys.stderr)
        return 2

    host = EchoHost(endpoint, transport, clock=clock,
                    on_payload=lambda p: print(p.decode("utf-8", "replace"), end="", flush=True))
    last_report = 0.0
    try:
        while True:
            if endpoint.is_client:
                ready, _, _ = select.select([sys.stdin], [], [], 0)
                if ready:
                    line = sys.stdin.readline()
                    if not line:
                        break
                    host.send(line.encode())
                if clock() - last_report > 5000:
                    last_report = clock()
                    log.info("%d flows\n%s", len(endpoint.flow_table), flow_report(endpoint))
            host.step(0.05)
    except KeyboardInterrupt:
        pass
    finally:
        transport.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpudp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="run a scenario and write a CSV trace")
    s.add_argument("scenario", help="scenario file (bundled: fig9.scn)")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--csv", default=None, help="output file, '-' or omitted for stdout")
    s.add_argument("--summary", action="store_true", help="print per-phase summary")
    s.set_defaults(func=cmd_sim)

    e = sub.add_parser("echo", help="multipath echo over real UDP sockets")
    mode = e.add_mutually_exclusive_group(required=True)
    mode.add_argument("--listen", metavar="[ADDR:]PORT")
    mode.add_argument("--connect", metavar="ADDR:PORT")
    e.add_argument("--key", help="hex key for packet authentication")
    e.add_argument("--delack", type=float, default=DEFAULT_MAX_DELACK, help="max delayed ack, ms")
    e.add_argument("--addr-interval", type=float, default=DEFAULT_ADDR_REQUEST_INTERVAL / 1000,
                   help="seconds between address requests")
    e.add_argument("--local", action="append", help="local address to use (repeatable)")
    e.add_argument("--log", action="store_true", help="verbose logging")
    e.set_defaults(func=cmd_echo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
