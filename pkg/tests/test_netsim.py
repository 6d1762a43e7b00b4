import io
from collections import Counter

import pytest

from mpudp import netsim
from mpudp.netsim import (
    FLOW_SELECTED,
    IDLE_INCREMENT,
    PACKET_DELIVERED,
    PACKET_LOST,
    PACKET_SENT,
    PROBE_SENT,
    SRTT_UPDATE,
    ScenarioError,
    Simulation,
    TraceRecord,
    parse_scenario,
)

TWO_PATHS = """
seed 3
host c client
host s server
addr c 4 10.0.1.2 60001
addr c 4 10.0.5.2 60001
addr s 4 10.1.0.1 60000
link A c:10.0.1.2 s:10.1.0.1 delay={da} loss={la}
link B c:10.0.5.2 s:10.1.0.1 delay={db} loss={lb}
set duration={dur}
at 0 send c 32 every=250 until={dur}
{extra}
"""


def scenario(da=1, db=1, la=0, lb=0, dur=20000, extra=""):
    return parse_scenario(TWO_PATHS.format(da=da, db=db, la=la, lb=lb, dur=dur, extra=extra))


def kinds(trace, kind, flow_id=None):
    return [r for r in trace if r.kind == kind and (flow_id is None or r.flow_id == flow_id)]


@pytest.mark.parametrize("text, fragment", [
    ("host a\n", "two hosts"),
    ("host a\nhost b\naddr a 4 10.0.0.1 1\n", "no address"),
    ("host a\nhost b\nbogus 1\n", "line 3"),
    ("host a\naddr a 4 ::1 1\n", "not an IPv4"),
    ("host a\nhost b\nlink L a:1.1.1.1 b:2.2.2.2 delay=x\n", "bad delay"),
    ("host a\nhost b\nat 5 down Z\n", "unknown link"),
    ("host a\nhost b\nat -1 send a 3\n", "negative"),
    ("host a\nhost b\nset nope=1\n", "unknown parameter"),
    ("host a client\nhost b client\naddr a 4 1.1.1.1 1\naddr b 4 1.1.1.2 1\n", "one client"),
    ("host a\nhost b\nlink L a:1.1.1.1 b:2.2.2.2\nat 1 loss L 2\n", "loss must be"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ScenarioError, match=fragment):
        parse_scenario(text)


def test_parse_fills_roles_and_sorts_events():
    scn = parse_scenario(
        "host x\nhost y server\naddr x 4 1.1.1.1 1\naddr y 4 2.2.2.2 2\n"
        "at 50 send x 10\nat 10 send x 10 # comment\n"
    )
    assert scn.host_by_role("client").name == "x"
    assert [e.at for e in scn.events] == [10, 50]
    assert scn.end_time == 50 + 10000


def test_bundled_scenario_parses():
    from importlib import resources
    text = (resources.files("mpudp") / "scenarios" / "fig9.scn").read_text()
    scn = parse_scenario(text)
    assert scn.seed == 1 and set(scn.links) == {"A", "B"} and scn.end_time == 60000


def test_same_seed_same_trace():
    scn = scenario(la=0.3, lb=0.2)
    assert netsim.run(scn) == netsim.run(scn)
    assert netsim.run(scn, seed=99) != netsim.run(scn)


def test_every_send_has_one_outcome():
    trace = netsim.run(scenario(la=0.25, lb=0.5, extra="at 5000 down A\nat 9000 up A"))
    sent = len(kinds(trace, PACKET_SENT))
    assert sent == len(kinds(trace, PACKET_DELIVERED)) + len(kinds(trace, PACKET_LOST))
    assert len(kinds(trace, PACKET_LOST)) > 0


def test_rtt_samples_equal_path_rtt():
    trace = netsim.run(scenario(da=50, db=80, dur=5000))
    assert min(r.at for r in kinds(trace, PACKET_DELIVERED)) >= 50
    first = {fid: kinds(trace, SRTT_UPDATE, fid)[0].value for fid in (0, 1)}
    # the delayed ack hold time is subtracted on the echo
    assert first == {0: 100, 1: 160}


def test_symmetric_paths_prefer_lowest_id():
    trace = netsim.run(scenario())
    for fid in (0, 1):
        assert kinds(trace, SRTT_UPDATE, fid)[-1].value == pytest.approx(2, abs=0.5)
    assert set(netsim.data_flows(trace, 0, 20000)) == {0}


def test_data_moves_to_faster_path():
    trace = netsim.run(scenario(da=100, db=10, dur=10000))
    assert Counter(netsim.data_flows(trace, 3000, 10000)) == Counter({1: 28})


def test_dead_path_idle_doubles_and_probing_backs_off():
    trace = netsim.run(scenario(lb=1.0, dur=120000))
    steps = [r.value for r in kinds(trace, IDLE_INCREMENT, 1)]
    assert steps[:5] == [1000, 2000, 4000, 8000, 16000]
    assert not kinds(trace, SRTT_UPDATE, 1)
    probes = [r.at for r in kinds(trace, PROBE_SENT, 1)]
    gaps = [b - a for a, b in zip(probes, probes[1:])]
    assert gaps[-1] == 10000
    assert max(gaps) == 10000
    # the live path keeps carrying the data
    assert set(netsim.data_flows(trace, 0, 120000)) == {0}


def test_idle_steps_double_after_samples():
    trace = netsim.run(scenario(dur=30000, extra="at 10000 loss B 1"))
    steps = [r for r in kinds(trace, IDLE_INCREMENT, 1) if r.at >= 10000]
    values = [r.value for r in steps[:4]]
    assert all(b == pytest.approx(2 * a) for a, b in zip(values, values[1:]))


def test_nat_block_triggers_port_hop_and_recovery():
    scn = scenario(dur=30000, extra="at 5000 natblock c 60001")
    sim = Simulation(scn)
    trace = sim.run()
    ports = {a.port for a in sim.client.local_addrs}
    assert ports and 60001 not in ports
    late = [r for r in kinds(trace, SRTT_UPDATE) if r.at > 15000]
    assert late, "no RTT samples after the hop"


def test_address_churn_reuses_flow_ids():
    extra = "at 5000 deladdr c 10.0.5.2\nat 8000 addaddr c 4 10.0.5.2 60001"
    sim = Simulation(scenario(dur=15000, extra=extra))
    trace = sim.run()
    assert sorted(f.id for f in sim.client.flow_table) == [0, 1]
    assert kinds(trace, SRTT_UPDATE, 1)[-1].at > 8000


def test_csv_round_trip():
    trace = netsim.run(scenario(la=0.1, dur=5000))
    text = netsim.trace_to_csv(trace)
    assert text.splitlines()[0] == "time_ms,kind,flow_id,value"
    assert netsim.read_csv(io.StringIO(text)) == trace


def test_overhead_report_scales_with_interval():
    trace = [TraceRecord(t, PROBE_SENT, 2, 14) for t in range(0, 10001, 1000)]
    trace += [TraceRecord(t, PROBE_SENT, 3, 14) for t in range(0, 10001, 500)]
    rep = netsim.overhead_report(trace, families={2: 6, 3: 4})
    assert rep[2] == (1000.0, 90.0)
    assert rep[3] == (500.0, 144.0)
    assert netsim.overhead_report(trace, frame_overhead_bytes=86)[2] == (1000.0, 100.0)


def test_convergence_time():
    trace = [TraceRecord(t, SRTT_UPDATE, 1, v) for t, v in
             [(0, 10), (100, 50), (200, 95), (300, 120), (400, 105), (500, 99)]]
    assert netsim.convergence_time(trace, 1, 0, 1000, 100) == 400
    assert netsim.convergence_time(trace, 1, 0, 350, 100) is None


def test_flow_selected_records_bytes():
    trace = netsim.run(scenario(dur=1000))
    sel = kinds(trace, FLOW_SELECTED)  # 0, 250, ..., 1000 inclusive
    assert len(sel) == 5 and all(r.value == 32 for r in sel)
