import pytest

from mpudp import session
from mpudp.wire import HEADER_LEN, encode_packet

PROBE_LOG = {"probes": 0, "bad": []}

# criterion number -> (passed, title, detail); filled by test_acceptance
ACCEPTANCE = {}

_real_seal = session.seal_packet


def _checked_seal(cipher, packet):
    data = _real_seal(cipher, packet)
    if packet.header.is_probe:
        PROBE_LOG["probes"] += 1
        size = len(encode_packet(packet))
        if size != HEADER_LEN or len(data) != HEADER_LEN + cipher.overhead:
            PROBE_LOG["bad"].append((packet.header, size, len(data)))
    return data


@pytest.fixture(autouse=True)
def _watch_probes(monkeypatch):
    """Every probe sealed anywhere in the suite goes through the size check."""
    monkeypatch.setattr(session, "seal_packet", _checked_seal)
    yield


@pytest.fixture
def probe_log():
    return PROBE_LOG


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        if n == 2:
            # re-judged over everything the whole session sent
            ok = ok and not PROBE_LOG["bad"]
            detail = (f"{PROBE_LOG['probes']} probes sealed across the session, "
                      f"{len(PROBE_LOG['bad'])} not 14 octets")
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {n}. {title}: {detail}")


def pytest_sessionfinish(session, exitstatus):
    if PROBE_LOG["bad"] and exitstatus == 0:
        session.exitstatus = 1
