import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpudp.rtt import (
    NO_TIMESTAMP,
    RttEstimator,
    TimestampState,
    make_timestamp,
    make_timestamp_reply,
    rtt_sample,
)


@pytest.mark.parametrize("now, ts", [(0, 0), (65536, 0), (70000, 4464)])
def test_make_timestamp(now, ts):
    assert make_timestamp(now) == ts


def test_reply_without_state_is_sentinel():
    assert make_timestamp_reply(TimestampState(), 1234) == 0xFFFF


@pytest.mark.parametrize("ts, arrival, now, reply", [(100, 1000, 1050, 150), (65530, 0, 20, 14)])
def test_reply_adds_hold_time(ts, arrival, now, reply):
    assert make_timestamp_reply(TimestampState(ts, arrival), now) == reply


@pytest.mark.parametrize("tsr, now, sample", [
    (NO_TIMESTAMP, 400, None), (150, 400, 250), (65530, 10, 16), (0, 32000, None),
])
def test_rtt_sample(tsr, now, sample):
    assert rtt_sample(tsr, now) == sample


def test_first_sample():
    e = RttEstimator().update(200)
    assert (e.srtt, e.srttvar) == (200, 100)


def test_steady_sample():
    e = RttEstimator(100, 20).update(100)
    assert (e.srtt, e.srttvar) == (100, 15)


def test_sample_resets_idle():
    e = RttEstimator(100, 20, idle_time=500).update(200)
    assert (e.srtt, e.srttvar, e.idle_time) == (112.5, 40, 0)


@pytest.mark.parametrize("srtt, var, idle, rto", [(100, 20, 0, 180), (100, 25, 200, 400)])
def test_rto(srtt, var, idle, rto):
    assert RttEstimator(srtt, var, idle).rto() == rto


def test_bootstrap_rto():
    assert RttEstimator().rto() == 1000


@pytest.mark.parametrize("srtt, var, delack, drto", [
    (100, 20, 100, 280), (100, 20, 0, 180), (100, 75, 100, 500),
])
def test_drto(srtt, var, delack, drto):
    assert RttEstimator(srtt, var).drto(delack) == drto


@pytest.mark.parametrize("srtt, var, interval", [
    (100, 20, 500), (1000, 225, 2000), (13000, 475, 10000),
])
def test_probe_interval_clamp(srtt, var, interval):
    # dRTO = 280, 2000 and 15000 with a 100 ms delayed ack
    assert RttEstimator(srtt, var).probe_interval(100) == interval


def test_expiry_adds_one_rto_each_time():
    e = RttEstimator(100, 25)
    e.on_rto_expiry()
    assert e.idle_time == 200
    e.on_rto_expiry()
    assert e.idle_time == 600


@given(
    t0=st.integers(0, 10**9),
    out=st.integers(0, 15000),
    hold=st.integers(0, 15000),
    back=st.integers(0, 15000),
)
def test_echo_exchange_recovers_rtt(t0, out, hold, back):
    # client clock t, server clock offset arbitrarily; only differences matter
    server = TimestampState()
    server.record(make_timestamp(t0), 5_000_000 + t0 + out)
    tsr = make_timestamp_reply(server, 5_000_000 + t0 + out + hold)
    sample = rtt_sample(tsr, t0 + out + hold + back)
    assert sample == out + back


@given(st.floats(0, 5000), st.floats(0, 5000), st.floats(0, 5000), st.floats(0.1, 100))
def test_rto_monotone(srtt, var, idle, bump):
    base = RttEstimator(srtt, var, idle).rto()
    assert RttEstimator(srtt, var, idle + bump).rto() > base
    assert RttEstimator(srtt, var + bump, idle).rto() > base


@given(st.one_of(st.none(), st.floats(0, 10**6)), st.floats(0, 10**6), st.floats(0, 10**6), st.floats(0, 1000))
def test_probe_interval_bounds(srtt, var, idle, delack):
    e = RttEstimator(srtt, None if srtt is None else var, idle)
    assert 500 <= e.probe_interval(delack) <= 10000


@given(st.lists(st.one_of(st.just(None), st.integers(0, 5000)), max_size=40))
def test_idle_monotone_between_samples(events):
    e = RttEstimator().update(50)
    for ev in events:
        before = e.idle_time
        if ev is None:
            e.on_rto_expiry()
            assert e.idle_time >= before
        else:
            e.update(ev)
            assert e.idle_time == 0
