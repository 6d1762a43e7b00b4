"""Timestamp echo arithmetic and per-flow RTT estimation.

All times are milliseconds.  Timestamps on the wire are the low 16 bits of
the local clock; ``NO_TIMESTAMP`` stands for "nothing received yet".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

TS_MOD = 1 << 16
NO_TIMESTAMP = 0xFFFF
MAX_RTT_SAMPLE = 32000

ALPHA = 1 / 8
BETA = 1 / 4
BOOTSTRAP_RTO = 1000.0
MIN_PROBE_INTERVAL = 500.0
MAX_PROBE_INTERVAL = 10000.0


def make_timestamp(now: float) -> int:
    return int(now) % TS_MOD


@dataclass
class TimestampState:
    """Last timestamp heard from the peer and when it arrived locally."""

    last_remote_ts: Optional[int] = None
    last_remote_ts_arrival: Optional[float] = None

    def record(self, ts: int, now: float) -> None:
        self.last_remote_ts = ts
        self.last_remote_ts_arrival = now

    def reset(self) -> None:
        self.last_remote_ts = None
        self.last_remote_ts_arrival = None


def make_timestamp_reply(state: TimestampState, now: float) -> int:
    if state.last_remote_ts is None:
        return NO_TIMESTAMP
    held = int(now) - int(state.last_remote_ts_arrival)
    return (state.last_remote_ts + held) % TS_MOD


def rtt_sample(tsr: int, now: float) -> Optional[int]:
    if tsr == NO_TIMESTAMP:
        return None
    sample = (make_timestamp(now) - tsr) % TS_MOD
    if sample >= MAX_RTT_SAMPLE:
        return None
    return sample


@dataclass
class RttEstimator:
    """Smoothed RTT, its deviation, and accumulated idle time of one flow.

    ``idle_time`` grows by one RTO per unanswered probe and drops back to
    zero on the next valid sample.  The selection metric is
    ``srtt + idle_time``.
    """

    srtt: Optional[float] = None
    srttvar: Optional[float] = None
    idle_time: float = 0.0

    @property
    def has_sample(self) -> bool:
        return self.srtt is not None

    def update(self, sample: float) -> "RttEstimator":
        if sample < 0:
            raise ValueError("negative RTT sample")
        if self.srtt is None:
            self.srtt = float(sample)
            self.srttvar = sample / 2
        else:
            self.srttvar = (1 - BETA) * self.srttvar + BETA * abs(self.srtt - sample)
            self.srtt = (1 - ALPHA) * self.srtt + ALPHA * sample
        self.idle_time = 0.0
        return self

    def rto(self) -> float:
        # Before any sample the bootstrap value stands in for SRTT + 4*SRTTVAR,
        # so a never-answered flow still backs off.
        if self.srtt is None:
            return BOOTSTRAP_RTO + self.idle_time
        return self.srtt + self.idle_time + 4 * self.srttvar

    def drto(self, max_delack: float) -> float:
        return self.rto() + max_delack

    def probe_interval(self, max_delack: float) -> float:
        return min(max(self.drto(max_delack), MIN_PROBE_INTERVAL), MAX_PROBE_INTERVAL)

    def metric(self) -> Optional[float]:
        if self.srtt is None:
            return None
        return self.srtt + self.idle_time

    def on_rto_expiry(self) -> float:
        """Add exactly one RTO to the idle time; return the increment."""
        step = self.rto()
        self.idle_time += step
        return step

    def reset(self) -> None:
        self.srtt = None
        self.srttvar = None
        self.idle_time = 0.0
