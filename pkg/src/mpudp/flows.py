"""Flow table: one flow per usable (source, destination) address pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .rtt import MAX_PROBE_INTERVAL, RttEstimator, TimestampState, rtt_sample
from .wire import MAX_FLOW_ID, MAX_SEQNO, AddressRecord, PacketHeader

BOOTSTRAP_FLOW_ID = 0
# timer granularity: a zero RTT estimate must not expire a probe in the same ms it was sent
MIN_PROBE_TIMEOUT = 1.0


class FlowIdExhausted(RuntimeError):
    pass


class SeqnoExhausted(RuntimeError):
    pass


def filter_pair(src: AddressRecord, dst: AddressRecord) -> bool:
    """Cheap sanity filter; it is better to keep a useless pair than drop a good one."""
    return (
        src.family == dst.family
        and src.is_loopback == dst.is_loopback
        and src.is_link_local == dst.is_link_local
    )


@dataclass(frozen=True)
class FlowKey:
    src: AddressRecord
    dst: AddressRecord

    def __post_init__(self):
        if self.src.family != self.dst.family:
            raise ValueError("flow endpoints must share an address family")

    def __str__(self):
        return f"{self.src} -> {self.dst}"


@dataclass
class OutstandingProbe:
    seqno: int
    sent_at: float


@dataclass
class Flow:
    id: int
    key: FlowKey
    estimator: RttEstimator = field(default_factory=RttEstimator)
    ts_state: TimestampState = field(default_factory=TimestampState)
    next_seqno_out: int = 0
    max_seqno_in: Optional[int] = None
    next_probe_at: float = 0.0
    probe_outstanding: Optional[OutstandingProbe] = None

    def take_seqno(self) -> int:
        if self.next_seqno_out > MAX_SEQNO:
            raise SeqnoExhausted(f"flow {self.id}")
        seqno = self.next_seqno_out
        self.next_seqno_out += 1
        return seqno

    def is_in_order(self, seqno: int) -> bool:
        return self.max_seqno_in is None or seqno > self.max_seqno_in

    def probe_timeout_at(self, max_delack: float) -> Optional[float]:
        if self.probe_outstanding is None:
            return None
        wait = min(max(self.estimator.drto(max_delack), MIN_PROBE_TIMEOUT), MAX_PROBE_INTERVAL)
        return self.probe_outstanding.sent_at + wait


@dataclass(frozen=True)
class ProbeAction:
    flow_id: int
    seqno: int
    # set when the previous probe timed out; idle_step is the RTO that was added
    expired: bool = False
    idle_step: float = 0.0


class FlowTable:
    """Live flows plus the seqno watermark of every retired flow ID.

    A retired ID is handed to the next new pair, and its sequence numbers
    carry on from where they stopped, so no nonce is ever used twice.
    """

    def __init__(self, max_delack: float = 100.0):
        self.max_delack = max_delack
        self.flows: dict[int, Flow] = {}
        self._retired: dict[int, int] = {}
        self._next_fresh_id = BOOTSTRAP_FLOW_ID + 1

    def __len__(self):
        return len(self.flows)

    def __iter__(self):
        return iter(sorted(self.flows.values(), key=lambda f: f.id))

    def __contains__(self, flow_id):
        return flow_id in self.flows

    def get(self, flow_id: int) -> Optional[Flow]:
        return self.flows.get(flow_id)

    def by_key(self, key: FlowKey) -> Optional[Flow]:
        for flow in self.flows.values():
            if flow.key == key:
                return flow
        return None

    @property
    def capacity(self) -> int:
        """Flow structures held in memory, live or retired."""
        return len(self.flows) + len(self._retired)

    def _allocate_id(self) -> int:
        if self._retired:
            return min(self._retired)
        if self._next_fresh_id > MAX_FLOW_ID:
            raise FlowIdExhausted("no flow ID left")
        flow_id = self._next_fresh_id
        self._next_fresh_id += 1
        return flow_id

    def add_flow(self, key: FlowKey, now: float, flow_id: Optional[int] = None) -> Flow:
        if flow_id is None:
            flow_id = self._allocate_id()
        elif flow_id in self.flows:
            raise ValueError(f"flow {flow_id} already live")
        elif not 0 <= flow_id <= MAX_FLOW_ID:
            raise ValueError(f"flow ID out of range: {flow_id}")
        seqno = self._retired.pop(flow_id, 0)
        self._next_fresh_id = max(self._next_fresh_id, flow_id + 1)
        flow = Flow(id=flow_id, key=key, next_seqno_out=seqno, next_probe_at=now)
        self.flows[flow_id] = flow
        return flow

    def add_bootstrap(self, key: FlowKey, now: float) -> Flow:
        return self.add_flow(key, now, flow_id=BOOTSTRAP_FLOW_ID)

    def retire(self, flow_id: int) -> None:
        flow = self.flows.pop(flow_id)
        self._retired[flow_id] = flow.next_seqno_out

    def rekey(self, flow_id: int, key: FlowKey) -> None:
        """Move a live flow to a new address pair, keeping its estimator."""
        other = self.by_key(key)
        if other is not None and other.id != flow_id:
            self.retire(other.id)
        self.flows[flow_id].key = key

    def rebuild(
        self, local: Iterable[AddressRecord], remote: Iterable[AddressRecord], now: float
    ) -> list[Flow]:
        """Bring the table in line with local x remote; return the new flows.

        Flows whose pair survives are untouched.  Pairs that disappeared are
        retired first so that new pairs can take over their IDs.
        """
        local = sorted(set(local), key=AddressRecord.sort_key)
        remote = sorted(set(remote), key=AddressRecord.sort_key)
        wanted = [FlowKey(s, d) for s in local for d in remote if filter_pair(s, d)]
        wanted_set = set(wanted)
        for flow in list(self):
            if flow.key not in wanted_set:
                self.retire(flow.id)
        have = {flow.key for flow in self.flows.values()}
        return [self.add_flow(key, now) for key in wanted if key not in have]

    def select_best(self) -> Optional[int]:
        best = None
        for flow in self:
            metric = flow.estimator.metric()
            if metric is None:
                continue
            if best is None or metric < best[0]:
                best = (metric, flow.id)
        return None if best is None else best[1]

    def next_probe_deadline(self) -> Optional[float]:
        deadlines = []
        for flow in self.flows.values():
            deadlines.append(flow.next_probe_at)
            timeout = flow.probe_timeout_at(self.max_delack)
            if timeout is not None:
                deadlines.append(timeout)
        return min(deadlines, default=None)

    def on_timer(self, now: float) -> list[ProbeAction]:
        actions = []
        for flow in self:
            timeout = flow.probe_timeout_at(self.max_delack)
            if timeout is not None and timeout <= now:
                # one RTO per expiry, however late we got control back
                step = flow.estimator.on_rto_expiry()
                actions.append(self._probe(flow, now, True, step))
            elif flow.probe_outstanding is None and flow.next_probe_at <= now:
                actions.append(self._probe(flow, now))
        return actions

    def _probe(self, flow: Flow, now: float, expired: bool = False,
               idle_step: float = 0.0) -> ProbeAction:
        seqno = flow.take_seqno()
        flow.probe_outstanding = OutstandingProbe(seqno, now)
        flow.next_probe_at = now + flow.estimator.probe_interval(self.max_delack)
        return ProbeAction(flow.id, seqno, expired, idle_step)


def on_in_order_receipt(flow: Flow, header: PacketHeader, now: float) -> Optional[int]:
    """Absorb the control fields of an in-order packet; return the RTT sample."""
    flow.max_seqno_in = header.seqno
    flow.ts_state.record(header.timestamp, now)
    sample = rtt_sample(header.timestamp_reply, now)
    if sample is not None:
        flow.estimator.update(sample)
        flow.probe_outstanding = None
    return sample
