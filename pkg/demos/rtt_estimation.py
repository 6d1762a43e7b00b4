# Timestamp echo, smoothed RTT and what happens when a flow goes quiet.
from mpudp.rtt import RttEstimator, TimestampState, make_timestamp, make_timestamp_reply, rtt_sample

# client sends at t=1000, server holds the packet 40 ms before echoing,
# the echo reaches the client at t=1190: 150 ms of network time
server_state = TimestampState()
server_state.record(make_timestamp(1000), now=1075)
tsr = make_timestamp_reply(server_state, now=1115)
print("sample:", rtt_sample(tsr, now=1190), "ms")

est = RttEstimator()
print("before any sample: rto", est.rto(), "probe every", est.probe_interval(100))
for s in [100, 100, 120, 90, 300, 300, 300, 300]:
    est.update(s)
    print(f"sample {s:4d}  srtt {est.srtt:7.2f}  var {est.srttvar:6.2f}  rto {est.rto():7.2f}")

# three unanswered probes in a row: idle doubles the effective RTT each time
for k in range(1, 4):
    step = est.on_rto_expiry()
    print(f"expiry {k}: +{step:.1f}  idle {est.idle_time:.1f}  metric {est.metric():.1f}")

est.update(180)
print("after a fresh sample idle is", est.idle_time)
