# Bandwidth spent on probes, from arithmetic and from a simulated trace.
from mpudp import netsim

for frame, label in ((90, "IPv6"), (72, "IPv4")):
    print(label, {iv: netsim.probe_overhead(frame, iv) for iv in (100, 500, 1000, 10000)})

# four addresses on each side, all IPv6, every path fast
lines = ["host c client", "host s server"]
cs = [f"2001:db8:{i}::2" for i in range(1, 5)]
ss = [f"2001:db8:{i}::1" for i in range(11, 15)]
lines += [f"addr c 6 {a} 60001" for a in cs] + [f"addr s 6 {a} 60000" for a in ss]
lines += [f"link L{i}{j} c:{a} s:{b} delay=5" for i, a in enumerate(cs) for j, b in enumerate(ss)]
lines += ["set duration=30000"]
trace = netsim.run(netsim.parse_scenario("\n".join(lines)))

report = netsim.overhead_report(trace, families={fid: 6 for fid in range(16)})
for fid, (interval, rate) in report.items():
    print(f"flow {fid:2d}  every {interval:6.1f} ms  {rate:6.1f} B/s")
print("total", round(sum(r for _, r in report.values())), "B/s")
