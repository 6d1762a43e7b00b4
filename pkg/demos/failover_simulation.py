# Run the bundled two-path scenario and summarise what the client did.
import sys
from collections import Counter

from mpudp import netsim
from mpudp.cli import print_summary
from importlib import resources

text = (resources.files("mpudp") / "scenarios" / "fig9.scn").read_text()
scn = netsim.parse_scenario(text)
trace = netsim.run(scn)

print(len(trace), "trace records:", dict(Counter(r.kind for r in trace)))
print_summary(scn, trace, sys.stdout)

# srtt of both flows every 2 s, for a quick look without plotting
for t in range(0, 60001, 2000):
    row = []
    for fid in (0, 1):
        series = [v for at, v in netsim.srtt_series(trace, fid) if at <= t]
        metric = [m for at, m in netsim.metric_series(trace, fid) if at <= t]
        row.append(f"{series[-1] if series else 0:7.1f}/{metric[-1] if metric else 0:8.1f}")
    chosen = Counter(netsim.data_flows(trace, t, t + 2000)).most_common(1)
    print(f"{t / 1000:5.0f}s  flow0 {row[0]}  flow1 {row[1]}  data on {chosen[0][0] if chosen else '-'}")

# write the CSV next to this script for plotting elsewhere
with open("fig9_trace.csv", "w", newline="") as fh:
    netsim.write_csv(trace, fh)
