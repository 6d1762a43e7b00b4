# Building the flow table from address pairs and picking the best flow.
from mpudp.flows import FlowTable, filter_pair
from mpudp.rtt import RttEstimator
from mpudp.wire import AddressRecord

local = [AddressRecord.parse(a) for a in ("10.0.0.2:5000", "192.168.1.9:5000", "[2001:db8::2]:5000")]
remote = [AddressRecord.parse(a) for a in ("198.51.100.1:6000", "[2001:db8:1::1]:6000", "[fe80::1]:6000")]

for s in local:
    for d in remote:
        print(f"{str(s):24} -> {str(d):24} {'ok' if filter_pair(s, d) else 'filtered'}")

table = FlowTable(max_delack=100)
table.rebuild(local, remote, now=0)
for f in table:
    print(f.id, f.key)

# pretend some probing happened
table.get(1).estimator = RttEstimator(80.0, 10.0)
table.get(2).estimator = RttEstimator(45.0, 5.0)
table.get(3).estimator = RttEstimator(30.0, 5.0, idle_time=400.0)  # quiet lately
print("best flow:", table.select_best())
for _ in range(5):
    table.get(2).take_seqno()  # five packets sent on flow 2

# the 192.168 address goes away; its flow ID is retired and handed to the next new pair
table.rebuild([local[0], local[2], AddressRecord.parse("172.16.0.4:5000")], remote, now=1000)
for f in table:
    print(f.id, f.key, "next seqno", f.next_seqno_out)
