# Packet header and address list encoding, byte by byte.
from mpudp.wire import (
    ADDR_FLAG, PROBE_FLAG, AddressRecord, Direction, Packet, PacketHeader,
    decode_address_list, decode_header, encode_address_list, encode_header, encode_packet,
)

h = PacketHeader(Direction.TO_SERVER, flow_id=1, seqno=5)
raw = encode_header(h)
print("data header   ", raw.hex(" "))        # nonce, flags, ts, tsr
print("decoded       ", decode_header(raw))

back = PacketHeader(Direction.TO_CLIENT, flow_id=0, seqno=0)
print("server->client", encode_header(back).hex(" "))  # top bit of the nonce is the direction

probe = Packet(PacketHeader(Direction.TO_SERVER, 3, 42, flags=PROBE_FLAG, timestamp=1234))
print("probe         ", len(encode_packet(probe)), "octets")

addrs = [AddressRecord.parse("192.0.2.1:60001"), AddressRecord.parse("[2001:db8::7]:60001")]
blob = encode_address_list(addrs)
print("address list  ", blob.hex(" "))
print("parsed back   ", [str(a) for a in decode_address_list(blob)])

# unknown family 9 is skipped, the IPv4 record after it still parses
print("with junk     ", decode_address_list(bytes([7, 9, 0, 1, 1, 2, 3, 4]) + blob[:8]))

req = Packet(PacketHeader(Direction.TO_SERVER, 0, 7, flags=ADDR_FLAG))
print("addr request  ", encode_packet(req).hex(" "))
