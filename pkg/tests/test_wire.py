import ipaddress

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpudp.wire import (
    ADDR_FLAG,
    PROBE_FLAG,
    AddressRecord,
    Direction,
    Malformed,
    MalformedFlags,
    Packet,
    PacketHeader,
    TooShort,
    decode_address_list,
    decode_header,
    decode_packet,
    encode_address_list,
    encode_header,
    encode_packet,
)


def oracle_header_bytes(direction, flow_id, seqno, flags, ts, tsr):
    """Byte layout computed with arithmetic only, no struct."""
    nonce = direction * 2**63 + flow_id * 2**48 + seqno
    out = []
    for value, width in ((nonce, 8), (flags, 2), (ts, 2), (tsr, 2)):
        for i in reversed(range(width)):
            out.append((value // 256**i) % 256)
    return bytes(out)


headers = st.builds(
    PacketHeader,
    direction=st.sampled_from(list(Direction)),
    flow_id=st.integers(0, 2**15 - 1),
    seqno=st.integers(0, 2**48 - 1),
    flags=st.sampled_from([0, PROBE_FLAG, ADDR_FLAG]),
    timestamp=st.integers(0, 0xFFFF),
    timestamp_reply=st.integers(0, 0xFFFF),
)

ipv4 = st.builds(ipaddress.IPv4Address, st.integers(0, 2**32 - 1))
ipv6 = st.builds(ipaddress.IPv6Address, st.integers(0, 2**128 - 1))
records = st.builds(AddressRecord, st.one_of(ipv4, ipv6), st.integers(0, 0xFFFF))


def test_header_vector_flow1_seq5():
    h = PacketHeader(Direction.TO_SERVER, flow_id=1, seqno=5)
    assert encode_header(h) == bytes.fromhex("0001000000000005") + bytes(6)


def test_header_direction_is_top_bit():
    assert encode_header(PacketHeader(Direction.TO_CLIENT, 0, 0))[0] == 0x80


def test_decode_vector():
    h = decode_header(bytes.fromhex("0001000000000005") + bytes(6))
    assert (h.direction, h.flow_id, h.seqno) == (Direction.TO_SERVER, 1, 5)


def test_decode_too_short():
    with pytest.raises(TooShort):
        decode_header(bytes(13))


def test_decode_both_flags():
    with pytest.raises(MalformedFlags):
        decode_header(bytes(8) + b"\x00\x03" + bytes(4))


def test_both_flags_unconstructible():
    with pytest.raises(MalformedFlags):
        PacketHeader(Direction.TO_SERVER, 0, 0, flags=PROBE_FLAG | ADDR_FLAG)


def test_unknown_flag_bits_ignored_on_receipt():
    h = decode_header(bytes(8) + b"\x80\x01" + bytes(4))
    assert h.flags == PROBE_FLAG


@pytest.mark.parametrize("kwargs", [
    dict(flow_id=2**15), dict(seqno=2**48), dict(timestamp=0x10000), dict(flags=0x10),
])
def test_header_field_ranges(kwargs):
    base = dict(direction=0, flow_id=0, seqno=0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        PacketHeader(**base)


@settings(max_examples=1000, deadline=None)
@given(headers)
def test_header_round_trip_against_oracle(h):
    raw = encode_header(h)
    assert raw == oracle_header_bytes(
        int(h.direction), h.flow_id, h.seqno, h.flags, h.timestamp, h.timestamp_reply
    )
    assert len(raw) == 14
    assert decode_header(raw) == h


def test_address_vector_ipv4():
    rec = AddressRecord(ipaddress.ip_address("192.0.2.1"), 60001)
    assert encode_address_list([rec]) == bytes.fromhex("0704EA61C0000201")
    assert decode_address_list(bytes.fromhex("0704EA61C0000201")) == [rec]


def test_address_vector_ipv6():
    raw = encode_address_list([AddressRecord(ipaddress.ip_address("::1"), 22)])
    assert raw[:4] == bytes.fromhex("13060016")
    assert raw[0] == 19 and len(raw) == 1 + 19


def test_empty_address_list():
    assert encode_address_list([]) == b""
    assert decode_address_list(b"") == []


def test_inconsistent_length():
    with pytest.raises(Malformed):
        decode_address_list(bytes.fromhex("0804EA61C000020100"))


@pytest.mark.parametrize("raw", ["03040000", "0704EA61C00002", "07"])
def test_truncated_or_tiny(raw):
    with pytest.raises(Malformed):
        decode_address_list(bytes.fromhex(raw))


def test_unknown_family_skipped():
    unknown = bytes([7, 9, 0, 1, 1, 2, 3, 4])
    known = bytes.fromhex("0704EA61C0000201")
    assert decode_address_list(unknown + known) == [
        AddressRecord(ipaddress.ip_address("192.0.2.1"), 60001)
    ]


@settings(max_examples=2000, deadline=None)
@given(st.lists(records, max_size=8))
def test_address_list_round_trip(addrs):
    assert decode_address_list(encode_address_list(addrs)) == addrs


def test_probe_is_fourteen_octets():
    p = Packet(PacketHeader(Direction.TO_SERVER, 3, 9, flags=PROBE_FLAG))
    assert len(encode_packet(p)) == 14
    assert decode_packet(encode_packet(p)) == p


def test_probe_with_payload_rejected():
    with pytest.raises(Malformed):
        Packet(PacketHeader(Direction.TO_SERVER, 0, 0, flags=PROBE_FLAG), b"x")


def test_address_record_parse():
    assert str(AddressRecord.parse("[::1]:22")) == "[::1]:22"
    assert AddressRecord.parse("10.0.0.1:5").port == 5
    with pytest.raises(ValueError):
        AddressRecord.parse("10.0.0.1")
