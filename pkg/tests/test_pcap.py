import struct

import pytest

from triad_cep.model import ModbusFrame, Transport
from triad_cep.pcap import (
    BadMagic,
    CaptureError,
    build_frame,
    decode_modbus,
    encode_modbus,
    parse_capture,
    write_capture,
)

GLOBAL_LE = bytes.fromhex("d4c3b2a1" "0200" "0400" "00000000" "00000000" "ffff0000" "01000000")


def hand_capture(pid: int = 0) -> bytes:
    """One Ethernet/IPv4/TCP frame 10.0.0.1:40000 -> 10.0.0.2:502, assembled byte by byte."""
    mbap = bytes([0x00, 0x01, pid >> 8, pid & 0xFF, 0x00, 0x06, 0x01])
    pdu = bytes([0x06, 0x00, 0x10, 0x02, 0x00])
    tcp = bytes.fromhex("9c40" "01f6" "00000000" "00000000" "50" "18" "2000" "0000" "0000")
    ip_len = 20 + len(tcp) + len(mbap) + len(pdu)
    ip = bytes([0x45, 0x00, ip_len >> 8, ip_len & 0xFF, 0, 0, 0x40, 0, 64, 6, 0, 0, 10, 0, 0, 1, 10, 0, 0, 2])
    eth = bytes(6) + bytes(6) + b"\x08\x00"
    frame = eth + ip + tcp + mbap + pdu
    rec = struct.pack("<IIII", 1_500_000_000, 250_000, len(frame), len(frame))
    return GLOBAL_LE + rec + frame


def test_empty_capture():
    res = parse_capture(GLOBAL_LE)
    assert (res.packets, res.errors) == ([], [])


def test_golden_modbus_write_single_register():
    res = parse_capture(hand_capture())
    assert res.errors == [] and len(res.packets) == 1
    p = res.packets[0]
    assert p.timestamp == 1_500_000_000_250_000
    assert (p.src.address, p.src.port, p.dst.address, p.dst.port) == ("10.0.0.1", 40000, "10.0.0.2", 502)
    assert p.transport is Transport.TCP
    assert p.length_bytes == 20 + 20 + 12
    m = p.modbus
    assert m.transaction_id == 1 and m.unit_id == 1 and m.function_code == 6
    assert m.register_address == 0x0010 == 16
    assert m.values == (0x02 * 256 + 0x00,) == (512,)
    assert m.is_response is False


def test_nonzero_protocol_id_is_not_modbus():
    res = parse_capture(hand_capture(pid=7))
    assert len(res.packets) == 1 and res.packets[0].modbus is None


def test_big_endian_capture():
    frame = build_frame("10.0.0.1", "10.0.0.2", 1000, 2000, b"abc", Transport.UDP)
    res = parse_capture(write_capture([(5_000_001, frame)], big_endian=True))
    assert len(res.packets) == 1
    assert res.packets[0].timestamp == 5_000_001
    assert res.packets[0].transport is Transport.UDP
    assert res.packets[0].length_bytes == 20 + 8 + 3


@pytest.mark.parametrize(
    "head",
    [b"\x4d\x3c\xb2\xa1" + GLOBAL_LE[4:], b"\xa1\xb2\x3c\x4d" + GLOBAL_LE[4:], b"\x00" * 24, b"\xd4\xc3"],
)
def test_bad_magic(head):
    with pytest.raises(BadMagic):
        parse_capture(head)


def test_non_ethernet_linktype_rejected():
    with pytest.raises(CaptureError):
        parse_capture(GLOBAL_LE[:20] + struct.pack("<I", 101))


def test_truncated_packet_is_counted():
    data = hand_capture()
    res = parse_capture(data[:-3])
    assert res.packets == [] and len(res.errors) == 1
    assert res.errors[0].line_no == 0 and "TruncatedPacket" in res.errors[0].reason


def test_truncated_tcp_header_skips_only_that_packet():
    good = build_frame("10.0.0.1", "10.0.0.2", 1, 2, b"x")
    short = good[:14 + 20 + 10]
    res = parse_capture(write_capture([(1, short), (2, good)]))
    assert len(res.packets) == 1 and res.packets[0].id == "pkt-000001"
    assert len(res.errors) == 1 and res.errors[0].line_no == 0


def test_non_ip_and_other_protocols_skipped():
    arp = bytes(12) + b"\x08\x06" + bytes(28)
    icmp = bytearray(build_frame("10.0.0.1", "10.0.0.2", 1, 2, b"", Transport.UDP))
    icmp[14 + 9] = 1
    res = parse_capture(write_capture([(1, arp), (2, bytes(icmp))]))
    assert res.packets == [] and res.errors == [] and res.skipped == 2


def test_vlan_tagged_frame():
    frame = build_frame("10.0.0.1", "10.0.0.2", 1, 2, b"hello")
    tagged = frame[:12] + b"\x81\x00\x00\x05" + frame[12:]
    res = parse_capture(write_capture([(1, tagged)]))
    assert len(res.packets) == 1 and res.packets[0].length_bytes == 45


def test_ethernet_padding_ignored():
    frame = build_frame("10.0.0.1", "10.0.0.2", 40000, 502, encode_modbus(ModbusFrame(9, 1, 6, 1, (2,))))
    res = parse_capture(write_capture([(1, frame + bytes(8))]))
    assert res.packets[0].modbus == ModbusFrame(9, 1, 6, 1, (2,), False)


def test_order_preserved_for_out_of_order_timestamps():
    frames = [(30, build_frame("10.0.0.1", "10.0.0.2", 1, 2)), (10, build_frame("10.0.0.1", "10.0.0.2", 1, 2)),
              (20, build_frame("10.0.0.3", "10.0.0.2", 1, 2))]
    res = parse_capture(write_capture(frames))
    assert [p.timestamp for p in res.packets] == [30, 10, 20]


def test_host_resolution_and_id_prefix():
    frame = build_frame("10.0.0.1", "10.0.0.2", 1, 2)
    res = parse_capture(write_capture([(1, frame)]), lambda a: {"10.0.0.1": "ics"}.get(a, a),
                        id_prefix="cap3-")
    assert res.packets[0].src.host_id == "ics"
    assert res.packets[0].dst.host_id == "10.0.0.2"
    assert res.packets[0].id == "cap3-000000"


@pytest.mark.parametrize(
    "frame",
    [
        ModbusFrame(1, 1, 3, 100, (), False),
        ModbusFrame(1, 1, 3, 0, (7, 8, 9), True),
        ModbusFrame(2, 3, 6, 16, (512,), False),
        ModbusFrame(2, 3, 6, 16, (512,), True),
        ModbusFrame(4, 1, 16, 40, (1, 2, 3), False),
        ModbusFrame(4, 1, 16, 40, (), True),
        ModbusFrame(5, 1, 0x86, 0, (), True),
        ModbusFrame(5, 1, 43, 0, (), False),
    ],
)
def test_modbus_encode_decode(frame):
    assert decode_modbus(encode_modbus(frame), frame.is_response) == frame


@pytest.mark.parametrize(
    "payload",
    [
        b"",
        bytes.fromhex("0001000000060106"),          # length says 6, PDU cut short
        bytes.fromhex("00010000000101"),            # too short for a function code
        bytes.fromhex("000100000003010600"),        # fc 6 without address/value
        bytes.fromhex("0001000000070110000a00010300"),  # fc 16 byte count mismatch
    ],
)
def test_malformed_modbus_is_absent(payload):
    assert decode_modbus(payload, False) is None
