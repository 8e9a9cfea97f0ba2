"""Classic capture-file reading and writing, Ethernet/IPv4/TCP/UDP, Modbus/TCP.

Only microsecond-resolution capture files with Ethernet link type are
accepted.  Payloads on TCP port 502 are decoded as Modbus/TCP when the MBAP
header is valid.
"""

from __future__ import annotations

import socket
import struct
from typing import Callable, Iterable, List, NamedTuple, Optional, Tuple

from .model import (
    Endpoint,
    FunctionCode,
    InvariantViolation,
    ModbusFrame,
    PacketRecord,
    Transport,
    validate_record,
)
from .records import ParseError

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
MODBUS_PORT = 502

ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
IPPROTO_TCP = 6
IPPROTO_UDP = 17


class CaptureError(Exception):
    pass


class BadMagic(CaptureError):
    pass


class CaptureResult(NamedTuple):
    packets: List[PacketRecord]
    errors: List[ParseError]
    skipped: int


def _mbap(payload: bytes):
    if len(payload) < 8:
        return None
    tid, pid, length, uid = struct.unpack_from(">HHHB", payload, 0)
    if pid != 0 or length < 2 or len(payload) < 6 + length:
        return None
    return tid, uid, payload[7 : 6 + length]


def decode_modbus(payload: bytes, is_response: bool) -> Optional[ModbusFrame]:
    """Decode one Modbus/TCP ADU; None when the payload is not valid Modbus."""
    head = _mbap(payload)
    if head is None:
        return None
    tid, uid, pdu = head
    fc = pdu[0]
    body = pdu[1:]
    address, values = 0, ()
    if fc & 0x80:
        pass  # exception response, kept opaque
    elif fc == FunctionCode.READ_HOLDING_REGISTERS:
        if is_response:
            if not body or len(body) < 1 + body[0] or body[0] % 2:
                return None
            values = struct.unpack_from(f">{body[0] // 2}H", body, 1)
        else:
            if len(body) < 4:
                return None
            address, _qty = struct.unpack_from(">HH", body, 0)
    elif fc == FunctionCode.WRITE_SINGLE_REGISTER:
        if len(body) < 4:
            return None
        address, value = struct.unpack_from(">HH", body, 0)
        values = (value,)
    elif fc == FunctionCode.WRITE_MULTIPLE_REGISTERS:
        if len(body) < 4:
            return None
        address, qty = struct.unpack_from(">HH", body, 0)
        if not is_response:
            if len(body) < 5 or body[4] != 2 * qty or len(body) < 5 + 2 * qty or not 1 <= qty <= 123:
                return None
            values = struct.unpack_from(f">{qty}H", body, 5)
    return ModbusFrame(
        transaction_id=tid,
        unit_id=uid,
        function_code=int(fc),
        register_address=address,
        values=tuple(values),
        is_response=is_response,
    )


def encode_modbus(frame: ModbusFrame) -> bytes:
    """Build the Modbus/TCP ADU for a frame (inverse of :func:`decode_modbus`)."""
    fc = frame.function_code
    if fc == FunctionCode.READ_HOLDING_REGISTERS:
        if frame.is_response:
            pdu = struct.pack(f">BB{len(frame.values)}H", fc, 2 * len(frame.values), *frame.values)
        else:
            pdu = struct.pack(">BHH", fc, frame.register_address, max(1, len(frame.values)))
    elif fc == FunctionCode.WRITE_SINGLE_REGISTER:
        pdu = struct.pack(">BHH", fc, frame.register_address, frame.values[0])
    elif fc == FunctionCode.WRITE_MULTIPLE_REGISTERS:
        if frame.is_response:
            pdu = struct.pack(">BHH", fc, frame.register_address, len(frame.values) or 1)
        else:
            n = len(frame.values)
            pdu = struct.pack(f">BHHB{n}H", fc, frame.register_address, n, 2 * n, *frame.values)
    else:
        pdu = bytes([fc & 0xFF])
    return struct.pack(">HHHB", frame.transaction_id, 0, len(pdu) + 1, frame.unit_id) + pdu


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f">{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(
    src_addr: str,
    dst_addr: str,
    src_port: int,
    dst_port: int,
    payload: bytes = b"",
    transport: Transport = Transport.TCP,
    seq: int = 0,
    ip_id: int = 0,
) -> bytes:
    """Ethernet II + IPv4 + TCP/UDP frame carrying ``payload``."""
    if transport is Transport.TCP:
        # PSH|ACK, fixed window; checksums of the transport header are not verified on read.
        l4 = struct.pack(">HHIIBBHHH", src_port, dst_port, seq & 0xFFFFFFFF, 0, 5 << 4, 0x18, 8192, 0, 0)
        proto = IPPROTO_TCP
    else:
        l4 = struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0)
        proto = IPPROTO_UDP
    total_len = 20 + len(l4) + len(payload)
    ip = struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, total_len, ip_id & 0xFFFF, 0x4000, 64, proto, 0,
        socket.inet_aton(src_addr), socket.inet_aton(dst_addr),
    )
    ip = ip[:10] + struct.pack(">H", _ip_checksum(ip)) + ip[12:]
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack(">H", ETHERTYPE_IPV4)
    return eth + ip + l4 + payload


def write_capture(frames: Iterable[Tuple[int, bytes]], big_endian: bool = False, snaplen: int = 65535) -> bytes:
    """Serialize ``(timestamp_us, frame_bytes)`` pairs into a capture file."""
    e = ">" if big_endian else "<"
    out = [struct.pack(f"{e}IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for ts_us, frame in frames:
        sec, usec = divmod(ts_us, 1_000_000)
        out.append(struct.pack(f"{e}IIII", sec, usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


def _byte_order(data: bytes) -> str:
    if len(data) < 24:
        raise BadMagic("file shorter than the global header")
    (le_magic,) = struct.unpack_from("<I", data, 0)
    if le_magic == MAGIC_USEC:
        return "<"
    if le_magic == int.from_bytes(MAGIC_USEC.to_bytes(4, "little"), "big"):
        return ">"
    if MAGIC_NSEC in (le_magic, int.from_bytes(data[:4], "big")):
        raise BadMagic("nanosecond-resolution captures are not supported")
    raise BadMagic(f"unrecognized magic 0x{le_magic:08x}")


def parse_capture(
    data: bytes,
    resolve_host: Callable[[str], str] = str,
    id_prefix: str = "pkt-",
    source: str = "",
) -> CaptureResult:
    """Decode every IPv4 TCP/UDP packet of a capture file, in file order.

    Raises BadMagic for an unrecognized header.  Truncated packets become
    errors; non-IPv4 and non-TCP/UDP frames are skipped and counted.
    """
    e = _byte_order(data)
    linktype = struct.unpack_from(f"{e}I", data, 20)[0]
    if linktype != LINKTYPE_ETHERNET:
        raise CaptureError(f"unsupported link type {linktype}")

    packets: List[PacketRecord] = []
    errors: List[ParseError] = []
    skipped = 0
    offset, index = 24, 0
    while offset < len(data):
        if offset + 16 > len(data):
            errors.append(ParseError(index, "TruncatedPacket: record header cut short", source))
            break
        sec, usec, incl, _orig = struct.unpack_from(f"{e}IIII", data, offset)
        offset += 16
        frame = data[offset : offset + incl]
        offset += incl
        if len(frame) < incl:
            errors.append(ParseError(index, "TruncatedPacket: frame data cut short", source))
            break
        try:
            rec = _decode_frame(frame, sec * 1_000_000 + usec, f"{id_prefix}{index:06d}", resolve_host)
        except _Truncated as exc:
            errors.append(ParseError(index, f"TruncatedPacket: {exc}", source))
        except InvariantViolation as exc:
            errors.append(ParseError(index, f"InvariantViolation: {exc}", source))
        else:
            if rec is None:
                skipped += 1
            else:
                packets.append(rec)
        index += 1
    return CaptureResult(packets, errors, skipped)


class _Truncated(Exception):
    pass


def _decode_frame(frame: bytes, ts_us: int, pid: str, resolve_host) -> Optional[PacketRecord]:
    if len(frame) < ETH_HEADER_LEN:
        raise _Truncated("ethernet header")
    off = 12
    (ethertype,) = struct.unpack_from(">H", frame, off)
    off += 2
    while ethertype == ETHERTYPE_VLAN:
        if len(frame) < off + 4:
            raise _Truncated("vlan tag")
        (ethertype,) = struct.unpack_from(">H", frame, off + 2)
        off += 4
    if ethertype != ETHERTYPE_IPV4:
        return None
    if len(frame) < off + 20:
        raise _Truncated("ipv4 header")
    vihl, _tos, total_len = struct.unpack_from(">BBH", frame, off)
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    proto = frame[off + 9]
    src_addr = socket.inet_ntoa(frame[off + 12 : off + 16])
    dst_addr = socket.inet_ntoa(frame[off + 16 : off + 20])
    if proto not in (IPPROTO_TCP, IPPROTO_UDP):
        return None
    if ihl < 20 or len(frame) < off + ihl:
        raise _Truncated("ipv4 options")
    # Ethernet padding may follow the IP datagram; trust the IP total length.
    ip_end = min(len(frame), off + total_len) if total_len >= ihl else len(frame)
    l4 = off + ihl
    if proto == IPPROTO_TCP:
        if ip_end < l4 + 20:
            raise _Truncated("tcp header")
        sport, dport = struct.unpack_from(">HH", frame, l4)
        doff = (frame[l4 + 12] >> 4) * 4
        if doff < 20 or ip_end < l4 + doff:
            raise _Truncated("tcp options")
        payload = frame[l4 + doff : ip_end]
        transport = Transport.TCP
    else:
        if ip_end < l4 + 8:
            raise _Truncated("udp header")
        sport, dport = struct.unpack_from(">HH", frame, l4)
        payload = frame[l4 + 8 : ip_end]
        transport = Transport.UDP

    modbus = None
    if transport is Transport.TCP and payload and MODBUS_PORT in (sport, dport):
        modbus = decode_modbus(payload, is_response=(sport == MODBUS_PORT and dport != MODBUS_PORT))

    rec = PacketRecord(
        id=pid,
        timestamp=ts_us,
        src=Endpoint(resolve_host(src_addr), src_addr, sport),
        dst=Endpoint(resolve_host(dst_addr), dst_addr, dport),
        transport=transport,
        length_bytes=total_len if total_len >= ihl else len(frame) - off,
        modbus=modbus,
    )
    return validate_record(rec)
