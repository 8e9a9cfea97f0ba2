from __future__ import annotations

import itertools

import pytest

from triad_cep.model import (
    CauseKind,
    CauseRecord,
    EffectKind,
    EffectRecord,
    Endpoint,
    ModbusFrame,
    PacketRecord,
    Severity,
    Transport,
)
from triad_cep.pcap import parse_capture
from triad_cep.pipeline import analyze
from triad_cep.records import parse_record_stream
from triad_cep.scenario import generate

SEC = 1_000_000
_ids = itertools.count()


def ep(host: str, port: int = 0, addr: str = None) -> Endpoint:
    if addr is None:
        addr = f"10.9.{sum(map(ord, host)) % 250}.{len(host) % 250 + 1}"
    return Endpoint(host, addr, port)


def pkt(ts, src="A", dst="B", length=100, sport=40000, dport=502, modbus=None, pid=None, transport=Transport.TCP):
    return PacketRecord(
        pid or f"p{next(_ids):06d}", ts, ep(src, sport), ep(dst, dport), transport, length, modbus
    )


def cause(ts, subject="B", kind=CauseKind.PARAMETERIZATION, origin="A", payload=None, cid=None, port=0):
    if payload is None:
        payload = {"16": "1"} if kind in (CauseKind.PARAMETERIZATION, CauseKind.CONFIG_ENTRY) else {"ticket": "T"}
    return CauseRecord(cid or f"c{next(_ids):06d}", ts, ep(origin), kind, ep(subject, port), payload)


def effect(ts, host="B", kind=EffectKind.LOG_ENTRY, severity=Severity.INFO, payload=None, eid=None, port=0):
    if payload is None:
        payload = {"message": "x"}
    return EffectRecord(eid or f"e{next(_ids):06d}", ts, ep(host, port), kind, severity, payload)


def write6(register=16, value=1, tid=1) -> ModbusFrame:
    return ModbusFrame(tid, 1, 6, register, (value,), False)


def scenario_records(sc):
    causes, cerr = parse_record_stream(sc.cause_lines)
    effects, eerr = parse_record_stream(sc.effect_lines)
    assert not cerr and not eerr
    hosts = {h.address: h.host_id for h in sc.hosts}
    cap = parse_capture(sc.capture, lambda a: hosts.get(a, a), id_prefix="cap0-")
    assert not cap.errors
    return causes, cap.packets, effects


def analyze_scenario(spec):
    sc = generate(spec)
    causes, packets, effects = scenario_records(sc)
    return sc, analyze(causes, packets, effects)


@pytest.fixture
def analyzed():
    return analyze_scenario
