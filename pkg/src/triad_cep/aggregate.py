"""Level-2 aggregation: packets to flows, cause records to cause traces,
effect records to effect traces (log traces plus setting histories)."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Sequence

from .correlate import burst_split
from .model import (
    SETTING_CAUSE_KINDS,
    SETTING_EFFECT_KINDS,
    TICKET_KINDS,
    CauseDatabase,
    CauseRecord,
    CauseTrace,
    EffectCollection,
    EffectRecord,
    EffectTrace,
    Endpoint,
    Flow,
    PacketRecord,
    Severity,
)

DEFAULT_FLOW_TIMEOUT_US = 60_000_000


def aggregate_flows(packets: Iterable[PacketRecord], idle_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US) -> List[Flow]:
    """Group packets by (src, dst, transport) and cut on idle gaps > idle_timeout_us."""
    flows = []
    for group in burst_split(packets, idle_timeout_us):
        functions = Counter(p.modbus.function_code for p in group if p.modbus is not None)
        flows.append(
            Flow(
                id=f"flow:{group[0].id}",
                src=group[0].src,
                dst=group[0].dst,
                transport=group[0].transport,
                first_seen=group[0].timestamp,
                last_seen=group[-1].timestamp,
                packet_count=len(group),
                byte_count=sum(p.length_bytes for p in group),
                modbus_functions=dict(sorted(functions.items())),
                member_ids=tuple(p.id for p in group),
            )
        )
    flows.sort(key=lambda f: (f.first_seen, f.src, f.dst, f.transport.value, f.id))
    return flows


def _time_sorted(records):
    return tuple(sorted(records, key=lambda r: (r.timestamp, r.id)))


def build_effect_trace(effects: Iterable[EffectRecord], host: Endpoint) -> EffectTrace:
    entries = _time_sorted(effects)
    if any(e.host.host_id != host.host_id for e in entries):
        raise ValueError(f"effect records of another host passed for {host.host_id}")
    history = []
    snapshot: Dict[str, str] = {}
    for e in entries:
        if e.kind in SETTING_EFFECT_KINDS:
            snapshot = {**snapshot, **e.setting_update()}
            history.append((e.timestamp, snapshot))
    return EffectTrace(
        host=host,
        entries=entries,
        error_count=sum(e.severity is Severity.ERROR for e in entries),
        warning_count=sum(e.severity is Severity.WARNING for e in entries),
        setting_history=tuple(history),
    )


def build_cause_trace(causes: Iterable[CauseRecord], subject: Endpoint) -> CauseTrace:
    entries = _time_sorted(causes)
    if any(c.subject.host_id != subject.host_id for c in entries):
        raise ValueError(f"cause records for another subject passed for {subject.host_id}")
    settings: Dict[str, str] = {}
    for c in entries:
        if c.kind in SETTING_CAUSE_KINDS:
            settings.update(c.payload)
    return CauseTrace(
        subject=subject,
        entries=entries,
        ticket_count=sum(c.kind in TICKET_KINDS for c in entries),
        last_settings=settings,
    )


def build_cause_database(causes: Iterable[CauseRecord]) -> CauseDatabase:
    """One CauseTrace per subject host."""
    grouped: Dict[str, List[CauseRecord]] = defaultdict(list)
    for c in causes:
        grouped[c.subject.host_id].append(c)
    traces = {}
    for host in sorted(grouped):
        members = _time_sorted(grouped[host])
        traces[host] = build_cause_trace(members, members[0].subject)
    return CauseDatabase(traces)


def build_effect_collection(effects: Iterable[EffectRecord]) -> EffectCollection:
    """One EffectTrace per host."""
    grouped: Dict[str, List[EffectRecord]] = defaultdict(list)
    for e in effects:
        grouped[e.host.host_id].append(e)
    traces = {}
    for host in sorted(grouped):
        members = _time_sorted(grouped[host])
        traces[host] = build_effect_trace(members, members[0].host)
    return EffectCollection(traces)


def explode(aggregate, index: Dict[str, object]) -> Sequence[object]:
    """Level-1 members behind a Level-2 aggregate."""
    if isinstance(aggregate, Flow):
        return [index[i] for i in aggregate.member_ids]
    return list(aggregate.entries)
