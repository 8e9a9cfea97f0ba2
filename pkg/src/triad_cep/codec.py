"""Canonical JSON form of every domain type.

Level-1 records serialize to the flat line schemas used for ingestion.
Aggregates serialize member records by id, so decoding them needs an index of
the Level-1 records (``{id: record}``).
"""

from __future__ import annotations

import json
from functools import singledispatch
from typing import Any, Dict, Mapping, Optional

from .model import (
    CauseDatabase,
    CauseKind,
    CauseRecord,
    CauseTrace,
    Completeness,
    EdgeSummary,
    EffectCollection,
    EffectKind,
    EffectRecord,
    EffectTrace,
    Endpoint,
    Finding,
    FindingSeverity,
    Flow,
    ModbusFrame,
    NodeSummary,
    PacketRecord,
    Role,
    RuleId,
    Severity,
    SourceRecord,
    TopologyGraph,
    Transport,
    TriadEvent,
)


def canonical(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dumps(obj: Any) -> str:
    """Canonical JSON text of any domain object."""
    return canonical(to_dict(obj))


def _ep(prefix: str, ep: Endpoint) -> Dict[str, Any]:
    sep = "_" if prefix else ""
    return {f"{prefix}{sep}host": ep.host_id, f"{prefix}{sep}addr": ep.address, f"{prefix}{sep}port": ep.port}


def _ep_from(prefix: str, d: Mapping[str, Any]) -> Endpoint:
    sep = "_" if prefix else ""
    return Endpoint(d[f"{prefix}{sep}host"], d[f"{prefix}{sep}addr"], d[f"{prefix}{sep}port"])


def _endpoint_dict(ep: Endpoint) -> Dict[str, Any]:
    return {"host": ep.host_id, "addr": ep.address, "port": ep.port}


def _endpoint_from(d: Mapping[str, Any]) -> Endpoint:
    return Endpoint(d["host"], d["addr"], d["port"])


@singledispatch
def to_dict(obj: Any) -> Dict[str, Any]:
    raise TypeError(f"no canonical form for {type(obj).__name__}")


@to_dict.register
def _(r: CauseRecord) -> Dict[str, Any]:
    return {
        "type": "cause",
        "id": r.id,
        "ts_us": r.timestamp,
        **_ep("origin", r.origin),
        "kind": r.kind.value,
        **_ep("subject", r.subject),
        "payload": dict(r.payload),
    }


@to_dict.register
def _(r: EffectRecord) -> Dict[str, Any]:
    return {
        "type": "effect",
        "id": r.id,
        "ts_us": r.timestamp,
        **_ep("", r.host),
        "kind": r.kind.value,
        "severity": r.severity.value,
        "payload": dict(r.payload),
    }


@to_dict.register
def _(m: ModbusFrame) -> Dict[str, Any]:
    return {
        "transaction_id": m.transaction_id,
        "unit_id": m.unit_id,
        "function_code": int(m.function_code),
        "register_address": m.register_address,
        "values": list(m.values),
        "is_response": m.is_response,
    }


@to_dict.register
def _(r: PacketRecord) -> Dict[str, Any]:
    return {
        "type": "packet",
        "id": r.id,
        "ts_us": r.timestamp,
        **_ep("src", r.src),
        **_ep("dst", r.dst),
        "transport": r.transport.value,
        "length_bytes": r.length_bytes,
        "modbus": None if r.modbus is None else to_dict(r.modbus),
    }


@to_dict.register
def _(t: TriadEvent) -> Dict[str, Any]:
    return {
        "type": "triad",
        "id": t.id,
        "cause": None if t.cause is None else t.cause.id,
        "traffic": [p.id for p in t.traffic],
        "effect": None if t.effect is None else t.effect.id,
        "window_start": t.window_start,
        "window_end": t.window_end,
        "completeness": t.completeness.value,
    }


@to_dict.register
def _(f: Flow) -> Dict[str, Any]:
    return {
        "type": "flow",
        "id": f.id,
        "src": _endpoint_dict(f.src),
        "dst": _endpoint_dict(f.dst),
        "transport": f.transport.value,
        "first_seen": f.first_seen,
        "last_seen": f.last_seen,
        "packet_count": f.packet_count,
        "byte_count": f.byte_count,
        # JSON object keys are strings; function codes are restored on load.
        "modbus_functions": {str(k): v for k, v in sorted(f.modbus_functions.items())},
        "members": list(f.member_ids),
    }


@to_dict.register
def _(c: CauseTrace) -> Dict[str, Any]:
    return {
        "type": "cause_trace",
        "subject": _endpoint_dict(c.subject),
        "entries": [r.id for r in c.entries],
        "ticket_count": c.ticket_count,
        "last_settings": dict(c.last_settings),
    }


@to_dict.register
def _(e: EffectTrace) -> Dict[str, Any]:
    return {
        "type": "effect_trace",
        "host": _endpoint_dict(e.host),
        "entries": [r.id for r in e.entries],
        "error_count": e.error_count,
        "warning_count": e.warning_count,
        "setting_history": [[ts, dict(snap)] for ts, snap in e.setting_history],
    }


@to_dict.register
def _(db: CauseDatabase) -> Dict[str, Any]:
    return {"type": "cause_database", "traces": {k: to_dict(v) for k, v in db.traces.items()}}


@to_dict.register
def _(coll: EffectCollection) -> Dict[str, Any]:
    return {"type": "effect_collection", "traces": {k: to_dict(v) for k, v in coll.traces.items()}}


@to_dict.register
def _(n: NodeSummary) -> Dict[str, Any]:
    return {
        "host_id": n.host_id,
        "roles": sorted(r.value for r in n.roles),
        "cause_summary": dict(n.cause_summary),
        "effect_summary": dict(n.effect_summary),
    }


@to_dict.register
def _(e: EdgeSummary) -> Dict[str, Any]:
    return {
        "flow_count": e.flow_count,
        "packet_count": e.packet_count,
        "byte_count": e.byte_count,
        "first_seen": e.first_seen,
        "last_seen": e.last_seen,
        "flows": list(e.flow_ids),
    }


@to_dict.register
def _(g: TopologyGraph) -> Dict[str, Any]:
    return {
        "type": "topology",
        "nodes": [to_dict(g.nodes[k]) for k in sorted(g.nodes)],
        "edges": [{"src": s, "dst": d, **to_dict(g.edges[(s, d)])} for s, d in sorted(g.edges)],
        "dangling": list(g.dangling),
    }


@to_dict.register
def _(f: Finding) -> Dict[str, Any]:
    return {
        "rule_id": f.rule_id.value,
        "severity": f.severity.value,
        "subject": f.subject,
        "evidence": list(f.evidence),
        "message": f.message,
    }


def record_from_dict(d: Mapping[str, Any]) -> SourceRecord:
    """Decode one Level-1 record.  Raises KeyError/ValueError/TypeError on malformed input."""
    kind = d["type"]
    if kind == "cause":
        return CauseRecord(
            id=d["id"],
            timestamp=d["ts_us"],
            origin=_ep_from("origin", d),
            kind=CauseKind(d["kind"]),
            subject=_ep_from("subject", d),
            payload=dict(d["payload"]),
        )
    if kind == "effect":
        return EffectRecord(
            id=d["id"],
            timestamp=d["ts_us"],
            host=_ep_from("", d),
            kind=EffectKind(d["kind"]),
            severity=Severity(d["severity"]),
            payload=dict(d["payload"]),
        )
    if kind == "packet":
        m = d.get("modbus")
        return PacketRecord(
            id=d["id"],
            timestamp=d["ts_us"],
            src=_ep_from("src", d),
            dst=_ep_from("dst", d),
            transport=Transport(d["transport"]),
            length_bytes=d["length_bytes"],
            modbus=None if m is None else ModbusFrame(
                transaction_id=m["transaction_id"],
                unit_id=m["unit_id"],
                function_code=m["function_code"],
                register_address=m["register_address"],
                values=tuple(m["values"]),
                is_response=m["is_response"],
            ),
        )
    raise ValueError(f"unknown record type {kind!r}")


def from_dict(d: Mapping[str, Any], index: Optional[Mapping[str, SourceRecord]] = None) -> Any:
    """Inverse of :func:`to_dict` for every type carrying a ``type`` tag."""
    kind = d.get("type")
    if kind in ("cause", "effect", "packet"):
        return record_from_dict(d)
    idx = index or {}
    if kind == "triad":
        return TriadEvent(
            id=d["id"],
            cause=None if d["cause"] is None else idx[d["cause"]],
            traffic=tuple(idx[i] for i in d["traffic"]),
            effect=None if d["effect"] is None else idx[d["effect"]],
            window_start=d["window_start"],
            window_end=d["window_end"],
            completeness=Completeness(d["completeness"]),
        )
    if kind == "flow":
        return Flow(
            id=d["id"],
            src=_endpoint_from(d["src"]),
            dst=_endpoint_from(d["dst"]),
            transport=Transport(d["transport"]),
            first_seen=d["first_seen"],
            last_seen=d["last_seen"],
            packet_count=d["packet_count"],
            byte_count=d["byte_count"],
            modbus_functions={int(k): v for k, v in d["modbus_functions"].items()},
            member_ids=tuple(d["members"]),
        )
    if kind == "cause_trace":
        return CauseTrace(
            subject=_endpoint_from(d["subject"]),
            entries=tuple(idx[i] for i in d["entries"]),
            ticket_count=d["ticket_count"],
            last_settings=dict(d["last_settings"]),
        )
    if kind == "effect_trace":
        return EffectTrace(
            host=_endpoint_from(d["host"]),
            entries=tuple(idx[i] for i in d["entries"]),
            error_count=d["error_count"],
            warning_count=d["warning_count"],
            setting_history=tuple((ts, dict(snap)) for ts, snap in d["setting_history"]),
        )
    if kind == "cause_database":
        return CauseDatabase({k: from_dict(v, idx) for k, v in d["traces"].items()})
    if kind == "effect_collection":
        return EffectCollection({k: from_dict(v, idx) for k, v in d["traces"].items()})
    if kind == "topology":
        nodes = {
            n["host_id"]: NodeSummary(
                host_id=n["host_id"],
                roles=frozenset(Role(r) for r in n["roles"]),
                cause_summary=dict(n["cause_summary"]),
                effect_summary=dict(n["effect_summary"]),
            )
            for n in d["nodes"]
        }
        edges = {
            (e["src"], e["dst"]): EdgeSummary(
                flow_count=e["flow_count"],
                packet_count=e["packet_count"],
                byte_count=e["byte_count"],
                first_seen=e["first_seen"],
                last_seen=e["last_seen"],
                flow_ids=tuple(e["flows"]),
            )
            for e in d["edges"]
        }
        return TopologyGraph(nodes=nodes, edges=edges, dangling=tuple(d["dangling"]))
    if "rule_id" in d:
        return Finding(
            rule_id=RuleId(d["rule_id"]),
            severity=FindingSeverity(d["severity"]),
            subject=d["subject"],
            evidence=tuple(d["evidence"]),
            message=d["message"],
        )
    raise ValueError(f"unknown document type {kind!r}")


def loads(text: str, index: Optional[Mapping[str, SourceRecord]] = None) -> Any:
    return from_dict(json.loads(text), index)
