"""Report JSON and DOT graph output.  Both are deterministic: same input, same bytes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .codec import to_dict
from .model import Completeness, Finding, TopologyGraph

COLUMNS = ("cause", "traffic", "effect")


@dataclass
class RunStats:
    ingested: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(COLUMNS, 0))
    rejected: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(COLUMNS, 0))
    skipped_frames: int = 0
    packets_in: int = 0
    triad_traffic: int = 0
    flow_packets: int = 0
    edge_packets: int = 0
    triads: Dict[str, int] = field(default_factory=lambda: {c.value: 0 for c in Completeness})
    flows: int = 0
    cause_traces: int = 0
    effect_traces: int = 0
    nodes: int = 0
    edges: int = 0
    residue_causes: List[str] = field(default_factory=list)
    residue_effects: List[str] = field(default_factory=list)
    dangling: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return self.packets_in == self.triad_traffic == self.flow_packets == self.edge_packets

    def as_dict(self) -> dict:
        return {
            "counts": {
                "ingested": dict(self.ingested),
                "rejected": dict(self.rejected),
                "skipped_frames": self.skipped_frames,
            },
            "stages": {
                "packets_in": self.packets_in,
                "triad_traffic": self.triad_traffic,
                "flow_packets": self.flow_packets,
                "edge_packets": self.edge_packets,
                "conserved": self.conserved,
                "triads": dict(self.triads),
                "flows": self.flows,
                "cause_traces": self.cause_traces,
                "effect_traces": self.effect_traces,
                "nodes": self.nodes,
                "edges": self.edges,
            },
            "residue": {
                "causes": len(self.residue_causes),
                "effects": len(self.residue_effects),
                "cause_ids": list(self.residue_causes),
                "effect_ids": list(self.residue_effects),
            },
            "dangling_hosts": list(self.dangling),
            "errors": list(self.errors),
            "notes": list(self.notes),
        }


def emit_report(findings: Sequence[Finding], stats: Optional[RunStats] = None) -> str:
    doc = (stats or RunStats()).as_dict()
    doc["findings"] = [to_dict(f) for f in sorted(findings, key=Finding.sort_key)]
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _node_label(node) -> str:
    role = "/".join(sorted(r.value for r in node.roles))
    cs, es = node.cause_summary, node.effect_summary
    causes = sum(v for k, v in cs.items() if k != "ticket_count")
    return "\n".join([
        node.host_id,
        role,
        f"causes={causes} tickets={cs.get('ticket_count', 0)}",
        f"info={es.get('Info', 0)} warn={es.get('Warning', 0)} err={es.get('Error', 0)} "
        f"settings={es.get('distinct_settings', 0)}",
    ])


def emit_dot(graph: TopologyGraph) -> str:
    if not graph.nodes and not graph.edges:
        return "digraph topology {}\n"
    lines = ["digraph topology {"]
    for h in sorted(graph.nodes):
        lines.append(f'  {_q(h)} [label={_q(_node_label(graph.nodes[h]))}];')
    for src, dst in sorted(graph.edges):
        e = graph.edges[(src, dst)]
        lines.append(f'  {_q(src)} -> {_q(dst)} [label="flows={e.flow_count} packets={e.packet_count}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
