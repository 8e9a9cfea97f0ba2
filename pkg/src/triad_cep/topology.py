"""Level-3 view: flows folded into a directed host graph whose nodes carry
count-only summaries of the hosts' cause and effect traces."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .model import (
    CauseKind,
    CauseTrace,
    EdgeSummary,
    EffectTrace,
    Flow,
    NodeSummary,
    Role,
    Severity,
    TopologyGraph,
)

log = logging.getLogger(__name__)


def _role(originates_causes: bool, has_effects: bool) -> Role:
    if originates_causes and has_effects:
        return Role.BOTH
    if originates_causes:
        return Role.CAUSE
    if has_effects:
        return Role.EFFECT
    return Role.TRAFFIC_ONLY


def build_topology(
    flows: Iterable[Flow],
    cause_traces: Iterable[CauseTrace] = (),
    effect_traces: Iterable[EffectTrace] = (),
) -> TopologyGraph:
    flows = list(flows)
    cause_traces = [t for t in cause_traces if t.entries]
    effect_traces = [t for t in effect_traces if t.entries]

    edge_flows: Dict[Tuple[str, str], List[Flow]] = defaultdict(list)
    flow_hosts: Set[str] = set()
    for f in flows:
        edge_flows[(f.src.host_id, f.dst.host_id)].append(f)
        flow_hosts.update((f.src.host_id, f.dst.host_id))

    # A host takes the Cause role by originating cause records; tickets are
    # counted on the machine they concern.
    originated: Dict[str, Counter] = defaultdict(Counter)
    tickets: Dict[str, int] = {}
    for t in cause_traces:
        tickets[t.subject.host_id] = tickets.get(t.subject.host_id, 0) + t.ticket_count
        for c in t.entries:
            originated[c.origin.host_id][c.kind] += 1

    effects_by_host: Dict[str, EffectTrace] = {t.host.host_id: t for t in effect_traces}

    hosts = set(flow_hosts) | set(originated) | set(tickets) | set(effects_by_host)
    nodes: Dict[str, NodeSummary] = {}
    for h in sorted(hosts):
        kinds = originated.get(h, Counter())
        cause_summary = {k.value: kinds.get(k, 0) for k in CauseKind}
        cause_summary["ticket_count"] = tickets.get(h, 0)
        et = effects_by_host.get(h)
        effect_summary = {s.value: 0 for s in Severity}
        effect_summary["distinct_settings"] = 0
        if et is not None:
            sev = Counter(e.severity for e in et.entries)
            effect_summary.update({s.value: sev.get(s, 0) for s in Severity})
            pairs = {(k, v) for _, snap in et.setting_history for k, v in snap.items()}
            effect_summary["distinct_settings"] = len(pairs)
        nodes[h] = NodeSummary(
            host_id=h,
            roles=frozenset({_role(bool(kinds), et is not None)}),
            cause_summary=cause_summary,
            effect_summary=effect_summary,
        )

    edges = {}
    for key in sorted(edge_flows):
        fl = edge_flows[key]
        edges[key] = EdgeSummary(
            flow_count=len(fl),
            packet_count=sum(f.packet_count for f in fl),
            byte_count=sum(f.byte_count for f in fl),
            first_seen=min(f.first_seen for f in fl),
            last_seen=max(f.last_seen for f in fl),
            flow_ids=tuple(sorted(f.id for f in fl)),
        )

    owners = {t.subject.host_id for t in cause_traces} | set(effects_by_host)
    dangling = tuple(sorted(owners - flow_hosts))
    for h in dangling:
        log.warning("DanglingTrace: %s has traces but no traffic; kept as an isolated node", h)
    return TopologyGraph(nodes=nodes, edges=edges, dangling=dangling)


def degree_profile(graph: TopologyGraph, role_filter: Optional[Role] = None) -> Dict[str, int]:
    """Out-degree (distinct destination hosts) of every host having ``role_filter``."""
    dests: Dict[str, Set[str]] = defaultdict(set)
    for src, dst in graph.edges:
        if src != dst:
            dests[src].add(dst)
    return {
        h: len(dests.get(h, ()))
        for h, node in sorted(graph.nodes.items())
        if role_filter is None or node.has_role(role_filter)
    }
