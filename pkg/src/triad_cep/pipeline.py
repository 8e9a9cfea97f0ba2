"""Batch pipeline: ingest, validate, correlate, aggregate, build the graph, apply rules."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .aggregate import DEFAULT_FLOW_TIMEOUT_US, aggregate_flows, build_cause_database, build_effect_collection
from .correlate import CorrelationConfig, CorrelationResult, correlate
from .model import (
    CauseDatabase,
    CauseRecord,
    EffectCollection,
    EffectRecord,
    Finding,
    Flow,
    InvariantViolation,
    PacketRecord,
    SourceRecord,
    TopologyGraph,
)
from .pcap import CaptureError, parse_capture
from .records import HostMap, ParseError, parse_record_stream
from .report import RunStats, emit_dot, emit_report
from .rules import RuleConfig, RuleInputs, run_all_rules
from .topology import build_topology

log = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_INPUT_ERRORS = 2
EXIT_USAGE = 64
EXIT_IO = 74


class PipelineIOError(OSError):
    pass


@dataclass
class PipelineInputs:
    cause_files: Sequence[str] = ()
    effect_files: Sequence[str] = ()
    pcap_files: Sequence[str] = ()
    hosts_file: Optional[str] = None

    def __bool__(self) -> bool:
        return bool(self.cause_files or self.effect_files or self.pcap_files)


@dataclass
class Analysis:
    correlation: CorrelationResult
    flows: List[Flow]
    cause_db: CauseDatabase
    effect_coll: EffectCollection
    graph: TopologyGraph
    findings: List[Finding]
    stats: RunStats

    @property
    def report(self) -> str:
        return emit_report(self.findings, self.stats)

    @property
    def dot(self) -> str:
        return emit_dot(self.graph)

    @property
    def exit_code(self) -> int:
        if self.findings:
            return EXIT_FINDINGS
        if self.stats.errors or any(self.stats.rejected.values()):
            return EXIT_INPUT_ERRORS
        return EXIT_CLEAN


def analyze(
    causes: Sequence[CauseRecord],
    packets: Sequence[PacketRecord],
    effects: Sequence[EffectRecord],
    corr_cfg: CorrelationConfig = CorrelationConfig(),
    flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US,
    rule_cfg: Optional[RuleConfig] = None,
    stats: Optional[RunStats] = None,
) -> Analysis:
    """Run every stage on already validated records."""
    stats = stats or RunStats()
    if rule_cfg is None:
        rule_cfg = RuleConfig(lookback_us=corr_cfg.window_us)

    corr = correlate(causes, packets, effects, corr_cfg)
    flows = aggregate_flows(packets, flow_timeout_us)
    cause_db = build_cause_database(causes)
    effect_coll = build_effect_collection(effects)
    graph = build_topology(flows, cause_db, effect_coll)

    bundle = RuleInputs(
        triads=corr.triads,
        residue_causes=corr.residue_causes,
        residue_effects=corr.residue_effects,
        cause_traces=list(cause_db),
        effect_traces=list(effect_coll),
        graph=graph,
    )
    findings = run_all_rules(bundle, rule_cfg)

    stats.packets_in = len(packets)
    stats.triad_traffic = sum(len(t.traffic) for t in corr.triads)
    stats.flow_packets = sum(f.packet_count for f in flows)
    stats.edge_packets = sum(e.packet_count for e in graph.edges.values())
    for t in corr.triads:
        stats.triads[t.completeness.value] += 1
    stats.flows = len(flows)
    stats.cause_traces = len(cause_db)
    stats.effect_traces = len(effect_coll)
    stats.nodes = len(graph.nodes)
    stats.edges = len(graph.edges)
    stats.residue_causes = [c.id for c in corr.residue_causes]
    stats.residue_effects = [e.id for e in corr.residue_effects]
    stats.dangling = list(graph.dangling)
    stats.notes.extend(bundle.notes)
    return Analysis(corr, flows, cause_db, effect_coll, graph, findings, stats)


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise PipelineIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _column(r: SourceRecord) -> str:
    return {CauseRecord: "cause", EffectRecord: "effect", PacketRecord: "traffic"}[type(r)]


class _Registry:
    """Run-wide checks: unique ids and one host id per address."""

    def __init__(self, host_map: HostMap):
        self.ids: set = set()
        self.binding: Dict[str, str] = host_map.as_dict()

    def admit(self, r: SourceRecord) -> None:
        if r.id in self.ids:
            raise InvariantViolation("id", f"duplicate record id {r.id}")
        eps = {CauseRecord: ("origin", "subject"), EffectRecord: ("host",), PacketRecord: ("src", "dst")}[type(r)]
        for name in eps:
            ep = getattr(r, name)
            bound = self.binding.get(ep.address)
            if bound is not None and bound != ep.host_id:
                raise InvariantViolation(name, f"address {ep.address} is already host {bound}, not {ep.host_id}")
        for name in eps:
            ep = getattr(r, name)
            self.binding.setdefault(ep.address, ep.host_id)
        self.ids.add(r.id)

    def resolve(self, address: str) -> str:
        return self.binding.get(address, address)


def load_inputs(inputs: PipelineInputs, stats: RunStats) -> Tuple[List[CauseRecord], List[PacketRecord], List[EffectRecord]]:
    host_map = HostMap()
    if inputs.hosts_file:
        host_map, errs = HostMap.from_lines(_read_bytes(inputs.hosts_file).splitlines(), inputs.hosts_file)
        stats.errors.extend(str(e) for e in errs)

    registry = _Registry(host_map)
    causes: List[CauseRecord] = []
    effects: List[EffectRecord] = []
    packets: List[PacketRecord] = []

    def take(records, errors: List[ParseError], column: str, source: str):
        for e in errors:
            stats.rejected[column] += 1
            stats.errors.append(str(e))
        for r in records:
            try:
                registry.admit(r)
            except InvariantViolation as exc:
                stats.rejected[_column(r)] += 1
                stats.errors.append(f"{source}: {r.id}: InvariantViolation: {exc}")
                continue
            stats.ingested[_column(r)] += 1
            {CauseRecord: causes, EffectRecord: effects, PacketRecord: packets}[type(r)].append(r)

    for column, files in (("cause", inputs.cause_files), ("effect", inputs.effect_files)):
        for path in files:
            records, errors = parse_record_stream(_read_bytes(path).splitlines(), source=path)
            take(records, errors, column, path)

    for i, path in enumerate(inputs.pcap_files):
        data = _read_bytes(path)
        try:
            result = parse_capture(data, registry.resolve, id_prefix=f"cap{i}-", source=path)
        except CaptureError as exc:
            stats.rejected["traffic"] += 1
            stats.errors.append(f"{path}: {type(exc).__name__}: {exc}")
            continue
        stats.skipped_frames += result.skipped
        take(result.packets, result.errors, "traffic", path)
    return causes, packets, effects


def run_pipeline(
    inputs: PipelineInputs,
    corr_cfg: CorrelationConfig = CorrelationConfig(),
    flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US,
    rule_cfg: Optional[RuleConfig] = None,
) -> Analysis:
    """File-level entry point.  Raises ValueError without inputs, PipelineIOError on unreadable files."""
    if not inputs:
        raise ValueError("at least one --cause, --effect or --pcap input is required")
    stats = RunStats()
    causes, packets, effects = load_inputs(inputs, stats)
    if rule_cfg is not None and rule_cfg.lookback_us != corr_cfg.window_us:
        rule_cfg = dataclasses.replace(rule_cfg, lookback_us=corr_cfg.window_us)
    return analyze(causes, packets, effects, corr_cfg, flow_timeout_us, rule_cfg, stats)
