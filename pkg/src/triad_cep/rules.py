"""Inconsistency rules over triads, Level-2 traces and the topology graph.

R1  ticket issued while the machine logged no warning or error
R2  post-maintenance settings changed keys the maintenance did not name
R3  Modbus write traffic (or a register change) with no commanding cause
R4  cause host talking to far fewer hosts than its peers
R5  host whose error rate is a statistical outlier
R6  register value seen on (almost) no other host

Statistical thresholds are compared in exact rational arithmetic so that
ties (e.g. identical error rates) never flip on rounding.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .model import (
    CauseKind,
    CauseRecord,
    CauseTrace,
    Completeness,
    EffectKind,
    EffectRecord,
    EffectTrace,
    Finding,
    FindingSeverity,
    Role,
    RuleId,
    SETTING_EFFECT_KINDS,
    Severity,
    TopologyGraph,
    TriadEvent,
)
from .topology import degree_profile

ALL_RULES: FrozenSet[RuleId] = frozenset(RuleId)


@dataclass(frozen=True)
class RuleConfig:
    # Empty set means ExactMatch; otherwise the listed keys may drift freely.
    drift_ignore: FrozenSet[str] = frozenset()
    degree_outlier_factor: Fraction = Fraction(1, 3)
    error_rate_z: Fraction = Fraction(2)
    rare_setting_max_count: int = 1
    lookback_us: int = 5_000_000
    enabled: FrozenSet[RuleId] = ALL_RULES

    def __post_init__(self):
        object.__setattr__(self, "degree_outlier_factor", Fraction(self.degree_outlier_factor))
        object.__setattr__(self, "error_rate_z", Fraction(self.error_rate_z))
        if self.degree_outlier_factor <= 0 or self.error_rate_z <= 0:
            raise ValueError("rule thresholds must be strictly positive")
        if self.rare_setting_max_count < 1 or self.lookback_us <= 0:
            raise ValueError("rule thresholds must be strictly positive")

    @property
    def drift_policy(self) -> str:
        return "IgnoreListedKeys" if self.drift_ignore else "ExactMatch"


@dataclass
class RuleInputs:
    """Everything one pipeline run hands to the rules."""

    triads: Sequence[TriadEvent] = ()
    residue_causes: Sequence[CauseRecord] = ()
    residue_effects: Sequence[EffectRecord] = ()
    cause_traces: Sequence[CauseTrace] = ()
    effect_traces: Sequence[EffectTrace] = ()
    graph: Optional[TopologyGraph] = None
    notes: List[str] = field(default_factory=list)


def rule_r1_ticket_without_error(
    triads: Iterable[TriadEvent],
    effect_traces: Iterable[EffectTrace],
    cfg: RuleConfig = RuleConfig(),
    residue_causes: Iterable[CauseRecord] = (),
) -> List[Finding]:
    tickets = [t.cause for t in triads if t.cause is not None]
    tickets += list(residue_causes)
    tickets = [c for c in tickets if c.kind is CauseKind.TICKET_ISSUED]
    traces = {t.host.host_id: t for t in effect_traces}
    findings = []
    for ticket in sorted(tickets, key=lambda c: (c.timestamp, c.id)):
        host = ticket.subject.host_id
        lo = ticket.timestamp - cfg.lookback_us
        trace = traces.get(host)
        entries = trace.entries if trace is not None else ()
        if any(
            e.severity in (Severity.WARNING, Severity.ERROR) and lo <= e.timestamp <= ticket.timestamp
            for e in entries
        ):
            continue
        findings.append(
            Finding(
                RuleId.R1,
                FindingSeverity.SUSPICIOUS,
                host,
                (ticket.id,),
                f"ticket {ticket.id} issued for {host} with no warning or error logged in the preceding "
                f"{cfg.lookback_us} us",
            )
        )
    return findings


def rule_r2_setting_drift(
    cause_traces: Iterable[CauseTrace],
    effect_traces: Iterable[EffectTrace],
    cfg: RuleConfig = RuleConfig(),
) -> List[Finding]:
    traces = {t.host.host_id: t for t in effect_traces}
    findings = []
    for ct in cause_traces:
        host = ct.subject.host_id
        et = traces.get(host)
        if et is None:
            continue
        setters = [e for e in et.entries if e.kind in SETTING_EFFECT_KINDS]
        history = list(zip(setters, et.setting_history))
        sessions = [c for c in ct.entries if c.kind is CauseKind.TICKET_ACCEPTED]
        for i, ta in enumerate(sessions):
            until = sessions[i + 1].timestamp if i + 1 < len(sessions) else math.inf
            post_idx = next(
                (j for j, (_, (ts, _)) in enumerate(history) if ta.timestamp <= ts < until), None
            )
            if post_idx is None:
                continue
            setter, (_, post) = history[post_idx]
            pre = history[post_idx - 1][1][1] if post_idx > 0 else {}
            changed = {k for k, v in post.items() if pre.get(k) != v}
            unexpected = sorted(changed - set(ta.payload) - cfg.drift_ignore)
            if unexpected:
                findings.append(
                    Finding(
                        RuleId.R2,
                        FindingSeverity.SUSPICIOUS,
                        host,
                        (ta.id, setter.id),
                        f"maintenance {ta.id} on {host} changed unexpected keys: {', '.join(unexpected)}",
                    )
                )
    return findings


def rule_r3_parameterization_without_cause(
    triads: Iterable[TriadEvent],
    residue_effects: Iterable[EffectRecord],
    cfg: RuleConfig = RuleConfig(),
) -> List[Finding]:
    findings = []
    for t in triads:
        if t.completeness not in (Completeness.MISSING_CAUSE, Completeness.TRAFFIC_ONLY):
            continue
        writes = tuple(p.id for p in t.traffic if p.modbus is not None and p.modbus.is_write_request)
        if writes:
            src = t.traffic[0].src.host_id
            findings.append(
                Finding(
                    RuleId.R3,
                    FindingSeverity.ALERT,
                    t.destination.host_id,
                    writes,
                    f"{len(writes)} Modbus write(s) from {src} to {t.destination.host_id} "
                    f"with no parameterization cause",
                )
            )
    for e in residue_effects:
        if e.kind is EffectKind.REGISTER_SETTING:
            findings.append(
                Finding(
                    RuleId.R3,
                    FindingSeverity.ALERT,
                    e.host.host_id,
                    (e.id,),
                    f"register {e.payload.get('register')} on {e.host.host_id} changed with no traffic bound",
                )
            )
    return findings


def rule_r4_degree_outlier(
    graph: TopologyGraph,
    cfg: RuleConfig = RuleConfig(),
    notes: Optional[List[str]] = None,
) -> List[Finding]:
    degrees = {h: d for h, d in degree_profile(graph, Role.CAUSE).items() if d >= 1}
    if len(degrees) < 3:
        if notes is not None:
            notes.append(f"R4 abstained: {len(degrees)} cause hosts with traffic (need 3)")
        return []
    ordered = sorted(degrees.values())
    mid = len(ordered) // 2
    median = Fraction(ordered[mid]) if len(ordered) % 2 else Fraction(ordered[mid - 1] + ordered[mid], 2)
    limit = cfg.degree_outlier_factor * median
    findings = []
    for h, d in sorted(degrees.items()):
        if d < limit:
            flows = tuple(fid for (s, _), e in sorted(graph.edges.items()) if s == h for fid in e.flow_ids)
            findings.append(
                Finding(
                    RuleId.R4,
                    FindingSeverity.NOTICE,
                    h,
                    flows,
                    f"{h} talks to {d} host(s); peer median is {float(median):g}",
                )
            )
    return findings


def rule_r5_error_rate_outlier(
    effect_traces: Iterable[EffectTrace],
    cfg: RuleConfig = RuleConfig(),
    notes: Optional[List[str]] = None,
) -> List[Finding]:
    traces = [t for t in effect_traces if t.entries]
    if len(traces) < 3:
        if notes is not None:
            notes.append(f"R5 abstained: {len(traces)} hosts with effect records (need 3)")
        return []
    rates = {t.host.host_id: Fraction(t.error_count, max(1, len(t.entries))) for t in traces}
    n = len(rates)
    mean = sum(rates.values()) / n
    var = sum((r - mean) ** 2 for r in rates.values()) / n
    findings = []
    for t in sorted(traces, key=lambda t: t.host.host_id):
        h = t.host.host_id
        dev = rates[h] - mean
        # rate > mean + z*stddev, squared to stay rational
        if dev > 0 and dev * dev > cfg.error_rate_z ** 2 * var:
            errors = tuple(e.id for e in t.entries if e.severity is Severity.ERROR)
            findings.append(
                Finding(
                    RuleId.R5,
                    FindingSeverity.NOTICE,
                    h,
                    errors,
                    f"{h} error rate {float(rates[h]):.3f} exceeds fleet mean {float(mean):.3f} "
                    f"by more than {float(cfg.error_rate_z):g} standard deviations",
                )
            )
    return findings


def final_registers(trace: EffectTrace) -> Dict[str, Tuple[str, str]]:
    """register -> (value, id of the record that set it), replaying RegisterSettings."""
    out: Dict[str, Tuple[str, str]] = {}
    for e in trace.entries:
        if e.kind is EffectKind.REGISTER_SETTING:
            out[e.payload["register"]] = (e.payload["value"], e.id)
    return out


def rule_r6_rare_setting(
    effect_traces: Iterable[EffectTrace],
    cfg: RuleConfig = RuleConfig(),
) -> List[Finding]:
    finals = {t.host.host_id: final_registers(t) for t in effect_traces}
    freq = Counter((reg, val) for regs in finals.values() for reg, (val, _) in regs.items())
    findings = []
    for host in sorted(finals):
        for reg, (val, rid) in sorted(finals[host].items()):
            if freq[(reg, val)] <= cfg.rare_setting_max_count:
                findings.append(
                    Finding(
                        RuleId.R6,
                        FindingSeverity.NOTICE,
                        host,
                        (rid,),
                        f"register {reg}={val} on {host} is seen on {freq[(reg, val)]} host(s) only",
                    )
                )
    return findings


def run_all_rules(bundle: RuleInputs, cfg: RuleConfig = RuleConfig()) -> List[Finding]:
    """Union of the enabled rules, deduplicated and sorted (severity desc, rule id, subject)."""
    found: List[Finding] = []
    on = cfg.enabled
    if RuleId.R1 in on:
        found += rule_r1_ticket_without_error(bundle.triads, bundle.effect_traces, cfg, bundle.residue_causes)
    if RuleId.R2 in on:
        found += rule_r2_setting_drift(bundle.cause_traces, bundle.effect_traces, cfg)
    if RuleId.R3 in on:
        found += rule_r3_parameterization_without_cause(bundle.triads, bundle.residue_effects, cfg)
    if RuleId.R4 in on and bundle.graph is not None:
        found += rule_r4_degree_outlier(bundle.graph, cfg, bundle.notes)
    if RuleId.R5 in on:
        found += rule_r5_error_rate_outlier(bundle.effect_traces, cfg, bundle.notes)
    if RuleId.R6 in on:
        found += rule_r6_rare_setting(bundle.effect_traces, cfg)

    unique: Dict[tuple, Finding] = {}
    for f in found:
        unique.setdefault((f.rule_id, f.subject, frozenset(f.evidence)), f)
    return sorted(unique.values(), key=Finding.sort_key)
