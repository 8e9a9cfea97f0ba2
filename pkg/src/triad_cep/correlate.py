"""Level-1 correlation: bind causes and effects to packet bursts.

Packets are cut into bursts (same src/dst/transport key, inter-packet gap at
most ``window_us``).  Every burst becomes one TriadEvent.  Causes and effects
are then bound to bursts by a greedy nearest-first matching that is
deterministic and independent of input order.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

from .model import (
    CauseRecord,
    Completeness,
    EffectRecord,
    Endpoint,
    PacketRecord,
    TriadEvent,
)


class EndpointMatch(enum.Enum):
    HOST_ONLY = "host"
    HOST_AND_PORT = "hostport"


@dataclass(frozen=True)
class CorrelationConfig:
    window_us: int = 5_000_000
    max_clock_skew_us: int = 100_000
    endpoint_match: EndpointMatch = EndpointMatch.HOST_ONLY

    def __post_init__(self):
        if self.window_us <= 0:
            raise ValueError("window_us must be positive")
        if self.max_clock_skew_us < 0:
            raise ValueError("max_clock_skew_us must be non-negative")
        if self.window_us <= self.max_clock_skew_us:
            raise ValueError("window_us must exceed max_clock_skew_us")

    def endpoints_match(self, a: Endpoint, b: Endpoint) -> bool:
        if a.host_id != b.host_id:
            return False
        return self.endpoint_match is EndpointMatch.HOST_ONLY or a.port == b.port

    def cause_fits(self, cause_ts: int, burst_start: int) -> bool:
        lo = burst_start - self.window_us - self.max_clock_skew_us
        return lo <= cause_ts <= burst_start + self.max_clock_skew_us

    def effect_fits(self, effect_ts: int, burst_start: int, burst_end: int) -> bool:
        lo = burst_start - self.max_clock_skew_us
        return lo <= effect_ts <= burst_end + self.window_us + self.max_clock_skew_us


class Burst(NamedTuple):
    id: str
    packets: Tuple[PacketRecord, ...]

    @property
    def start(self) -> int:
        return self.packets[0].timestamp

    @property
    def end(self) -> int:
        return self.packets[-1].timestamp

    @property
    def dst(self) -> Endpoint:
        return self.packets[0].dst


class CorrelationResult(NamedTuple):
    triads: List[TriadEvent]
    residue_causes: List[CauseRecord]
    residue_effects: List[EffectRecord]


def _key_order(p: PacketRecord):
    return (p.src, p.dst, p.transport.value)


def burst_split(packets: Iterable[PacketRecord], window_us: int) -> List[Tuple[PacketRecord, ...]]:
    """Partition packets into maximal same-key runs with gaps <= window_us.

    Groups are returned ordered by (start timestamp, first packet id).
    """
    by_key: Dict[tuple, List[PacketRecord]] = defaultdict(list)
    for p in packets:
        by_key[_key_order(p)].append(p)
    groups: List[Tuple[PacketRecord, ...]] = []
    for key in sorted(by_key):
        run: List[PacketRecord] = []
        for p in sorted(by_key[key], key=lambda q: (q.timestamp, q.id)):
            if run and p.timestamp - run[-1].timestamp > window_us:
                groups.append(tuple(run))
                run = []
            run.append(p)
        if run:
            groups.append(tuple(run))
    groups.sort(key=lambda g: (g[0].timestamp, g[0].id))
    return groups


def make_bursts(packets: Iterable[PacketRecord], window_us: int) -> List[Burst]:
    return [Burst(g[0].id, g) for g in burst_split(packets, window_us)]


R = TypeVar("R", CauseRecord, EffectRecord)


def _greedy(candidates: List[Tuple[tuple, R, Burst]]) -> Dict[str, R]:
    """Accept (record, burst) pairs nearest-first while both sides are free."""
    taken_records = set()
    binding: Dict[str, R] = {}
    for _, rec, burst in sorted(candidates, key=lambda c: c[0]):
        if rec.id in taken_records or burst.id in binding:
            continue
        taken_records.add(rec.id)
        binding[burst.id] = rec
    return binding


def _rank(rec_ts: int, rec_id: str, burst: Burst) -> tuple:
    return (abs(rec_ts - burst.start), burst.start, burst.id, rec_ts, rec_id)


def cause_candidates(causes: Iterable[CauseRecord], bursts: Sequence[Burst], cfg: CorrelationConfig):
    by_host: Dict[str, List[Burst]] = defaultdict(list)
    for b in bursts:
        by_host[b.dst.host_id].append(b)
    out = []
    for c in causes:
        for b in by_host.get(c.subject.host_id, ()):
            if cfg.endpoints_match(c.subject, b.dst) and cfg.cause_fits(c.timestamp, b.start):
                out.append((_rank(c.timestamp, c.id, b), c, b))
    return out


def effect_candidates(effects: Iterable[EffectRecord], bursts: Sequence[Burst], cfg: CorrelationConfig):
    by_host: Dict[str, List[Burst]] = defaultdict(list)
    for b in bursts:
        by_host[b.dst.host_id].append(b)
    out = []
    for e in effects:
        for b in by_host.get(e.host.host_id, ()):
            if cfg.endpoints_match(e.host, b.dst) and cfg.effect_fits(e.timestamp, b.start, b.end):
                out.append((_rank(e.timestamp, e.id, b), e, b))
    return out


def build_triad(burst: Burst, cause: Optional[CauseRecord], effect: Optional[EffectRecord]) -> TriadEvent:
    stamps = [p.timestamp for p in burst.packets]
    if cause is not None:
        stamps.append(cause.timestamp)
    if effect is not None:
        stamps.append(effect.timestamp)
    return TriadEvent(
        id=f"triad:{burst.id}",
        cause=cause,
        traffic=burst.packets,
        effect=effect,
        window_start=min(stamps),
        window_end=max(stamps),
        completeness=Completeness.of(cause is not None, effect is not None),
    )


def correlate(
    causes: Sequence[CauseRecord],
    packets: Sequence[PacketRecord],
    effects: Sequence[EffectRecord],
    cfg: CorrelationConfig = CorrelationConfig(),
) -> CorrelationResult:
    """Correlate the three Level-1 columns into TriadEvents plus a residue set."""
    bursts = make_bursts(packets, cfg.window_us)
    cause_of = _greedy(cause_candidates(causes, bursts, cfg))
    effect_of = _greedy(effect_candidates(effects, bursts, cfg))

    triads = [build_triad(b, cause_of.get(b.id), effect_of.get(b.id)) for b in bursts]
    triads.sort(key=lambda t: (t.window_start, t.id))

    bound_causes = {c.id for c in cause_of.values()}
    bound_effects = {e.id for e in effect_of.values()}
    residue_c = sorted((c for c in causes if c.id not in bound_causes), key=lambda r: (r.timestamp, r.id))
    residue_e = sorted((e for e in effects if e.id not in bound_effects), key=lambda r: (r.timestamp, r.id))
    return CorrelationResult(triads, residue_c, residue_e)
