"""Deterministic synthetic corpora for the two industrial use cases.

RemoteMaintenance
    One owner workstation, one maintenance technician, N-2 machines.  Each
    session on a machine: owner polls the machine and it logs a malfunction
    warning; the owner issues a ticket (ticket traffic owner -> machine); the
    technician accepts it and connects; the machine logs its new settings.

PlcFieldbus
    Three ICS hosts and N-3 PLCs.  Every write is a Parameterization cause on
    the ICS, a Modbus write (plus optional read-back) to the PLC, and a
    RegisterSetting effect on the PLC.  All PLCs share one register recipe.

Randomness comes from SplitMix64 only:

    state <- state + 0x9E3779B97F4A7C15            (mod 2**64)
    z <- (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9 (mod 2**64)
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB          (mod 2**64)
    out <- z ^ (z >> 31)

and an inclusive range draw is ``lo + out % (hi - lo + 1)``.
"""

from __future__ import annotations

import enum
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Set, Tuple

from .codec import dumps
from .model import (
    CauseKind,
    CauseRecord,
    EffectKind,
    EffectRecord,
    Endpoint,
    ModbusFrame,
    RuleId,
    Severity,
    Transport,
)
from .pcap import MODBUS_PORT, build_frame, encode_modbus, write_capture

MASK64 = (1 << 64) - 1
BASE_TIME_US = 1_500_000_000_000_000
MS = 1_000
SECOND = 1_000_000

EPHEMERAL = (49152, 65535)
POLL_PORT = 4840
TICKET_PORT = 443
MAINT_PORT = 22

MACHINE_PARAMS = ("feed_rate", "spindle_speed", "coolant_flow", "tool_offset")
ROGUE_PARAM = "safety_interlock"
REGISTERS = (16, 17, 18, 19, 20, 21, 22, 23)
ICS_COUNT = 3

MAINTENANCE_SLOT_US = 40 * SECOND
PLC_SLOT_US = 20 * SECOND


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def between(self, lo: int, hi: int) -> int:
        return lo + self.next_u64() % (hi - lo + 1)


class Profile(enum.Enum):
    REMOTE_MAINTENANCE = "RemoteMaintenance"
    PLC_FIELDBUS = "PlcFieldbus"

    @classmethod
    def parse(cls, text: str) -> "Profile":
        aliases = {"maintenance": cls.REMOTE_MAINTENANCE, "plc": cls.PLC_FIELDBUS}
        return aliases.get(text.lower()) or cls(text)


class AnomalyKind(enum.Enum):
    INCONSISTENT_TICKET = "InconsistentTicket"
    MISCONFIGURATION = "Misconfiguration"
    SPOOFED_WRITE = "SpoofedWrite"
    LOW_DEGREE_ICS = "LowDegreeIcs"
    HIGH_ERROR_HOST = "HighErrorHost"
    UNIQUE_SETTING = "UniqueSetting"


RULE_FOR_ANOMALY = {
    AnomalyKind.INCONSISTENT_TICKET: RuleId.R1,
    AnomalyKind.MISCONFIGURATION: RuleId.R2,
    AnomalyKind.SPOOFED_WRITE: RuleId.R3,
    AnomalyKind.LOW_DEGREE_ICS: RuleId.R4,
    AnomalyKind.HIGH_ERROR_HOST: RuleId.R5,
    AnomalyKind.UNIQUE_SETTING: RuleId.R6,
}

_PROFILE_KINDS = {
    Profile.REMOTE_MAINTENANCE: {
        AnomalyKind.INCONSISTENT_TICKET: "machine",
        AnomalyKind.MISCONFIGURATION: "machine",
        AnomalyKind.HIGH_ERROR_HOST: "machine",
    },
    Profile.PLC_FIELDBUS: {
        AnomalyKind.SPOOFED_WRITE: "plc",
        AnomalyKind.LOW_DEGREE_ICS: "ics",
        AnomalyKind.UNIQUE_SETTING: "plc",
    },
}


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class AnomalySpec:
    kind: AnomalyKind
    target: int
    params: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    profile: Profile
    host_count: int
    # Sessions per machine (maintenance) or write rounds per PLC (fieldbus).
    sessions: int = 2
    injected: Tuple[AnomalySpec, ...] = ()


@dataclass(frozen=True)
class HostInfo:
    host_id: str
    address: str
    role: str


@dataclass
class Scenario:
    spec: ScenarioSpec
    hosts: List[HostInfo]
    causes: List[CauseRecord]
    effects: List[EffectRecord]
    capture: bytes
    manifest: dict

    @property
    def cause_lines(self) -> List[str]:
        return [dumps(c) for c in self.causes]

    @property
    def effect_lines(self) -> List[str]:
        return [dumps(e) for e in self.effects]

    @property
    def host_lines(self) -> List[str]:
        return [json.dumps({"addr": h.address, "host_id": h.host_id}, sort_keys=True) for h in self.hosts]

    def write(self, out_dir: str) -> Dict[str, str]:
        """Write causes.jsonl, effects.jsonl, traffic.pcap, hosts.jsonl and manifest.json."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "cause": os.path.join(out_dir, "causes.jsonl"),
            "effect": os.path.join(out_dir, "effects.jsonl"),
            "pcap": os.path.join(out_dir, "traffic.pcap"),
            "hosts": os.path.join(out_dir, "hosts.jsonl"),
            "manifest": os.path.join(out_dir, "manifest.json"),
        }
        for key, lines in (("cause", self.cause_lines), ("effect", self.effect_lines), ("hosts", self.host_lines)):
            with open(paths[key], "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(line + "\n" for line in lines)
        with open(paths["pcap"], "wb") as fh:
            fh.write(self.capture)
        with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return paths


def host_layout(profile: Profile, host_count: int) -> List[HostInfo]:
    if profile is Profile.REMOTE_MAINTENANCE:
        if host_count < 3:
            raise InvalidSpec("RemoteMaintenance needs at least 3 hosts (owner, technician, machine)")
        hosts = [HostInfo("owner", "10.0.0.10", "owner"), HostInfo("technician", "10.0.9.20", "technician")]
        hosts += [HostInfo(f"machine-{i:02d}", f"10.0.1.{100 + i}", "machine") for i in range(host_count - 2)]
    else:
        if host_count < ICS_COUNT + 3:
            raise InvalidSpec("PlcFieldbus needs at least 6 hosts (3 ICS, 3 PLC)")
        hosts = [HostInfo(f"ics-{i}", f"10.1.0.{10 + i}", "ics") for i in range(ICS_COUNT)]
        hosts += [HostInfo(f"plc-{i:02d}", f"10.1.1.{100 + i}", "plc") for i in range(host_count - ICS_COUNT)]
    return hosts


@dataclass
class _Injection:
    spec: AnomalySpec
    cause_ids: List[str] = field(default_factory=list)
    effect_ids: List[str] = field(default_factory=list)
    packet_seqs: List[int] = field(default_factory=list)


class _Builder:
    def __init__(self, rng: SplitMix64):
        self.rng = rng
        self.causes: List[CauseRecord] = []
        self.effects: List[EffectRecord] = []
        self.frames: List[Tuple[int, int, bytes]] = []  # (ts, seq, frame)
        self.edges: Set[Tuple[str, str]] = set()
        self.nodes: Set[str] = set()
        self._tid: Counter = Counter()

    def cause(self, ts, origin, kind, subject, payload) -> CauseRecord:
        rec = CauseRecord(f"c-{len(self.causes) + 1:06d}", ts, origin, kind, subject, payload)
        self.causes.append(rec)
        self.nodes.update((origin.host_id, subject.host_id))
        return rec

    def effect(self, ts, host, kind, severity, payload) -> EffectRecord:
        rec = EffectRecord(f"e-{len(self.effects) + 1:06d}", ts, host, kind, severity, payload)
        self.effects.append(rec)
        self.nodes.add(host.host_id)
        return rec

    def packet(self, ts: int, src: Endpoint, dst: Endpoint, payload: bytes) -> int:
        seq = len(self.frames)
        frame = build_frame(src.address, dst.address, src.port, dst.port, payload, Transport.TCP, seq=seq, ip_id=seq)
        self.frames.append((ts, seq, frame))
        self.edges.add((src.host_id, dst.host_id))
        self.nodes.update((src.host_id, dst.host_id))
        return seq

    def filler(self) -> bytes:
        return bytes(self.rng.between(20, 160))

    def next_tid(self, host: str) -> int:
        self._tid[host] += 1
        return self._tid[host] & 0xFFFF

    def exchange(self, t: int, client: Endpoint, server: Endpoint, requests: Sequence[bytes], responses: Sequence[bytes]):
        """Requests client->server with gaps of 1-50 ms, each answered 0.5-5 ms later.

        Returns (packet seqs, timestamp of the last request)."""
        seqs = []
        for i, (req, resp) in enumerate(zip(requests, responses)):
            if i:
                t += self.rng.between(1 * MS, 50 * MS)
            seqs.append(self.packet(t, client, server, req))
            seqs.append(self.packet(t + self.rng.between(500, 5 * MS), server, client, resp))
        return seqs, t


def _ep(h: HostInfo, port: int) -> Endpoint:
    return Endpoint(h.host_id, h.address, port)


def _validate(spec: ScenarioSpec, hosts: List[HostInfo]) -> None:
    if spec.sessions < 0:
        raise InvalidSpec("sessions must be >= 0")
    allowed = _PROFILE_KINDS[spec.profile]
    seen = set()
    for a in spec.injected:
        if a.kind not in allowed:
            raise InvalidSpec(f"{a.kind.value} does not apply to the {spec.profile.value} profile")
        if not 0 <= a.target < len(hosts):
            raise InvalidSpec(f"anomaly target {a.target} out of range 0..{len(hosts) - 1}")
        if hosts[a.target].role != allowed[a.kind]:
            raise InvalidSpec(f"{a.kind.value} must target a {allowed[a.kind]} host, got {hosts[a.target].host_id}")
        if spec.sessions < 1:
            raise InvalidSpec("anomalies need at least one session")
        if (a.kind, a.target) in seen:
            raise InvalidSpec(f"duplicate injection {a.kind.value}@{a.target}")
        seen.add((a.kind, a.target))
    kinds = Counter(a.kind for a in spec.injected)
    ticket_targets = {a.target for a in spec.injected if a.kind is AnomalyKind.INCONSISTENT_TICKET}
    error_targets = {a.target for a in spec.injected if a.kind is AnomalyKind.HIGH_ERROR_HOST}
    if ticket_targets & error_targets:
        raise InvalidSpec("InconsistentTicket and HighErrorHost cannot share a machine")
    machines = sum(h.role == "machine" for h in hosts)
    # A lone outlier among n hosts sits sqrt(n-1) population deviations above the mean.
    if kinds[AnomalyKind.HIGH_ERROR_HOST] and (machines < 6 or kinds[AnomalyKind.HIGH_ERROR_HOST] > 1):
        raise InvalidSpec("HighErrorHost needs at least 6 machines and a single target")
    if kinds[AnomalyKind.LOW_DEGREE_ICS] > 1:
        raise InvalidSpec("at most one LowDegreeIcs per scenario")


def generate(spec: ScenarioSpec) -> Scenario:
    hosts = host_layout(spec.profile, spec.host_count)
    _validate(spec, hosts)
    rng = SplitMix64(spec.seed)
    b = _Builder(rng)
    injections = [_Injection(a) for a in spec.injected]
    if spec.profile is Profile.REMOTE_MAINTENANCE:
        _gen_maintenance(spec, hosts, b, injections)
    else:
        _gen_plc(spec, hosts, b, injections)

    b.frames.sort(key=lambda f: (f[0], f[1]))
    index_of = {seq: i for i, (_, seq, _) in enumerate(b.frames)}
    capture = write_capture((ts, frame) for ts, _, frame in b.frames)
    manifest = _manifest(spec, hosts, b, injections, index_of)
    return Scenario(spec, hosts, b.causes, b.effects, capture, manifest)


def _gen_maintenance(spec: ScenarioSpec, hosts: List[HostInfo], b: _Builder, injections: List[_Injection]) -> None:
    rng = b.rng
    owner, tech = hosts[0], hosts[1]
    machines = [i for i, h in enumerate(hosts) if h.role == "machine"]
    by_kind = defaultdict(dict)
    for inj in injections:
        by_kind[inj.spec.kind][inj.spec.target] = inj

    slot = 0
    ticket_no = 0
    for s in range(spec.sessions):
        for m in machines:
            mach = hosts[m]
            T = BASE_TIME_US + slot * MAINTENANCE_SLOT_US + rng.between(0, SECOND)
            slot += 1
            inconsistent = by_kind[AnomalyKind.INCONSISTENT_TICKET].get(m) if s == 0 else None
            misconfig = by_kind[AnomalyKind.MISCONFIGURATION].get(m) if s == 0 else None
            high_err = by_kind[AnomalyKind.HIGH_ERROR_HOST].get(m)

            # owner polls the machine, the machine reports its state
            n = rng.between(1, 3)
            client = _ep(owner, rng.between(*EPHEMERAL))
            _, last = b.exchange(T, client, _ep(mach, POLL_PORT),
                                 [b.filler() for _ in range(n)], [b.filler() for _ in range(n)])
            t_log = last + rng.between(10 * MS, 200 * MS)
            if inconsistent:
                sev, msg = Severity.INFO, "status nominal"
            elif high_err:
                sev, msg = Severity.ERROR, "axis drive fault"
            else:
                sev, msg = Severity.WARNING, "vibration above limit"
            log = b.effect(t_log, _ep(mach, 0), EffectKind.LOG_ENTRY, sev, {"message": msg})
            for inj in (inconsistent, high_err):
                if inj:
                    inj.effect_ids.append(log.id)

            # ticket, then the ticket opens a maintenance window on the machine
            ticket_no += 1
            ticket_ref = f"TCK-{ticket_no:05d}"
            t_ticket = t_log + rng.between(500 * MS, 2 * SECOND)
            ticket = b.cause(t_ticket, _ep(owner, 0), CauseKind.TICKET_ISSUED, _ep(mach, 0),
                             {"ticket": ticket_ref, "summary": "machine malfunction"})
            if inconsistent:
                inconsistent.cause_ids.append(ticket.id)
            n = rng.between(1, 3)
            b.exchange(t_ticket + rng.between(50 * MS, 500 * MS), _ep(owner, rng.between(*EPHEMERAL)),
                       _ep(mach, TICKET_PORT), [b.filler() for _ in range(n)], [b.filler() for _ in range(n)])

            # technician accepts and performs the maintenance
            key = MACHINE_PARAMS[s % len(MACHINE_PARAMS)]
            value = str(rng.between(100, 999))
            t_acc = T + 20 * SECOND + rng.between(0, SECOND)
            accepted = b.cause(t_acc, _ep(tech, 0), CauseKind.TICKET_ACCEPTED, _ep(mach, 0),
                               {"ticket": ticket_ref, key: value})
            n = rng.between(2, 6)
            seqs, last = b.exchange(t_acc + rng.between(50 * MS, 500 * MS), _ep(tech, rng.between(*EPHEMERAL)),
                                    _ep(mach, MAINT_PORT), [b.filler() for _ in range(n)],
                                    [b.filler() for _ in range(n)])
            settings = {key: value}
            if misconfig:
                settings[ROGUE_PARAM] = "bypassed"
            setting = b.effect(last + rng.between(10 * MS, 200 * MS), _ep(mach, 0), EffectKind.MACHINE_SETTING,
                               Severity.INFO, settings)
            if misconfig:
                misconfig.cause_ids.append(accepted.id)
                misconfig.effect_ids.append(setting.id)


def _gen_plc(spec: ScenarioSpec, hosts: List[HostInfo], b: _Builder, injections: List[_Injection]) -> None:
    rng = b.rng
    ics = [i for i, h in enumerate(hosts) if h.role == "ics"]
    plcs = [i for i, h in enumerate(hosts) if h.role == "plc"]
    recipe = {r: rng.between(100, 4000) for r in REGISTERS}

    low = next((inj for inj in injections if inj.spec.kind is AnomalyKind.LOW_DEGREE_ICS), None)
    plan = []  # (ics host idx, plc host idx, register, fc)
    for j in range(spec.sessions):
        for k, p in enumerate(plcs):
            writer = ics[(k + j) % ICS_COUNT]
            plan.append([writer, p, REGISTERS[j % len(REGISTERS)], 6 if j % 2 == 0 else 16])
    low_plc = None
    if low is not None:
        mine = [row for row in plan if row[0] == low.spec.target]
        if not mine:
            raise InvalidSpec("LowDegreeIcs target issues no writes")
        low_plc = mine[0][1]
        for row in mine:
            row[1] = low_plc
        talks = defaultdict(set)
        for w, p, _, _ in plan:
            talks[w].add(p)
        others = [len(talks[i]) for i in ics if i != low.spec.target]
        # Median of three ICS degrees is the smaller of the two others.
        if min(others) <= 3:
            raise InvalidSpec("LowDegreeIcs is not observable: peer ICS reach 3 PLCs or fewer")

    slot = 0

    def write_sequence(writer: int, p: int, register: int, value: int, fc: int, with_cause: bool, inj=None):
        nonlocal slot
        T = BASE_TIME_US + slot * PLC_SLOT_US + rng.between(0, SECOND)
        slot += 1
        icsh, plch = hosts[writer], hosts[p]
        if with_cause:
            c = b.cause(T, _ep(icsh, 0), CauseKind.PARAMETERIZATION, _ep(plch, MODBUS_PORT), {str(register): str(value)})
            if inj:
                inj.cause_ids.append(c.id)
        client = _ep(icsh, rng.between(*EPHEMERAL))
        uid = 1
        tid = b.next_tid(icsh.host_id)
        reqs = [ModbusFrame(tid, uid, fc, register, (value,), False)]
        resps = [ModbusFrame(tid, uid, fc, register, (value,) if fc == 6 else (), True)]
        if rng.between(0, 1):
            tid = b.next_tid(icsh.host_id)
            reqs.append(ModbusFrame(tid, uid, 3, register, (), False))
            resps.append(ModbusFrame(tid, uid, 3, 0, (value,), True))
        seqs, last = b.exchange(T + rng.between(50 * MS, 500 * MS), client, _ep(plch, MODBUS_PORT),
                                [encode_modbus(f) for f in reqs], [encode_modbus(f) for f in resps])
        e = b.effect(last + rng.between(10 * MS, 200 * MS), _ep(plch, MODBUS_PORT), EffectKind.REGISTER_SETTING,
                     Severity.INFO, {"register": str(register), "value": str(value)})
        if inj:
            inj.packet_seqs.extend(seqs)
            inj.effect_ids.append(e.id)

    for writer, p, register, fc in plan:
        redirected = low is not None and writer == low.spec.target
        write_sequence(writer, p, register, recipe[register], fc, True, low if redirected else None)

    talks = defaultdict(set)
    for w, p, _, _ in plan:
        talks[p].add(w)
    low_target = low.spec.target if low is not None else None

    def source_for(p: int) -> int:
        known = sorted(talks[p])
        if known:
            return known[0]
        return next(i for i in ics if i != low_target)

    for inj in injections:
        p = inj.spec.target
        if inj.spec.kind is AnomalyKind.SPOOFED_WRITE:
            # replays the fleet value, so only the missing cause betrays it
            write_sequence(source_for(p), p, REGISTERS[0], recipe[REGISTERS[0]], 6, False, inj)
        elif inj.spec.kind is AnomalyKind.UNIQUE_SETTING:
            odd = recipe[REGISTERS[0]] + rng.between(1, 50)
            write_sequence(source_for(p), p, REGISTERS[0], odd, 6, True, inj)


def _manifest(spec, hosts, b: _Builder, injections: List[_Injection], index_of: Dict[int, int]) -> dict:
    degree: Dict[str, Set[str]] = defaultdict(set)
    for s, d in b.edges:
        if s != d:
            degree[s].add(d)
    expected = {r.value: 0 for r in RuleId}
    injected = []
    for inj in injections:
        rule = RULE_FOR_ANOMALY[inj.spec.kind]
        expected[rule.value] += 1
        injected.append(
            {
                "kind": inj.spec.kind.value,
                "target": inj.spec.target,
                "target_host": hosts[inj.spec.target].host_id,
                "rule": rule.value,
                "cause_ids": sorted(inj.cause_ids),
                "effect_ids": sorted(inj.effect_ids),
                "packet_indices": sorted(index_of[s] for s in inj.packet_seqs),
            }
        )
    return {
        "profile": spec.profile.value,
        "seed": spec.seed,
        "host_count": spec.host_count,
        "sessions": spec.sessions,
        "hosts": [{"host_id": h.host_id, "addr": h.address, "role": h.role} for h in hosts],
        "topology": {
            "nodes": sorted(b.nodes),
            "edges": sorted([s, d] for s, d in b.edges),
            "out_degree": {h: len(degree.get(h, ())) for h in sorted(b.nodes)},
        },
        "injected": injected,
        "expected_findings": expected,
        "counts": {"causes": len(b.causes), "effects": len(b.effects), "packets": len(b.frames)},
    }


def parse_injection(text: str, hosts: Sequence[HostInfo]) -> AnomalySpec:
    """``KIND@HOST`` where HOST is a host index or host id."""
    kind_s, sep, target_s = text.partition("@")
    if not sep:
        raise InvalidSpec(f"expected KIND@HOST, got {text!r}")
    try:
        kind = AnomalyKind(kind_s)
    except ValueError:
        raise InvalidSpec(f"unknown anomaly kind {kind_s!r}") from None
    if target_s.isdigit():
        return AnomalySpec(kind, int(target_s))
    for i, h in enumerate(hosts):
        if h.host_id == target_s:
            return AnomalySpec(kind, i)
    raise InvalidSpec(f"unknown host {target_s!r}")
