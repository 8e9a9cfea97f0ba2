"""Core data model.

Three columns (cause, traffic, effect) by three levels of abstraction.  Level-1
records are observations, Level-2 types aggregate one column per host or flow
key, Level-3 is the annotated topology graph.  All types are frozen after
construction.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, NewType, Optional, Tuple, Union

# Integer microseconds since the Unix epoch; the difference of two is a signed
# duration in microseconds.
Timestamp = NewType("Timestamp", int)


class InvariantViolation(ValueError):
    """A record failed one of its type invariants."""

    def __init__(self, field_name: str, reason: str = ""):
        super().__init__(f"{field_name}: {reason}" if reason else field_name)
        self.field = field_name
        self.reason = reason


class Column(enum.Enum):
    CAUSE = "Cause"
    TRAFFIC = "Traffic"
    EFFECT = "Effect"


class CauseKind(enum.Enum):
    CONFIG_ENTRY = "ConfigEntry"
    TICKET_ISSUED = "TicketIssued"
    TICKET_ACCEPTED = "TicketAccepted"
    PARAMETERIZATION = "Parameterization"


class EffectKind(enum.Enum):
    LOG_ENTRY = "LogEntry"
    SYSCALL_ENTRY = "SyscallEntry"
    REGISTER_SETTING = "RegisterSetting"
    MACHINE_SETTING = "MachineSetting"


class Severity(enum.Enum):
    INFO = "Info"
    WARNING = "Warning"
    ERROR = "Error"


class Transport(enum.Enum):
    TCP = "TCP"
    UDP = "UDP"


class FunctionCode(enum.IntEnum):
    READ_HOLDING_REGISTERS = 3
    WRITE_SINGLE_REGISTER = 6
    WRITE_MULTIPLE_REGISTERS = 16


WRITE_FUNCTIONS = frozenset({FunctionCode.WRITE_SINGLE_REGISTER, FunctionCode.WRITE_MULTIPLE_REGISTERS})
TICKET_KINDS = frozenset({CauseKind.TICKET_ISSUED, CauseKind.TICKET_ACCEPTED})
SETTING_CAUSE_KINDS = frozenset({CauseKind.CONFIG_ENTRY, CauseKind.PARAMETERIZATION})
SETTING_EFFECT_KINDS = frozenset({EffectKind.REGISTER_SETTING, EffectKind.MACHINE_SETTING})


class Completeness(enum.Enum):
    FULL = "Full"
    MISSING_CAUSE = "MissingCause"
    MISSING_EFFECT = "MissingEffect"
    TRAFFIC_ONLY = "TrafficOnly"

    @classmethod
    def of(cls, has_cause: bool, has_effect: bool) -> "Completeness":
        if has_cause and has_effect:
            return cls.FULL
        if has_effect:
            return cls.MISSING_CAUSE
        if has_cause:
            return cls.MISSING_EFFECT
        return cls.TRAFFIC_ONLY


class Role(enum.Enum):
    CAUSE = "Cause"
    EFFECT = "Effect"
    BOTH = "Both"
    TRAFFIC_ONLY = "TrafficOnly"


class RuleId(enum.Enum):
    R1 = "R1_TicketWithoutError"
    R2 = "R2_SettingDrift"
    R3 = "R3_ParameterizationWithoutCause"
    R4 = "R4_DegreeOutlier"
    R5 = "R5_ErrorRateOutlier"
    R6 = "R6_RareSetting"


class FindingSeverity(enum.Enum):
    NOTICE = "Notice"
    SUSPICIOUS = "Suspicious"
    ALERT = "Alert"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {FindingSeverity.NOTICE: 0, FindingSeverity.SUSPICIOUS: 1, FindingSeverity.ALERT: 2}


@dataclass(frozen=True, order=True)
class Endpoint:
    host_id: str
    address: str
    port: int


@dataclass(frozen=True)
class ModbusFrame:
    transaction_id: int
    unit_id: int
    function_code: int
    register_address: int
    values: Tuple[int, ...] = ()
    is_response: bool = False

    @property
    def is_write_request(self) -> bool:
        return not self.is_response and self.function_code in WRITE_FUNCTIONS


@dataclass(frozen=True)
class CauseRecord:
    id: str
    timestamp: Timestamp
    origin: Endpoint
    kind: CauseKind
    subject: Endpoint
    payload: Mapping[str, str] = field(default_factory=dict)

    column = Column.CAUSE


@dataclass(frozen=True)
class PacketRecord:
    id: str
    timestamp: Timestamp
    src: Endpoint
    dst: Endpoint
    transport: Transport
    length_bytes: int
    modbus: Optional[ModbusFrame] = None

    column = Column.TRAFFIC

    @property
    def key(self) -> Tuple[Endpoint, Endpoint, Transport]:
        return (self.src, self.dst, self.transport)


@dataclass(frozen=True)
class EffectRecord:
    id: str
    timestamp: Timestamp
    host: Endpoint
    kind: EffectKind
    severity: Severity
    payload: Mapping[str, str] = field(default_factory=dict)

    column = Column.EFFECT

    def setting_update(self) -> Dict[str, str]:
        """Keys this record writes into the host's setting snapshot.

        A RegisterSetting names one register as ``{"register": r, "value": v}``
        and contributes ``{r: v}``; a MachineSetting contributes its payload.
        """
        if self.kind is EffectKind.REGISTER_SETTING:
            return {self.payload["register"]: self.payload["value"]}
        if self.kind is EffectKind.MACHINE_SETTING:
            return dict(self.payload)
        return {}


SourceRecord = Union[CauseRecord, PacketRecord, EffectRecord]


@dataclass(frozen=True)
class TriadEvent:
    id: str
    cause: Optional[CauseRecord]
    traffic: Tuple[PacketRecord, ...]
    effect: Optional[EffectRecord]
    window_start: Timestamp
    window_end: Timestamp
    completeness: Completeness

    @property
    def burst_start(self) -> int:
        return min(p.timestamp for p in self.traffic)

    @property
    def destination(self) -> Endpoint:
        return self.traffic[0].dst

    def members(self) -> Tuple[SourceRecord, ...]:
        out: Tuple[SourceRecord, ...] = ()
        if self.cause is not None:
            out += (self.cause,)
        out += self.traffic
        if self.effect is not None:
            out += (self.effect,)
        return out


@dataclass(frozen=True)
class Flow:
    id: str
    src: Endpoint
    dst: Endpoint
    transport: Transport
    first_seen: Timestamp
    last_seen: Timestamp
    packet_count: int
    byte_count: int
    modbus_functions: Mapping[int, int]
    member_ids: Tuple[str, ...]

    @property
    def key(self) -> Tuple[Endpoint, Endpoint, Transport]:
        return (self.src, self.dst, self.transport)

    @property
    def duration_us(self) -> int:
        return self.last_seen - self.first_seen


@dataclass(frozen=True)
class CauseTrace:
    subject: Endpoint
    entries: Tuple[CauseRecord, ...]
    ticket_count: int
    last_settings: Mapping[str, str]


@dataclass(frozen=True)
class EffectTrace:
    host: Endpoint
    entries: Tuple[EffectRecord, ...]
    error_count: int
    warning_count: int
    setting_history: Tuple[Tuple[Timestamp, Mapping[str, str]], ...]


@dataclass(frozen=True)
class CauseDatabase:
    """Level-3 cause store: every host's CauseTrace, keyed by subject host_id."""

    traces: Mapping[str, CauseTrace]

    def __iter__(self):
        return iter(self.traces[k] for k in sorted(self.traces))

    def __len__(self) -> int:
        return len(self.traces)


@dataclass(frozen=True)
class EffectCollection:
    """Level-3 effect store: every host's EffectTrace, keyed by host_id."""

    traces: Mapping[str, EffectTrace]

    def __iter__(self):
        return iter(self.traces[k] for k in sorted(self.traces))

    def __len__(self) -> int:
        return len(self.traces)


@dataclass(frozen=True)
class NodeSummary:
    host_id: str
    roles: FrozenSet[Role]
    cause_summary: Mapping[str, int]
    effect_summary: Mapping[str, int]

    def has_role(self, role: Role) -> bool:
        if role in self.roles:
            return True
        return Role.BOTH in self.roles and role in (Role.CAUSE, Role.EFFECT)


@dataclass(frozen=True)
class EdgeSummary:
    flow_count: int
    packet_count: int
    byte_count: int
    first_seen: Timestamp
    last_seen: Timestamp
    flow_ids: Tuple[str, ...] = ()


@dataclass(frozen=True)
class TopologyGraph:
    nodes: Mapping[str, NodeSummary]
    edges: Mapping[Tuple[str, str], EdgeSummary]
    dangling: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Finding:
    rule_id: RuleId
    severity: FindingSeverity
    subject: str
    evidence: Tuple[str, ...]
    message: str

    def sort_key(self):
        return (-self.severity.rank, self.rule_id.value, self.subject, self.evidence)


# Where each cell of the cause/traffic/effect x level grid lives.
AGGREGATION_MODEL: Mapping[Tuple[int, Column], type] = {
    (1, Column.CAUSE): CauseRecord,
    (1, Column.TRAFFIC): PacketRecord,
    (1, Column.EFFECT): EffectRecord,
    (2, Column.CAUSE): CauseTrace,
    (2, Column.TRAFFIC): Flow,
    (2, Column.EFFECT): EffectTrace,
    (3, Column.CAUSE): CauseDatabase,
    (3, Column.TRAFFIC): TopologyGraph,
    (3, Column.EFFECT): EffectCollection,
}


def _check_endpoint(name: str, ep: Endpoint) -> None:
    if not isinstance(ep.host_id, str) or not ep.host_id:
        raise InvariantViolation(name, "host_id must be a non-empty string")
    try:
        ipaddress.IPv4Address(ep.address)
    except (ipaddress.AddressValueError, TypeError, ValueError):
        raise InvariantViolation(name, f"not an IPv4 address: {ep.address!r}") from None
    if isinstance(ep.port, bool) or not isinstance(ep.port, int) or not 0 <= ep.port <= 0xFFFF:
        raise InvariantViolation(name, f"port out of range: {ep.port!r}")


def _check_common(r: SourceRecord) -> None:
    if not isinstance(r.id, str) or not r.id:
        raise InvariantViolation("id", "must be a non-empty string")
    if isinstance(r.timestamp, bool) or not isinstance(r.timestamp, int) or r.timestamp < 0:
        raise InvariantViolation("timestamp", "must be a non-negative integer of microseconds")


def _check_payload(payload: Mapping[str, str]) -> None:
    for k, v in payload.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise InvariantViolation("payload", "keys and values must be strings")


def validate_modbus(frame: ModbusFrame) -> None:
    if not 0 <= frame.transaction_id <= 0xFFFF:
        raise InvariantViolation("transaction_id", "out of range")
    if not 0 <= frame.unit_id <= 0xFF:
        raise InvariantViolation("unit_id", "out of range")
    if not 0 <= frame.register_address <= 0xFFFF:
        raise InvariantViolation("register_address", "out of range")
    if any(not 0 <= v <= 0xFFFF for v in frame.values):
        raise InvariantViolation("values", "register values are 16-bit unsigned")
    if frame.function_code == FunctionCode.WRITE_SINGLE_REGISTER and len(frame.values) != 1:
        raise InvariantViolation("values", "WriteSingleRegister carries exactly one value")
    if (
        frame.function_code == FunctionCode.WRITE_MULTIPLE_REGISTERS
        and not frame.is_response
        and not 1 <= len(frame.values) <= 123
    ):
        raise InvariantViolation("values", "WriteMultipleRegisters carries 1..123 values")


def validate_record(r: SourceRecord) -> SourceRecord:
    """Return ``r`` unchanged if every type invariant holds, else raise InvariantViolation."""
    _check_common(r)
    if isinstance(r, PacketRecord):
        _check_endpoint("src", r.src)
        _check_endpoint("dst", r.dst)
        if (r.src.address, r.src.port) == (r.dst.address, r.dst.port):
            raise InvariantViolation("dst", "src and dst are the same endpoint")
        if not isinstance(r.transport, Transport):
            raise InvariantViolation("transport", "must be TCP or UDP")
        if isinstance(r.length_bytes, bool) or not isinstance(r.length_bytes, int) or r.length_bytes < 1:
            raise InvariantViolation("length_bytes", "must be >= 1")
        if r.modbus is not None:
            validate_modbus(r.modbus)
    elif isinstance(r, CauseRecord):
        _check_endpoint("origin", r.origin)
        _check_endpoint("subject", r.subject)
        if not isinstance(r.kind, CauseKind):
            raise InvariantViolation("kind", "unknown cause kind")
        _check_payload(r.payload)
        if r.kind in SETTING_CAUSE_KINDS and not r.payload:
            raise InvariantViolation("payload", f"{r.kind.value} requires a non-empty payload")
    elif isinstance(r, EffectRecord):
        _check_endpoint("host", r.host)
        if not isinstance(r.kind, EffectKind):
            raise InvariantViolation("kind", "unknown effect kind")
        if not isinstance(r.severity, Severity):
            raise InvariantViolation("severity", "unknown severity")
        _check_payload(r.payload)
        if r.kind is EffectKind.REGISTER_SETTING and not {"register", "value"} <= set(r.payload):
            raise InvariantViolation("payload", "RegisterSetting requires 'register' and 'value'")
    else:
        raise InvariantViolation("type", f"not a source record: {type(r).__name__}")
    return r
