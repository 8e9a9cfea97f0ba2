"""JSON-lines ingestion for cause and effect records, and the address->host map."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

from .codec import record_from_dict
from .model import InvariantViolation, SourceRecord, validate_record

log = logging.getLogger(__name__)

_CAUSE_FIELDS = (
    "id", "ts_us", "origin_host", "origin_addr", "origin_port", "kind",
    "subject_host", "subject_addr", "subject_port", "payload",
)
_EFFECT_FIELDS = ("id", "ts_us", "host", "addr", "port", "kind", "severity", "payload")


@dataclass(frozen=True)
class ParseError:
    line_no: int
    reason: str
    source: str = ""

    def __str__(self) -> str:
        where = f"{self.source}:{self.line_no}" if self.source else f"line {self.line_no}"
        return f"{where}: {self.reason}"


def parse_record_line(line: Union[str, bytes]) -> SourceRecord:
    """Decode and validate one line.  Raises ValueError (incl. InvariantViolation)."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ValueError(f"invalid UTF-8: {exc.reason}") from None
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON: {exc.msg}") from None
    except RecursionError:
        raise ValueError("invalid JSON: nesting too deep") from None
    if not isinstance(doc, dict):
        raise ValueError("line is not a JSON object")
    kind = doc.get("type")
    if kind == "cause":
        required = _CAUSE_FIELDS
    elif kind == "effect":
        required = _EFFECT_FIELDS
    else:
        raise ValueError(f"unknown or missing type discriminator: {kind!r}")
    missing = [f for f in required if f not in doc]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    if not isinstance(doc["payload"], dict):
        raise InvariantViolation("payload", "must be an object")
    try:
        record = record_from_dict(doc)
    except ValueError as exc:
        # Enum lookups fail with ValueError on unknown kind/severity strings.
        raise ValueError(str(exc)) from None
    except (TypeError, KeyError) as exc:
        raise ValueError(f"malformed record: {exc}") from None
    return validate_record(record)


def parse_record_stream(
    lines: Iterable[Union[str, bytes]], source: str = ""
) -> Tuple[List[SourceRecord], List[ParseError]]:
    """Parse a JSON-lines stream.  Bad lines become ParseErrors; good lines keep their order."""
    records: List[SourceRecord] = []
    errors: List[ParseError] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_record_line(line))
        except ValueError as exc:
            errors.append(ParseError(line_no, str(exc), source))
    return records, errors


class HostMap:
    """Resolves IPv4 addresses to stable host ids.

    Addresses absent from the map resolve to the address string itself.
    """

    def __init__(self, mapping: Optional[Mapping[str, str]] = None):
        self._map: Dict[str, str] = dict(mapping or {})

    def resolve(self, address: str) -> str:
        return self._map.get(address, address)

    def as_dict(self) -> Dict[str, str]:
        return dict(self._map)

    @classmethod
    def from_lines(cls, lines: Iterable[Union[str, bytes]], source: str = "") -> Tuple["HostMap", List[ParseError]]:
        """Read ``{"addr": ..., "host_id": ...}`` lines."""
        mapping: Dict[str, str] = {}
        errors: List[ParseError] = []
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                addr, host = doc["addr"], doc["host_id"]
                if not isinstance(addr, str) or not isinstance(host, str) or not host:
                    raise ValueError("addr and host_id must be strings")
                if mapping.get(addr, host) != host:
                    raise ValueError(f"address {addr} mapped to two host ids")
                mapping[addr] = host
            except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
                errors.append(ParseError(line_no, f"bad host map line: {exc}", source))
        return cls(mapping), errors

    def __len__(self) -> int:
        return len(self._map)
