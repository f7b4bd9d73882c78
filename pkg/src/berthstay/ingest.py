"""Terminal log ingestion.

Parses terminal CSV event logs into standardized records, resolving the
free-text event and cargo nomenclature each terminal uses, then groups
records into portcalls and produces the per-terminal data statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

from .core import (
    G1_GRADES,
    G2_GRADES,
    BerthstayError,
    CargoGroup,
    CargoRef,
    ConfigurationError,
    EventTag,
    OperationMode,
    Portcall,
    ShipmentType,
    StandardEvent,
    StandardRecord,
    VesselInfo,
    _squash,
    grade_group,
)

CSV_HEADER = [
    "portcall_id",
    "terminal",
    "vessel_name",
    "imo",
    "mmsi",
    "event",
    "timestamp",
    "cargo",
    "size_mt",
    "shipment_type",
    "arm_id",
]

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"

_EVENT_BY_KEY = {_squash(e.label): e for e in StandardEvent}
_SHIPMENT_BY_KEY = {_squash(s.value): s for s in ShipmentType}
_GRADE_LOOKUP = {_squash(name): name for name in (*G1_GRADES, *G2_GRADES)}


class IngestFormatError(BerthstayError):
    """The stream is not a recognizable event log (e.g. missing header)."""


class UnknownEventError(BerthstayError):
    """An event label that neither the standard names nor the alias map cover."""

    def __init__(self, label: str, suggestions: list[str]):
        hint = ", ".join(suggestions) if suggestions else "none"
        super().__init__(f"unknown event {label!r}; closest known labels: {hint}")
        self.label = label
        self.suggestions = suggestions


@dataclass(frozen=True)
class AliasMap:
    """Free-text label -> canonical target, keyed case/whitespace-insensitively."""

    event_aliases: dict[str, StandardEvent] = field(default_factory=dict)
    cargo_aliases: dict[str, str] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        event_aliases: Optional[dict[str, str]] = None,
        cargo_aliases: Optional[dict[str, str]] = None,
    ) -> "AliasMap":
        events: dict[str, StandardEvent] = {}
        for alias, target in (event_aliases or {}).items():
            event = _EVENT_BY_KEY.get(_squash(target))
            if event is None:
                raise ConfigurationError(f"alias target {target!r} is not a standard event")
            events[_squash(alias)] = event
        cargoes: dict[str, str] = {}
        for alias, target in (cargo_aliases or {}).items():
            if grade_group(target) is CargoGroup.OTHER:
                raise ConfigurationError(f"alias target {target!r} is not a focused cargo grade")
            cargoes[_squash(alias)] = target
        return cls(event_aliases=events, cargo_aliases=cargoes)


def load_alias_csv(path: Union[str, Path]) -> dict[str, str]:
    """Read a two-column ``alias,canonical`` CSV into a plain mapping."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["alias", "canonical"]:
            raise IngestFormatError(f"alias file {path} must start with header 'alias,canonical'")
        for row in reader:
            if len(row) < 2 or not row[0].strip():
                continue
            out[row[0].strip()] = row[1].strip()
    return out


def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def standardize_event(label: str, aliases: Optional[AliasMap] = None) -> StandardEvent:
    """Resolve a free-text event label; exact standard names need no alias.

    Unmapped labels raise UnknownEventError carrying the three closest
    known labels by edit distance.
    """
    if not label or not label.strip():
        raise ValueError("event label must be non-empty")
    key = _squash(label)
    event = _EVENT_BY_KEY.get(key)
    if event is not None:
        return event
    if aliases is not None:
        event = aliases.event_aliases.get(key)
        if event is not None:
            return event
    known = [e.label for e in StandardEvent]
    ranked = sorted(known, key=lambda name: (_levenshtein(key, _squash(name)), name))
    raise UnknownEventError(label, ranked[:3])


def standardize_cargo(label: str, aliases: Optional[AliasMap] = None) -> CargoRef:
    """Resolve a cargo label to a canonical grade plus group.

    Built-in normalization covers the common manual-entry slips for the
    focused grades: a bare number gains its trailing N ("150" -> "150N")
    and a leading N moves to the back ("N150" -> "150N"), whenever the
    result is a known grade.  Anything unresolvable maps to group Other
    with the trimmed label kept as-is; that is out of the focused set,
    not an error.
    """
    if not label or not label.strip():
        raise ValueError("cargo label must be non-empty")
    trimmed = label.strip()
    key = _squash(trimmed)
    hit = _GRADE_LOOKUP.get(key)
    if hit is not None:
        return CargoRef.of(hit)
    if aliases is not None:
        target = aliases.cargo_aliases.get(key)
        if target is not None:
            return CargoRef.of(target)
    if key.isdigit():
        candidate = _GRADE_LOOKUP.get(key + "n")
        if candidate is not None:
            return CargoRef.of(candidate)
    if key.startswith("n") and key[1:].isdigit():
        candidate = _GRADE_LOOKUP.get(key[1:] + "n")
        if candidate is not None:
            return CargoRef.of(candidate)
    return CargoRef(trimmed, CargoGroup.OTHER)


@dataclass
class IngestReport:
    """Row-level accounting; accepted + rejected equals the input row count."""

    accepted: int = 0
    rejected: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, line_no: int, reason: str) -> None:
        self.rejected += 1
        self.rejections.append((line_no, reason))

    def to_json_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "rejections": [{"line": n, "reason": r} for n, r in self.rejections],
        }


def _parse_row(row: dict[str, str], aliases: Optional[AliasMap]) -> StandardRecord:
    portcall_id = row["portcall_id"].strip()
    terminal = row["terminal"].strip()
    if not portcall_id:
        raise ValueError("missing portcall_id")
    if not terminal:
        raise ValueError("missing terminal")

    event = standardize_event(row["event"], aliases)

    try:
        timestamp = datetime.strptime(row["timestamp"].strip(), TIMESTAMP_FORMAT)
    except ValueError:
        raise ValueError("invalid calendar date")

    shipment = _SHIPMENT_BY_KEY.get(_squash(row["shipment_type"]))
    if shipment is None:
        raise ValueError(f"unknown shipment type {row['shipment_type']!r}")

    cargo: Optional[CargoRef] = None
    size_mt: Optional[float] = None
    if event.tag is EventTag.CARGO:
        if not row["cargo"].strip():
            raise ValueError("cargo event missing cargo name")
        if not row["size_mt"].strip():
            raise ValueError("cargo event missing size")
        cargo = standardize_cargo(row["cargo"], aliases)
        try:
            size_mt = float(row["size_mt"])
        except ValueError:
            raise ValueError(f"invalid size_mt {row['size_mt']!r}")
        if size_mt < 0:
            raise ValueError("size_mt must be non-negative")

    arm_id: Optional[int] = None
    if row["arm_id"].strip():
        try:
            arm_id = int(row["arm_id"])
        except ValueError:
            raise ValueError(f"invalid arm_id {row['arm_id']!r}")

    vessel: Optional[VesselInfo] = None
    name = row["vessel_name"].strip() or None
    imo = row["imo"].strip() or None
    mmsi = row["mmsi"].strip() or None
    if name or imo or mmsi:
        try:
            vessel = VesselInfo(
                name=name,
                imo=int(imo) if imo else None,
                mmsi=int(mmsi) if mmsi else None,
            )
        except ValueError:
            raise ValueError("invalid vessel identifiers")

    return StandardRecord(
        portcall_id=portcall_id,
        terminal=terminal,
        event=event,
        timestamp=timestamp,
        shipment=shipment,
        cargo=cargo,
        size_mt=size_mt,
        arm_id=arm_id,
        vessel=vessel,
    )


def parse_log(
    stream: Union[TextIO, str, Path],
    aliases: Optional[AliasMap] = None,
) -> tuple[list[StandardRecord], IngestReport]:
    """Parse an event-log CSV stream into standardized records.

    Malformed rows never abort the parse or vanish silently; each shows up
    in the report with its line number and reason.  A missing or wrong
    header is fatal.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, newline="", encoding="utf-8") as fh:
            return parse_log(fh, aliases)

    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CSV_HEADER:
        raise IngestFormatError(
            f"expected header {','.join(CSV_HEADER)!r}, got {header!r}"
        )

    records: list[StandardRecord] = []
    report = IngestReport()
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            report.reject(line_no, f"expected {len(CSV_HEADER)} columns, got {len(row)}")
            continue
        named = dict(zip(CSV_HEADER, row))
        try:
            records.append(_parse_row(named, aliases))
            report.accepted += 1
        except (ValueError, UnknownEventError) as exc:
            report.reject(line_no, str(exc))
    return records, report


def _format_float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_log(portcalls: Sequence[Portcall], stream: Union[TextIO, str, Path]) -> None:
    """Serialize portcalls back to the ingest CSV format (round-trippable)."""
    if isinstance(stream, (str, Path)):
        with open(stream, "w", newline="", encoding="utf-8") as fh:
            write_log(portcalls, fh)
            return
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for pc in portcalls:
        for r in pc.records:
            vessel = r.vessel or VesselInfo()
            writer.writerow(
                [
                    r.portcall_id,
                    r.terminal,
                    vessel.name or "",
                    "" if vessel.imo is None else str(vessel.imo),
                    "" if vessel.mmsi is None else str(vessel.mmsi),
                    r.event.label,
                    r.timestamp.strftime(TIMESTAMP_FORMAT),
                    r.cargo.canonical_name if r.cargo else "",
                    _format_float(r.size_mt),
                    r.shipment.value,
                    "" if r.arm_id is None else str(r.arm_id),
                ]
            )


def assemble_portcalls(records: Iterable[StandardRecord]) -> list[Portcall]:
    """Group records by portcall id, in first-appearance order.

    Groups without a commence-operation event come back flagged
    incomplete; they stay available for statistics but are excluded from
    model fitting.
    """
    groups: dict[str, list[StandardRecord]] = {}
    for record in records:
        groups.setdefault(record.portcall_id, []).append(record)
    return [Portcall.from_records(recs) for recs in groups.values()]


@dataclass(frozen=True)
class FocusSplit:
    total: int = 0
    focused: int = 0
    other: int = 0


@dataclass(frozen=True)
class ModeSplit:
    total: int = 0
    single: int = 0
    multiple: int = 0
    sequential: int = 0
    concurrent: int = 0

    def add(self, mode: OperationMode, count: int = 1) -> "ModeSplit":
        return ModeSplit(
            total=self.total + count,
            single=self.single + (count if mode is OperationMode.SINGLE else 0),
            multiple=self.multiple + (count if mode.is_multiple else 0),
            sequential=self.sequential + (count if mode is OperationMode.SEQUENTIAL else 0),
            concurrent=self.concurrent + (count if mode is OperationMode.CONCURRENT else 0),
        )

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "single": self.single,
            "multiple": self.multiple,
            "sequential": self.sequential,
            "concurrent": self.concurrent,
        }


@dataclass
class TerminalStatistics:
    """Per-terminal counts in the detailed-data-statistics layout."""

    terminal: str
    period_start: Optional[str]
    period_end: Optional[str]
    portcalls: int
    pc_loading: int
    pc_discharging: int
    pc_loading_focused: ModeSplit
    pc_discharging_focused: ModeSplit
    operations: int
    ops_loading: FocusSplit
    ops_discharging: FocusSplit
    ops_loading_g1: ModeSplit
    ops_loading_g2: ModeSplit
    ops_discharging_g1: ModeSplit
    ops_discharging_g2: ModeSplit

    def to_json_dict(self) -> dict:
        return {
            "terminal": self.terminal,
            "period": {"start": self.period_start, "end": self.period_end},
            "portcalls": {
                "total": self.portcalls,
                "loading_all": self.pc_loading,
                "discharging_all": self.pc_discharging,
                "loading_focused": self.pc_loading_focused.to_json_dict(),
                "discharging_focused": self.pc_discharging_focused.to_json_dict(),
            },
            "operations": {
                "total": self.operations,
                "loading_all": self.ops_loading.__dict__,
                "discharging_all": self.ops_discharging.__dict__,
                "loading_g1": self.ops_loading_g1.to_json_dict(),
                "loading_g2": self.ops_loading_g2.to_json_dict(),
                "discharging_g1": self.ops_discharging_g1.to_json_dict(),
                "discharging_g2": self.ops_discharging_g2.to_json_dict(),
            },
        }


def data_statistics(portcalls: Sequence[Portcall]) -> list[TerminalStatistics]:
    """Portcall and operation counts per terminal, split by shipment type,
    cargo group and single/multiple (sequential/concurrent) mode."""
    by_terminal: dict[str, list[Portcall]] = {}
    for pc in portcalls:
        by_terminal.setdefault(pc.terminal, []).append(pc)

    out: list[TerminalStatistics] = []
    for terminal in sorted(by_terminal):
        group = by_terminal[terminal]
        timestamps = [r.timestamp for pc in group for r in pc.records]
        pc_loading = pc_discharging = 0
        pc_l_focused = ModeSplit()
        pc_d_focused = ModeSplit()
        operations = 0
        ops_loading = [0, 0, 0]
        ops_discharging = [0, 0, 0]
        mode_splits: dict[tuple[ShipmentType, CargoGroup], ModeSplit] = {
            (s, g): ModeSplit()
            for s in ShipmentType
            for g in (CargoGroup.G1, CargoGroup.G2)
        }

        for pc in group:
            shipment = pc.shipment
            intervals = pc.intervals()
            operations += len(intervals)
            focused = [iv for iv in intervals if iv.cargo.group is not CargoGroup.OTHER]
            if shipment is ShipmentType.LOADING:
                pc_loading += 1
                if focused:
                    pc_l_focused = pc_l_focused.add(pc.operation_mode)
            else:
                pc_discharging += 1
                if focused:
                    pc_d_focused = pc_d_focused.add(pc.operation_mode)
            tallies = ops_loading if shipment is ShipmentType.LOADING else ops_discharging
            tallies[0] += len(intervals)
            tallies[1] += len(focused)
            tallies[2] += len(intervals) - len(focused)
            for iv in focused:
                key = (shipment, iv.cargo.group)
                mode_splits[key] = mode_splits[key].add(pc.operation_mode)

        out.append(
            TerminalStatistics(
                terminal=terminal,
                period_start=min(timestamps).strftime("%Y-%m-%d") if timestamps else None,
                period_end=max(timestamps).strftime("%Y-%m-%d") if timestamps else None,
                portcalls=len(group),
                pc_loading=pc_loading,
                pc_discharging=pc_discharging,
                pc_loading_focused=pc_l_focused,
                pc_discharging_focused=pc_d_focused,
                operations=operations,
                ops_loading=FocusSplit(*ops_loading),
                ops_discharging=FocusSplit(*ops_discharging),
                ops_loading_g1=mode_splits[(ShipmentType.LOADING, CargoGroup.G1)],
                ops_loading_g2=mode_splits[(ShipmentType.LOADING, CargoGroup.G2)],
                ops_discharging_g1=mode_splits[(ShipmentType.DISCHARGING, CargoGroup.G1)],
                ops_discharging_g2=mode_splits[(ShipmentType.DISCHARGING, CargoGroup.G2)],
            )
        )
    return out
