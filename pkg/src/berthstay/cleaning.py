"""Detection and repair of recording errors in assembled portcalls.

Three error classes are handled: cargo-information errors (typo'd grade
names), port-event errors (a record labelled with a neighbouring event so
one chain event is duplicated and another missing), and port-timing
errors (month/day-swapped timestamps and other out-of-place times).
Repairs are applied only when the whole chain stays consistent; portcalls
that cannot be fully repaired are discarded with their violations, never
silently dropped or half-fixed.
"""

from __future__ import annotations

import csv
import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, TextIO, Union

from .core import (
    BerthstayError,
    CargoGroup,
    Portcall,
    ShipmentType,
    StandardEvent,
    StandardRecord,
    chain_slot,
)
from .ingest import TIMESTAMP_FORMAT, standardize_cargo


class ViolationClass(Enum):
    CARGO_INFO = "CargoInfo"
    PORT_EVENT = "PortEvent"
    PORT_TIMING = "PortTiming"


@dataclass(frozen=True)
class Violation:
    """One finding; record_index -1 marks a portcall-level finding."""

    portcall_id: str
    record_index: int
    violation_class: ViolationClass
    description: str
    repairable: bool


@dataclass(frozen=True)
class AppliedRepair:
    portcall_id: str
    record_index: int
    violation_class: ViolationClass
    action: str
    before: str
    after: str


@dataclass(frozen=True)
class CleaningPolicy:
    max_discard_fraction: float = 1.0
    neighbor_jump_days: float = 30.0


@dataclass
class CleaningOutcome:
    cleaned: list[Portcall] = field(default_factory=list)
    discarded: list[tuple[Portcall, list[Violation]]] = field(default_factory=list)
    audit: list[AppliedRepair] = field(default_factory=list)


class DiscardBudgetExceeded(BerthstayError):
    def __init__(self, discarded: int, total: int, budget: float):
        super().__init__(
            f"discarded {discarded}/{total} portcalls, above the allowed fraction {budget}"
        )
        self.discarded = discarded
        self.total = total
        self.budget = budget


_OP_EVENTS = (StandardEvent.COMMENCE_OPERATION, StandardEvent.COMPLETE_OPERATION)

#: Commence -> Complete pairs that appear at most once per portcall.
_PAIRED_KINDS = {
    StandardEvent.COMMENCE_SAMPLING: StandardEvent.SAMPLE_PASS,
    StandardEvent.COMMENCE_SAFETY_MEETING: StandardEvent.COMPLETE_SAFETY_MEETING,
    StandardEvent.COMMENCE_TANK_INSPECTION: StandardEvent.COMPLETE_TANK_INSPECTION,
    StandardEvent.COMMENCE_ULLAGE_BEFORE_OPERATION: StandardEvent.COMPLETE_ULLAGE_BEFORE_OPERATION,
    StandardEvent.COMMENCE_SHIFTING: StandardEvent.COMPLETE_SHIFTING,
    StandardEvent.COMMENCE_PREWASH: StandardEvent.COMPLETE_PREWASH,
    StandardEvent.COMMENCE_STRIPPING_TO_SHORE: StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
}

_PREWASH_KINDS = {
    StandardEvent.MARPOL_PREWASH_ARM_CONNECTED,
    StandardEvent.COMMENCE_PREWASH,
    StandardEvent.COMPLETE_PREWASH,
    StandardEvent.COMMENCE_STRIPPING_TO_SHORE,
    StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
    StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED,
}

#: Events occurring mid-span of a wider group; excluded from the strict
#: slot-order sweep and checked against their group bounds instead.
_SPAN_EVENTS = set(_OP_EVENTS) | {
    StandardEvent.COMMENCE_PREWASH,
    StandardEvent.COMPLETE_PREWASH,
    StandardEvent.COMMENCE_STRIPPING_TO_SHORE,
    StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
}


def _op_key(record: StandardRecord):
    return record.arm_id if record.arm_id is not None else record.cargo.canonical_name


def _median_ts(records: Sequence[StandardRecord]) -> datetime:
    ordered = sorted(r.timestamp for r in records)
    return ordered[len(ordered) // 2]


@dataclass
class _Structure:
    """Chain bookkeeping shared by validation and the relabel repair."""

    missing: list[tuple[StandardEvent, Optional[object]]] = field(default_factory=list)
    duplicate_indices: list[int] = field(default_factory=list)
    findings: list[tuple[int, str]] = field(default_factory=list)  # (index, description)


def _analyze_structure(pc: Portcall) -> _Structure:
    st = _Structure()
    counts = Counter(r.event for r in pc.records)

    if counts[StandardEvent.ALL_FAST] == 0:
        st.missing.append((StandardEvent.ALL_FAST, None))
        st.findings.append((-1, "mooring-start event absent"))

    for kind, cnt in counts.items():
        if kind in _OP_EVENTS or cnt < 2:
            continue
        indices = [i for i, r in enumerate(pc.records) if r.event is kind]
        st.duplicate_indices.extend(indices)
        st.findings.append((indices[1], f"event {kind.label!r} recorded {cnt} times"))

    for commence, complete in _PAIRED_KINDS.items():
        if counts[commence] and not counts[complete]:
            idx = next(i for i, r in enumerate(pc.records) if r.event is commence)
            st.missing.append((complete, None))
            st.findings.append((idx, f"commence {commence.label!r} without its complete"))
        elif counts[complete] and not counts[commence]:
            idx = next(i for i, r in enumerate(pc.records) if r.event is complete)
            st.missing.append((commence, None))
            st.findings.append((idx, f"complete {complete.label!r} without its commence"))

    per_key: dict[object, dict[StandardEvent, list[int]]] = {}
    for i, r in enumerate(pc.records):
        if r.event in _OP_EVENTS:
            per_key.setdefault(_op_key(r), {}).setdefault(r.event, []).append(i)
    for key in sorted(per_key, key=str):
        sides = per_key[key]
        n_c = len(sides.get(StandardEvent.COMMENCE_OPERATION, []))
        n_x = len(sides.get(StandardEvent.COMPLETE_OPERATION, []))
        for kind, indices in sides.items():
            if len(indices) > 1:
                st.duplicate_indices.extend(indices)
                st.findings.append(
                    (indices[1], f"operation {kind.label!r} duplicated for cargo {key!r}")
                )
        if n_c > n_x:
            st.missing.append((StandardEvent.COMPLETE_OPERATION, key))
            idx = sides[StandardEvent.COMMENCE_OPERATION][-1]
            st.findings.append((idx, f"operation for cargo {key!r} never completes"))
        elif n_x > n_c:
            st.missing.append((StandardEvent.COMMENCE_OPERATION, key))
            idx = sides[StandardEvent.COMPLETE_OPERATION][0]
            st.findings.append((idx, f"operation for cargo {key!r} never commences"))

    # A discharging stay with any prewash activity must also show the cargo
    # arm coming off first and the prewash arm going on and off; minimal
    # four-event logs never trip this because they carry no prewash events.
    if pc.shipment is ShipmentType.DISCHARGING and any(counts[k] for k in _PREWASH_KINDS):
        for required in (
            StandardEvent.CARGO_ARM_DISCONNECTED,
            StandardEvent.MARPOL_PREWASH_ARM_CONNECTED,
            StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED,
        ):
            if counts[required] == 0:
                st.missing.append((required, None))
                st.findings.append((-1, f"expected event absent: {required.label!r}"))
    return st


def _matched_pairs(pc: Portcall) -> list[tuple[int, int]]:
    """(commence_index, complete_index) for every unambiguous 1:1 pair."""
    counts = Counter(r.event for r in pc.records)
    pairs: list[tuple[int, int]] = []
    for commence, complete in _PAIRED_KINDS.items():
        if counts[commence] == 1 and counts[complete] == 1:
            i = next(i for i, r in enumerate(pc.records) if r.event is commence)
            j = next(j for j, r in enumerate(pc.records) if r.event is complete)
            pairs.append((i, j))
    per_key: dict[object, dict[StandardEvent, list[int]]] = {}
    for i, r in enumerate(pc.records):
        if r.event in _OP_EVENTS:
            per_key.setdefault(_op_key(r), {}).setdefault(r.event, []).append(i)
    for key in sorted(per_key, key=str):
        sides = per_key[key]
        c = sides.get(StandardEvent.COMMENCE_OPERATION, [])
        x = sides.get(StandardEvent.COMPLETE_OPERATION, [])
        if len(c) == 1 and len(x) == 1:
            pairs.append((c[0], x[0]))
    return pairs


def _timing_findings(pc: Portcall, jump: timedelta) -> list[tuple[int, str]]:
    records = pc.records
    median = _median_ts(records)
    findings: list[tuple[int, str]] = []

    def farther(i: int, j: int) -> int:
        di = abs(records[i].timestamp - median)
        dj = abs(records[j].timestamp - median)
        return i if di >= dj else j

    for i, j in _matched_pairs(pc):
        if records[i].timestamp > records[j].timestamp:
            k = farther(i, j)
            findings.append(
                (k, f"{records[i].event.label!r} recorded after {records[j].event.label!r}")
            )

    # Strict chain-order sweep over the events that occur exactly once.
    counts = Counter(r.event for r in records)
    chain = sorted(
        (
            (i, r)
            for i, r in enumerate(records)
            if r.event not in _SPAN_EVENTS and counts[r.event] == 1
        ),
        key=lambda item: chain_slot(item[1].event),
    )
    for (i, a), (j, b) in zip(chain, chain[1:]):
        if a.timestamp > b.timestamp:
            k = farther(i, j)
            findings.append(
                (k, f"{records[k].event.label!r} out of chain order")
            )

    # Span events must sit inside the window their neighbours define.
    op_lower = max(
        (r.timestamp for _, r in chain if chain_slot(r.event) < chain_slot(_OP_EVENTS[0])),
        default=None,
    )
    op_upper = min(
        (r.timestamp for _, r in chain if chain_slot(r.event) > chain_slot(_OP_EVENTS[1])),
        default=None,
    )
    mpac = pc.timestamps_of(StandardEvent.MARPOL_PREWASH_ARM_CONNECTED)
    mpad = pc.timestamps_of(StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED)
    for i, r in enumerate(records):
        if r.event in _OP_EVENTS:
            if (op_lower is not None and r.timestamp < op_lower) or (
                op_upper is not None and r.timestamp > op_upper
            ):
                findings.append((i, f"{r.event.label!r} outside the operation window"))
        elif r.event in _SPAN_EVENTS:
            if (mpac and r.timestamp < min(mpac)) or (mpad and r.timestamp > max(mpad)):
                findings.append((i, f"{r.event.label!r} outside the prewash window"))

    # Neighbour-jump sweep: records outside the largest time cluster.
    order = sorted(range(len(records)), key=lambda i: records[i].timestamp)
    segments: list[list[int]] = [[order[0]]]
    for prev, cur in zip(order, order[1:]):
        if records[cur].timestamp - records[prev].timestamp > jump:
            segments.append([cur])
        else:
            segments[-1].append(cur)
    if len(segments) > 1:
        keep = max(segments, key=len)
        for segment in segments:
            if segment is keep:
                continue
            for i in segment:
                findings.append(
                    (i, f"timestamp jumps more than {jump.days} days from its neighbors")
                )
    return findings


def validate_portcall(pc: Portcall, neighbor_jump_days: float = 30.0) -> list[Violation]:
    """All findings for one portcall; an empty list means clean."""
    violations: list[Violation] = []

    for i, r in enumerate(pc.records):
        if r.cargo is not None and r.cargo.group is CargoGroup.OTHER:
            resolved = standardize_cargo(r.cargo.canonical_name)
            if resolved.group is not CargoGroup.OTHER:
                violations.append(
                    Violation(
                        pc.portcall_id,
                        i,
                        ViolationClass.CARGO_INFO,
                        f"cargo {r.cargo.canonical_name!r} resolves to "
                        f"{resolved.canonical_name!r} only via typo normalization",
                        repairable=True,
                    )
                )

    for i, r in enumerate(pc.records):
        if not r.event.applies_to(r.shipment):
            violations.append(
                Violation(
                    pc.portcall_id,
                    i,
                    ViolationClass.PORT_EVENT,
                    f"event {r.event.label!r} does not apply to {r.shipment.value} shipments",
                    repairable=False,
                )
            )

    structure = _analyze_structure(pc)
    for idx, description in structure.findings:
        violations.append(
            Violation(pc.portcall_id, idx, ViolationClass.PORT_EVENT, description, True)
        )

    seen: set[tuple[int, str]] = set()
    for idx, description in _timing_findings(pc, timedelta(days=neighbor_jump_days)):
        if (idx, description) in seen:
            continue
        seen.add((idx, description))
        violations.append(
            Violation(pc.portcall_id, idx, ViolationClass.PORT_TIMING, description, True)
        )

    violations.sort(key=lambda v: (v.record_index, v.violation_class.value, v.description))
    return violations


def repair_timestamp(
    ts: datetime, neighbors: tuple[datetime, datetime]
) -> Optional[datetime]:
    """Month/day-swap repair against a known-good window.

    Returns the timestamp unchanged when it already fits, the swapped
    timestamp when the swap lands inside [prev, next], and None when the
    rule cannot fix it.
    """
    prev, nxt = neighbors
    if prev > nxt:
        raise ValueError("neighbor window must satisfy prev <= next")
    if prev <= ts <= nxt:
        return ts
    if ts.day <= 12:
        swapped = ts.replace(month=ts.day, day=ts.month)
        if prev <= swapped <= nxt:
            return swapped
    return None


def _slot_window(
    pc: Portcall, index: int, excluded: set[int]
) -> tuple[datetime, datetime]:
    """Earliest/latest admissible time for a record, from its chain slot
    and pair partner, using only records not themselves under suspicion."""
    record = pc.records[index]
    if record.event in _OP_EVENTS:
        lo_slot, hi_slot = (
            chain_slot(StandardEvent.COMMENCE_OPERATION),
            chain_slot(StandardEvent.COMPLETE_OPERATION),
        )
    elif record.event in _SPAN_EVENTS:
        lo_slot, hi_slot = (
            chain_slot(StandardEvent.COMMENCE_PREWASH),
            chain_slot(StandardEvent.COMPLETE_PREWASH),
        )
    else:
        lo_slot = hi_slot = chain_slot(record.event)

    lower = datetime.min
    upper = datetime.max
    for j, other in enumerate(pc.records):
        if j == index or j in excluded:
            continue
        slot = chain_slot(other.event)
        if other.event in _OP_EVENTS or other.event in _SPAN_EVENTS:
            span_lo, span_hi = (
                (chain_slot(_OP_EVENTS[0]), chain_slot(_OP_EVENTS[1]))
                if other.event in _OP_EVENTS
                else (
                    chain_slot(StandardEvent.COMMENCE_PREWASH),
                    chain_slot(StandardEvent.COMPLETE_PREWASH),
                )
            )
            if span_hi < lo_slot:
                lower = max(lower, other.timestamp)
            elif span_lo > hi_slot:
                upper = min(upper, other.timestamp)
            continue
        if slot < lo_slot:
            lower = max(lower, other.timestamp)
        elif slot > hi_slot:
            upper = min(upper, other.timestamp)

    for i, j in _matched_pairs(pc):
        if j == index and i not in excluded:
            lower = max(lower, pc.records[i].timestamp)
        elif i == index and j not in excluded:
            upper = min(upper, pc.records[j].timestamp)
    return lower, upper


def _replace_record(pc: Portcall, index: int, **changes) -> Portcall:
    records = list(pc.records)
    records[index] = dataclasses.replace(records[index], **changes)
    return Portcall.from_records(records)


def _record_signature(pc: Portcall) -> tuple:
    return tuple(
        sorted(
            (
                r.event.label,
                r.timestamp,
                r.cargo.canonical_name if r.cargo else "",
                -1.0 if r.size_mt is None else r.size_mt,
                -1 if r.arm_id is None else r.arm_id,
            )
            for r in pc.records
        )
    )


def _try_cargo_repair(
    pc: Portcall, violations: list[Violation]
) -> Optional[tuple[Portcall, AppliedRepair]]:
    for v in violations:
        if v.violation_class is not ViolationClass.CARGO_INFO:
            continue
        record = pc.records[v.record_index]
        resolved = standardize_cargo(record.cargo.canonical_name)
        repaired = _replace_record(pc, v.record_index, cargo=resolved)
        return repaired, AppliedRepair(
            pc.portcall_id,
            v.record_index,
            ViolationClass.CARGO_INFO,
            "normalize_cargo",
            record.cargo.canonical_name,
            resolved.canonical_name,
        )
    return None


def _try_timing_repair(
    pc: Portcall, violations: list[Violation], jump_days: float
) -> Optional[tuple[Portcall, AppliedRepair]]:
    flagged = {v.record_index for v in violations if v.record_index >= 0}
    timing_indices = [
        v.record_index
        for v in violations
        if v.violation_class is ViolationClass.PORT_TIMING and v.record_index >= 0
    ]
    # Pair inversions may have flagged the wrong endpoint; consider both.
    candidates = list(dict.fromkeys(timing_indices))
    for i, j in _matched_pairs(pc):
        if pc.records[i].timestamp > pc.records[j].timestamp:
            for k in (i, j):
                if k not in candidates:
                    candidates.append(k)

    before_count = len(violations)
    for index in candidates:
        record = pc.records[index]
        window = _slot_window(pc, index, excluded=flagged - {index})
        if window[0] > window[1]:
            continue  # other suspects squeeze the window shut; no safe slot
        swapped = repair_timestamp(record.timestamp, window)
        if swapped is None or swapped == record.timestamp:
            continue
        repaired = _replace_record(pc, index, timestamp=swapped)
        if len(validate_portcall(repaired, jump_days)) < before_count:
            return repaired, AppliedRepair(
                pc.portcall_id,
                index,
                ViolationClass.PORT_TIMING,
                "swap_month_day",
                record.timestamp.strftime(TIMESTAMP_FORMAT),
                swapped.strftime(TIMESTAMP_FORMAT),
            )
    return None


def _try_event_repair(
    pc: Portcall, violations: list[Violation], jump_days: float
) -> Optional[tuple[Portcall, AppliedRepair]]:
    structure = _analyze_structure(pc)
    if len(structure.missing) != 1 or not structure.duplicate_indices:
        return None
    missing_kind, missing_key = structure.missing[0]

    before_count = len(violations)
    successes: list[tuple[int, int, Portcall]] = []
    for index in sorted(set(structure.duplicate_indices)):
        record = pc.records[index]
        if record.event.tag is not missing_kind.tag:
            continue
        if missing_key is not None and _op_key(record) != missing_key:
            continue
        repaired = _replace_record(pc, index, event=missing_kind)
        leftover = len(validate_portcall(repaired, jump_days))
        if leftover < before_count:
            successes.append((leftover, index, repaired))

    if not successes:
        return None
    best = min(leftover for leftover, _, _ in successes)
    contenders = [(i, p) for leftover, i, p in successes if leftover == best]
    signatures = {_record_signature(p) for _, p in contenders}
    if len(signatures) > 1:
        return None  # genuinely ambiguous: more than one distinct consistent reading
    index, repaired = contenders[0]
    return repaired, AppliedRepair(
        pc.portcall_id,
        index,
        ViolationClass.PORT_EVENT,
        "relabel_event",
        pc.records[index].event.label,
        missing_kind.label,
    )


def _clean_one(
    pc: Portcall, jump_days: float
) -> tuple[Optional[Portcall], list[AppliedRepair], list[Violation]]:
    current = pc
    repairs: list[AppliedRepair] = []
    for _ in range(len(pc.records) + 8):
        violations = validate_portcall(current, jump_days)
        if not violations:
            return current, repairs, []
        step = (
            _try_cargo_repair(current, violations)
            or _try_timing_repair(current, violations, jump_days)
            or _try_event_repair(current, violations, jump_days)
        )
        if step is None:
            return None, repairs, violations
        current, repair = step
        repairs.append(repair)
    return None, repairs, validate_portcall(current, jump_days)


def apply_cleaning(
    portcalls: Sequence[Portcall], policy: CleaningPolicy = CleaningPolicy()
) -> CleaningOutcome:
    """Repair what the rules allow, discard the rest, and account for both.

    Raises DiscardBudgetExceeded when the discard fraction crosses the
    policy bound, which usually signals a bad alias map rather than bad
    luck.
    """
    outcome = CleaningOutcome()
    for pc in sorted(portcalls, key=lambda p: p.portcall_id):
        cleaned, repairs, leftover = _clean_one(pc, policy.neighbor_jump_days)
        if cleaned is not None:
            outcome.cleaned.append(cleaned)
            outcome.audit.extend(repairs)
        else:
            outcome.discarded.append((pc, leftover))
    total = len(outcome.cleaned) + len(outcome.discarded)
    if total and len(outcome.discarded) / total > policy.max_discard_fraction:
        raise DiscardBudgetExceeded(
            len(outcome.discarded), total, policy.max_discard_fraction
        )
    return outcome


def write_audit_csv(audit: Sequence[AppliedRepair], stream: Union[TextIO, str, Path]) -> None:
    if isinstance(stream, (str, Path)):
        with open(stream, "w", newline="", encoding="utf-8") as fh:
            write_audit_csv(audit, fh)
            return
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["portcall_id", "record_index", "class", "action", "before", "after"])
    for entry in audit:
        writer.writerow(
            [
                entry.portcall_id,
                entry.record_index,
                entry.violation_class.value,
                entry.action,
                entry.before,
                entry.after,
            ]
        )
