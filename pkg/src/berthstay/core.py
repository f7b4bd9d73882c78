"""Shared vocabulary for tanker-terminal berth operations.

Standardized port events, cargo groups, shipment types, processing-block
kinds, and the record/portcall containers every other module builds on.
All types are immutable value objects after construction.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence


class BerthstayError(Exception):
    """Base class for data and model errors raised by this package."""


class ConfigurationError(BerthstayError):
    """A configuration table is missing a required entry."""


class ShipmentType(Enum):
    LOADING = "Loading"
    DISCHARGING = "Discharging"


class EventTag(Enum):
    """General events describe the visit; Cargo events describe one cargo."""

    GENERAL = "General"
    CARGO = "Cargo"


_LD = frozenset({ShipmentType.LOADING, ShipmentType.DISCHARGING})
_D = frozenset({ShipmentType.DISCHARGING})


class StandardEvent(Enum):
    """The 22 standardized berth operation events.

    Each member carries its display label, the shipment types it applies
    to, and its General/Cargo tag.  Declaration order is the canonical
    event order; ``ALL_FAST`` has rank 0 and every Commence precedes its
    Complete.
    """

    ALL_FAST = ("All Fast", _LD, EventTag.GENERAL)
    SURVEYOR_ON_BOARD = ("Surveyor On Board", _LD, EventTag.GENERAL)
    COMMENCE_SAFETY_MEETING = ("Commence Safety Meeting", _LD, EventTag.GENERAL)
    COMPLETE_SAFETY_MEETING = ("Complete Safety Meeting", _LD, EventTag.GENERAL)
    COMMENCE_ULLAGE_BEFORE_OPERATION = ("Commence Ullage Before Operation", _LD, EventTag.GENERAL)
    COMPLETE_ULLAGE_BEFORE_OPERATION = ("Complete Ullage Before Operation", _LD, EventTag.GENERAL)
    COMMENCE_SAMPLING = ("Commence Sampling", _D, EventTag.CARGO)
    SAMPLE_PASS = ("Sample Pass", _D, EventTag.CARGO)
    CARGO_ARM_CONNECTED = ("Cargo Arm Connected", _LD, EventTag.CARGO)
    COMMENCE_OPERATION = ("Commence Operation", _LD, EventTag.CARGO)
    COMPLETE_OPERATION = ("Complete Operation", _LD, EventTag.CARGO)
    COMMENCE_TANK_INSPECTION = ("Commence Tank Inspection", _LD, EventTag.GENERAL)
    COMPLETE_TANK_INSPECTION = ("Complete Tank Inspection", _LD, EventTag.GENERAL)
    CARGO_ARM_DISCONNECTED = ("Cargo Arm Disconnected", _LD, EventTag.CARGO)
    COMMENCE_SHIFTING = ("Commence Shifting", _LD, EventTag.GENERAL)
    COMPLETE_SHIFTING = ("Complete Shifting", _LD, EventTag.GENERAL)
    MARPOL_PREWASH_ARM_CONNECTED = ("Marpol Prewash Arm Connected", _D, EventTag.CARGO)
    COMMENCE_PREWASH = ("Commence Prewash", _D, EventTag.CARGO)
    COMPLETE_PREWASH = ("Complete Prewash", _D, EventTag.CARGO)
    COMMENCE_STRIPPING_TO_SHORE = ("Commence Stripping to Shore", _D, EventTag.CARGO)
    COMPLETE_STRIPPING_TO_SHORE = ("Complete Stripping to Shore", _D, EventTag.CARGO)
    MARPOL_PREWASH_ARM_DISCONNECTED = ("Marpol Prewash Arm Disconnected", _D, EventTag.CARGO)

    def __new__(cls, label: str, shipments: frozenset, tag: EventTag):
        obj = object.__new__(cls)
        obj._value_ = label
        obj.shipments = shipments
        obj.tag = tag
        return obj

    @property
    def label(self) -> str:
        return self.value

    def applies_to(self, shipment: ShipmentType) -> bool:
        return shipment in self.shipments


_EVENT_RANK = {event: rank for rank, event in enumerate(StandardEvent)}


def canonical_event_order(event: StandardEvent) -> int:
    """Total order over the 22 events; ``ALL_FAST`` is 0."""
    return _EVENT_RANK[event]


class CargoGroup(Enum):
    G1 = "G1"
    G2 = "G2"
    OTHER = "Other"


#: Focused cargo grades.  G1 are base-oil viscosity grades, G2 are EHC
#: base-stock grades; everything else is grouped as Other.
G1_GRADES = ("70N", "100N", "150N", "400N", "500N", "600N", "2500N")
G2_GRADES = ("EHC 50", "EHC 110")


def _squash(label: str) -> str:
    return "".join(label.split()).casefold()


_GRADE_BY_KEY = {_squash(name): (name, CargoGroup.G1) for name in G1_GRADES}
_GRADE_BY_KEY.update({_squash(name): (name, CargoGroup.G2) for name in G2_GRADES})


def grade_group(canonical_name: str) -> CargoGroup:
    """Group for a cargo name: G1/G2 for the focused grades, else Other."""
    hit = _GRADE_BY_KEY.get(_squash(canonical_name))
    return hit[1] if hit is not None else CargoGroup.OTHER


@dataclass(frozen=True)
class CargoRef:
    """A cargo by canonical name plus its group classification."""

    canonical_name: str
    group: CargoGroup

    def __post_init__(self):
        expected = grade_group(self.canonical_name)
        if self.group is not expected:
            raise ValueError(
                f"cargo {self.canonical_name!r} must be in group {expected.value}, "
                f"got {self.group.value}"
            )

    @classmethod
    def of(cls, canonical_name: str) -> "CargoRef":
        return cls(canonical_name, grade_group(canonical_name))


@dataclass(frozen=True)
class VesselInfo:
    """Vessel identity bundle.  Carried through, not used by any model."""

    name: Optional[str] = None
    imo: Optional[int] = None
    mmsi: Optional[int] = None
    length_m: Optional[float] = None
    width_m: Optional[float] = None
    vessel_type: Optional[str] = None
    flag: Optional[str] = None


@dataclass(frozen=True)
class StandardRecord:
    """One standardized, timestamped port event.

    Cargo-tagged events must carry cargo and size; General events must
    not.  Timestamps have minute resolution.
    """

    portcall_id: str
    terminal: str
    event: StandardEvent
    timestamp: datetime
    shipment: ShipmentType
    cargo: Optional[CargoRef] = None
    size_mt: Optional[float] = None
    arm_id: Optional[int] = None
    vessel: Optional[VesselInfo] = None

    def __post_init__(self):
        if self.timestamp.second != 0 or self.timestamp.microsecond != 0:
            raise ValueError(f"timestamp {self.timestamp} is not minute-resolution")
        is_cargo = self.event.tag is EventTag.CARGO
        if is_cargo and (self.cargo is None or self.size_mt is None):
            raise ValueError(f"cargo event {self.event.label!r} requires cargo and size_mt")
        if not is_cargo and (self.cargo is not None or self.size_mt is not None):
            raise ValueError(f"general event {self.event.label!r} must not carry cargo fields")
        if self.size_mt is not None and self.size_mt < 0:
            raise ValueError("size_mt must be non-negative")


class OperationMode(Enum):
    SINGLE = "Single"
    SEQUENTIAL = "Sequential"
    CONCURRENT = "Concurrent"

    @property
    def is_multiple(self) -> bool:
        return self is not OperationMode.SINGLE


@dataclass(frozen=True)
class OperationInterval:
    """One cargo operation: the commence-to-complete span for one cargo."""

    cargo: CargoRef
    size_mt: float
    start: datetime
    end: datetime
    arm_id: Optional[int] = None

    @property
    def duration_hours(self) -> float:
        return (self.end - self.start).total_seconds() / 3600.0


def operation_intervals(records: Sequence[StandardRecord]) -> list[OperationInterval]:
    """Pair commence/complete operation records into intervals per cargo.

    Pairs are matched by arm id when present, else by cargo name; unmatched
    records are left out (the cleaning module flags them).
    """
    commences: dict[object, list[StandardRecord]] = {}
    intervals: list[OperationInterval] = []
    ops = [
        r
        for r in records
        if r.event in (StandardEvent.COMMENCE_OPERATION, StandardEvent.COMPLETE_OPERATION)
    ]
    for r in sorted(ops, key=lambda r: (r.timestamp, canonical_event_order(r.event))):
        key = r.arm_id if r.arm_id is not None else r.cargo.canonical_name
        if r.event is StandardEvent.COMMENCE_OPERATION:
            commences.setdefault(key, []).append(r)
        else:
            pending = commences.get(key)
            if pending:
                start = pending.pop(0)
                intervals.append(
                    OperationInterval(
                        cargo=start.cargo,
                        size_mt=start.size_mt,
                        start=start.timestamp,
                        end=r.timestamp,
                        arm_id=start.arm_id,
                    )
                )
    intervals.sort(key=lambda iv: (iv.start, iv.end))
    return intervals


def classify_operation_mode(intervals: Sequence[OperationInterval]) -> OperationMode:
    """Single for one operation; Concurrent when two spans overlap on a
    set of positive duration; Sequential otherwise."""
    if len(intervals) == 1:
        return OperationMode.SINGLE
    for i, a in enumerate(intervals):
        for b in intervals[i + 1 :]:
            if min(a.end, b.end) > max(a.start, b.start):
                return OperationMode.CONCURRENT
    return OperationMode.SEQUENTIAL


@dataclass(frozen=True)
class Portcall:
    """All standardized events of one vessel visit, time-ordered."""

    portcall_id: str
    terminal: str
    records: tuple[StandardRecord, ...]
    operation_mode: OperationMode
    vessel: Optional[VesselInfo] = None
    incomplete: bool = False

    @classmethod
    def from_records(cls, records: Iterable[StandardRecord]) -> "Portcall":
        recs = sorted(records, key=lambda r: r.timestamp)
        if not recs:
            raise ValueError("a portcall needs at least one record")
        vessel = next((r.vessel for r in recs if r.vessel is not None), None)
        intervals = operation_intervals(recs)
        incomplete = not any(r.event is StandardEvent.COMMENCE_OPERATION for r in recs)
        return cls(
            portcall_id=recs[0].portcall_id,
            terminal=recs[0].terminal,
            records=tuple(recs),
            operation_mode=classify_operation_mode(intervals),
            vessel=vessel,
            incomplete=incomplete,
        )

    @property
    def shipment(self) -> ShipmentType:
        counts = Counter(r.shipment for r in self.records)
        best = max(counts.values())
        for r in self.records:  # ties resolve to the earliest record
            if counts[r.shipment] == best:
                return r.shipment
        raise AssertionError("unreachable")

    def intervals(self) -> list[OperationInterval]:
        return operation_intervals(self.records)

    def timestamps_of(self, event: StandardEvent) -> list[datetime]:
        return [r.timestamp for r in self.records if r.event is event]

    def has_event(self, event: StandardEvent) -> bool:
        return any(r.event is event for r in self.records)


class BlockKind(Enum):
    """The 12 processing blocks a berth stay decomposes into, (a)-(l)."""

    SAMPLING = ("Sampling", "a")
    TANK_INSPECTION = ("TankInspection", "b")
    SAFETY_MEETING = ("SafetyMeeting", "c")
    UBO = ("UBO", "d")
    CARGO_ARM_CONNECTION = ("CargoArmConnection", "e")
    CARGO_OPERATION = ("CargoOperation", "f")
    CARGO_ARM_DISCONNECTION = ("CargoArmDisconnection", "g")
    SHIFTING = ("Shifting", "h")
    PREWASH_ARM_CONNECTION = ("PrewashArmConnection", "i")
    PREWASH = ("Prewash", "j")
    STRIPPING = ("Stripping", "k")
    PREWASH_ARM_DISCONNECTION = ("PrewashArmDisconnection", "l")

    def __new__(cls, label: str, letter: str):
        obj = object.__new__(cls)
        obj._value_ = label
        obj.letter = letter
        return obj


#: Block boundary events.  Gap blocks (arm connection/disconnection) have
#: no commence event of their own; they span from the previous block's end
#: to their single closing event.
BLOCK_BOUNDARIES: dict[BlockKind, tuple[Optional[StandardEvent], StandardEvent]] = {
    BlockKind.SAMPLING: (StandardEvent.COMMENCE_SAMPLING, StandardEvent.SAMPLE_PASS),
    BlockKind.TANK_INSPECTION: (
        StandardEvent.COMMENCE_TANK_INSPECTION,
        StandardEvent.COMPLETE_TANK_INSPECTION,
    ),
    BlockKind.SAFETY_MEETING: (
        StandardEvent.COMMENCE_SAFETY_MEETING,
        StandardEvent.COMPLETE_SAFETY_MEETING,
    ),
    BlockKind.UBO: (
        StandardEvent.COMMENCE_ULLAGE_BEFORE_OPERATION,
        StandardEvent.COMPLETE_ULLAGE_BEFORE_OPERATION,
    ),
    BlockKind.CARGO_ARM_CONNECTION: (None, StandardEvent.CARGO_ARM_CONNECTED),
    BlockKind.CARGO_OPERATION: (
        StandardEvent.COMMENCE_OPERATION,
        StandardEvent.COMPLETE_OPERATION,
    ),
    BlockKind.CARGO_ARM_DISCONNECTION: (None, StandardEvent.CARGO_ARM_DISCONNECTED),
    BlockKind.SHIFTING: (StandardEvent.COMMENCE_SHIFTING, StandardEvent.COMPLETE_SHIFTING),
    BlockKind.PREWASH_ARM_CONNECTION: (None, StandardEvent.MARPOL_PREWASH_ARM_CONNECTED),
    BlockKind.PREWASH: (StandardEvent.COMMENCE_PREWASH, StandardEvent.COMPLETE_PREWASH),
    BlockKind.STRIPPING: (
        StandardEvent.COMMENCE_STRIPPING_TO_SHORE,
        StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
    ),
    BlockKind.PREWASH_ARM_DISCONNECTION: (None, StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED),
}


#: Generic block chain for a focused-cargo stay, in processing order.
#: Inner tuples with two members run in parallel on separate arms.
#: Individual stays omit blocks that do not apply to them.
GENERIC_CHAIN: tuple[tuple[BlockKind, ...], ...] = (
    (BlockKind.SAMPLING,),
    (BlockKind.SAFETY_MEETING,),
    (BlockKind.TANK_INSPECTION,),
    (BlockKind.UBO,),
    (BlockKind.CARGO_ARM_CONNECTION,),
    (BlockKind.SHIFTING,),
    (BlockKind.CARGO_OPERATION,),
    (BlockKind.CARGO_ARM_DISCONNECTION,),
    (BlockKind.PREWASH_ARM_CONNECTION,),
    (BlockKind.PREWASH, BlockKind.STRIPPING),
    (BlockKind.PREWASH_ARM_DISCONNECTION,),
)


def _build_chain_slots() -> dict[StandardEvent, int]:
    slots: dict[StandardEvent, int] = {
        StandardEvent.ALL_FAST: 0,
        StandardEvent.SURVEYOR_ON_BOARD: 1,
    }
    slot = 2
    for element in GENERIC_CHAIN:
        start_slot, end_slot = slot, slot + 1
        for kind in element:
            start, end = BLOCK_BOUNDARIES[kind]
            if start is not None:
                slots[start] = start_slot
            slots[end] = end_slot if start is not None else start_slot
        slot += 2
    return slots


#: Position of each event along the generic chain.  Unlike the canonical
#: event order, this reflects when the event occurs during a stay (tank
#: inspection, for instance, happens before arm connection).
CHAIN_SLOT: dict[StandardEvent, int] = _build_chain_slots()


def chain_slot(event: StandardEvent) -> int:
    return CHAIN_SLOT[event]


#: Default prewash requirement per cargo group.  Which groups need a
#: regulated prewash after discharge is terminal policy, not something the
#: event data encodes, so it stays configurable.
DEFAULT_PREWASH_POLICY: Mapping[CargoGroup, bool] = MappingProxyType(
    {
        CargoGroup.G1: True,
        CargoGroup.G2: True,
        CargoGroup.OTHER: False,
    }
)


def requires_prewash(
    cargo_group: CargoGroup,
    shipment: ShipmentType,
    policy: Mapping[CargoGroup, bool] = DEFAULT_PREWASH_POLICY,
) -> bool:
    """Whether a cargo needs a Marpol prewash; never true for loading."""
    if shipment is ShipmentType.LOADING:
        return False
    if cargo_group not in policy:
        raise ConfigurationError(f"prewash policy has no entry for group {cargo_group.value}")
    return bool(policy[cargo_group])
