"""Ground-truth terminal simulator.

Generates portcall event logs from known block models laid over the
generic chain, and injects the three recording-error classes with a full
corruption manifest, so the whole pipeline can be checked against an
oracle it did not get to see.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .cleaning import ViolationClass
from .core import (
    DEFAULT_PREWASH_POLICY,
    G1_GRADES,
    G2_GRADES,
    BlockKind,
    CargoGroup,
    CargoRef,
    Portcall,
    ShipmentType,
    StandardEvent,
    StandardRecord,
    VesselInfo,
    requires_prewash,
)
from .mdgs import TruncatedMixture, reference_block_mixtures, sample_mixture
from .regress import CatalogKey

_GRADE_PATTERN = re.compile(r"^\d+N$")


@dataclass(frozen=True)
class TerminalProfile:
    """One simulated terminal: its name, which events its log captures
    (None means all 22), and its share of generated portcalls."""

    name: str
    recorded_events: Optional[frozenset[StandardEvent]] = None
    weight: float = 1.0

    def records_event(self, event: StandardEvent) -> bool:
        return self.recorded_events is None or event in self.recorded_events


#: The four events a minimally-instrumented terminal still logs.
MINIMAL_EVENTS = frozenset(
    {
        StandardEvent.ALL_FAST,
        StandardEvent.COMMENCE_OPERATION,
        StandardEvent.COMPLETE_OPERATION,
        StandardEvent.CARGO_ARM_DISCONNECTED,
    }
)


@dataclass(frozen=True)
class ErrorRates:
    cargo_info: float = 0.0
    port_event: float = 0.0
    port_timing: float = 0.0

    def __post_init__(self):
        for rate in (self.cargo_info, self.port_event, self.port_timing):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("error rates must lie in [0, 1]")


@dataclass
class GroundTruth:
    """Everything the generator needs, and therefore everything the
    fitted pipeline should be able to recover."""

    terminals: tuple[TerminalProfile, ...]
    lines: dict[CatalogKey, tuple[float, float]]
    mixtures: dict[BlockKind, TruncatedMixture]
    proportional: dict[BlockKind, float]
    safety_hours: float = 1.0
    op_noise_sigma: float = 0.0
    prewash_policy: dict[CargoGroup, bool] = field(
        default_factory=lambda: dict(DEFAULT_PREWASH_POLICY)
    )
    size_lognormal: dict[CargoGroup, tuple[float, float]] = field(
        default_factory=lambda: {CargoGroup.G1: (6.6, 0.8), CargoGroup.G2: (6.3, 0.7)}
    )
    discharging_prob: float = 0.65
    cargo_count_probs: tuple[float, ...] = (0.55, 0.30, 0.15)
    concurrent_prob: float = 0.0
    shifting_prob: float = 0.2
    g1_prob: float = 0.6
    start_date: datetime = datetime(2018, 1, 1)
    spread_days: int = 600
    size_grid_mt: float = 25.0
    error_rates: ErrorRates = field(default_factory=ErrorRates)
    rng_seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "terminals": [
                {
                    "name": t.name,
                    "recorded_events": None
                    if t.recorded_events is None
                    else sorted(e.label for e in t.recorded_events),
                    "weight": t.weight,
                }
                for t in self.terminals
            ],
            "lines": [
                {
                    "terminal": k.terminal,
                    "group": k.group.value,
                    "shipment": k.shipment.value,
                    "a": a,
                    "b": b,
                }
                for k, (a, b) in sorted(self.lines.items(), key=lambda kv: str(kv[0]))
            ],
            "mixtures": {k.value: m.to_json_dict() for k, m in sorted(
                self.mixtures.items(), key=lambda kv: kv[0].value
            )},
            "proportional": {k.value: v for k, v in sorted(
                self.proportional.items(), key=lambda kv: kv[0].value
            )},
            "safety_hours": self.safety_hours,
            "op_noise_sigma": self.op_noise_sigma,
            "prewash_policy": {g.value: v for g, v in self.prewash_policy.items()},
            "size_lognormal": {g.value: list(v) for g, v in self.size_lognormal.items()},
            "discharging_prob": self.discharging_prob,
            "cargo_count_probs": list(self.cargo_count_probs),
            "concurrent_prob": self.concurrent_prob,
            "shifting_prob": self.shifting_prob,
            "g1_prob": self.g1_prob,
            "start_date": self.start_date.strftime("%Y-%m-%d"),
            "spread_days": self.spread_days,
            "size_grid_mt": self.size_grid_mt,
            "error_rates": {
                "cargo_info": self.error_rates.cargo_info,
                "port_event": self.error_rates.port_event,
                "port_timing": self.error_rates.port_timing,
            },
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GroundTruth":
        terminals = tuple(
            TerminalProfile(
                name=t["name"],
                recorded_events=None
                if t.get("recorded_events") is None
                else frozenset(StandardEvent(label) for label in t["recorded_events"]),
                weight=float(t.get("weight", 1.0)),
            )
            for t in data["terminals"]
        )
        lines = {
            CatalogKey(
                item["terminal"], CargoGroup(item["group"]), ShipmentType(item["shipment"])
            ): (float(item["a"]), float(item["b"]))
            for item in data["lines"]
        }
        mixtures = {
            BlockKind(label): TruncatedMixture.from_json_dict(payload)
            for label, payload in data["mixtures"].items()
        }
        proportional = {
            BlockKind(label): float(value) for label, value in data["proportional"].items()
        }
        rates = data.get("error_rates", {})
        return cls(
            terminals=terminals,
            lines=lines,
            mixtures=mixtures,
            proportional=proportional,
            safety_hours=float(data.get("safety_hours", 1.0)),
            op_noise_sigma=float(data.get("op_noise_sigma", 0.0)),
            prewash_policy={
                CargoGroup(g): bool(v) for g, v in data.get("prewash_policy", {}).items()
            }
            or dict(DEFAULT_PREWASH_POLICY),
            size_lognormal={
                CargoGroup(g): (float(v[0]), float(v[1]))
                for g, v in data.get("size_lognormal", {}).items()
            },
            discharging_prob=float(data.get("discharging_prob", 0.65)),
            cargo_count_probs=tuple(data.get("cargo_count_probs", (0.55, 0.30, 0.15))),
            concurrent_prob=float(data.get("concurrent_prob", 0.0)),
            shifting_prob=float(data.get("shifting_prob", 0.2)),
            g1_prob=float(data.get("g1_prob", 0.6)),
            start_date=datetime.strptime(data.get("start_date", "2018-01-01"), "%Y-%m-%d"),
            spread_days=int(data.get("spread_days", 600)),
            size_grid_mt=float(data.get("size_grid_mt", 25.0)),
            error_rates=ErrorRates(
                cargo_info=float(rates.get("cargo_info", 0.0)),
                port_event=float(rates.get("port_event", 0.0)),
                port_timing=float(rates.get("port_timing", 0.0)),
            ),
            rng_seed=int(data.get("rng_seed", 0)),
        )


def default_ground_truth(terminal: str = "TERMINAL_A") -> GroundTruth:
    """A fully-instrumented terminal with the reference block mixtures.

    The regression lines are chosen so durations land on whole minutes for
    sizes on the 25 MT grid, keeping zero-noise generation lossless under
    minute-resolution timestamps.
    """
    lines = {
        CatalogKey(terminal, CargoGroup.G1, ShipmentType.DISCHARGING): (0.004, 1.2),
        CatalogKey(terminal, CargoGroup.G1, ShipmentType.LOADING): (0.002, 1.0),
        CatalogKey(terminal, CargoGroup.G2, ShipmentType.DISCHARGING): (0.006, 1.5),
        CatalogKey(terminal, CargoGroup.G2, ShipmentType.LOADING): (0.002, 0.8),
    }
    return GroundTruth(
        terminals=(TerminalProfile(name=terminal),),
        lines=lines,
        mixtures=reference_block_mixtures(),
        proportional={
            BlockKind.SHIFTING: 0.5,
            BlockKind.PREWASH: 1.0,
            BlockKind.STRIPPING: 0.75,
        },
    )


@dataclass
class OpTruth:
    cargo: str
    size_mt: float
    hours: float


@dataclass
class PortcallTruth:
    """Realized (minute-quantized) durations behind one generated portcall."""

    portcall_id: str
    terminal: str
    shipment: str
    blocks: dict[str, float] = field(default_factory=dict)
    ops: list[OpTruth] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "portcall_id": self.portcall_id,
            "terminal": self.terminal,
            "shipment": self.shipment,
            "blocks": self.blocks,
            "ops": [dataclasses.asdict(op) for op in self.ops],
        }


def _round_minutes(hours: float, minimum: int = 1) -> int:
    return max(minimum, int(round(hours * 60.0)))


def _quantized_size(raw: float, grid: float) -> float:
    return max(grid, round(raw / grid) * grid)


def generate_portcalls(
    truth: GroundTruth, count: int, rng: np.random.Generator
) -> tuple[list[Portcall], list[PortcallTruth]]:
    """Simulate portcalls by walking the generic chain with durations drawn
    from the ground truth; returns the portcalls plus a per-stay truth log
    of every realized duration."""
    if count < 0:
        raise ValueError("count must be non-negative")

    portcalls: list[Portcall] = []
    truth_log: list[PortcallTruth] = []
    weights = np.array([t.weight for t in truth.terminals], dtype=float)
    weights = weights / weights.sum()
    cargo_counts = np.arange(1, len(truth.cargo_count_probs) + 1)

    for i in range(count):
        profile = truth.terminals[int(rng.choice(len(truth.terminals), p=weights))]
        shipment = (
            ShipmentType.DISCHARGING
            if rng.random() < truth.discharging_prob
            else ShipmentType.LOADING
        )
        n_cargo = int(rng.choice(cargo_counts, p=np.asarray(truth.cargo_count_probs)))
        cargoes: list[tuple[CargoRef, float]] = []
        for _ in range(n_cargo):
            group = CargoGroup.G1 if rng.random() < truth.g1_prob else CargoGroup.G2
            grades = G1_GRADES if group is CargoGroup.G1 else G2_GRADES
            grade = grades[int(rng.integers(len(grades)))]
            mean_log, sigma_log = truth.size_lognormal[group]
            size = _quantized_size(float(np.exp(rng.normal(mean_log, sigma_log))), truth.size_grid_mt)
            cargoes.append((CargoRef.of(grade), size))
        concurrent = n_cargo > 1 and rng.random() < truth.concurrent_prob
        shifting = rng.random() < truth.shifting_prob
        prewash = any(
            requires_prewash(cargo.group, shipment, truth.prewash_policy)
            for cargo, _ in cargoes
        )
        start_minute = int(rng.integers(0, truth.spread_days * 1440))

        pc_id = f"PC{i:05d}"
        vessel = VesselInfo(
            name=f"TANKER-{i % 40:03d}", imo=9100000 + i % 40, mmsi=563000000 + i % 40
        )
        log = PortcallTruth(portcall_id=pc_id, terminal=profile.name, shipment=shipment.value)
        records: list[StandardRecord] = []
        t = truth.start_date + timedelta(minutes=start_minute)

        def emit(event: StandardEvent, ts: datetime, cargo_idx: Optional[int] = None) -> None:
            if not profile.records_event(event):
                return
            cargo_ref, size = (None, None)
            if cargo_idx is not None:
                cargo_ref, size = cargoes[cargo_idx]
            records.append(
                StandardRecord(
                    portcall_id=pc_id,
                    terminal=profile.name,
                    event=event,
                    timestamp=ts,
                    shipment=shipment,
                    cargo=cargo_ref,
                    size_mt=size,
                    arm_id=None if cargo_idx is None else cargo_idx + 1,
                    vessel=vessel,
                )
            )

        def draw_block(kind: BlockKind) -> float:
            hours = float(sample_mixture(truth.mixtures[kind], 1, rng)[0])
            realized = _round_minutes(hours) / 60.0
            log.blocks[kind.value] = realized
            return realized

        emit(StandardEvent.ALL_FAST, t)

        if shipment is ShipmentType.DISCHARGING:
            d = draw_block(BlockKind.SAMPLING)
            emit(StandardEvent.COMMENCE_SAMPLING, t, cargo_idx=0)
            t += timedelta(hours=d)
            emit(StandardEvent.SAMPLE_PASS, t, cargo_idx=0)

        safety = _round_minutes(truth.safety_hours) / 60.0
        log.blocks[BlockKind.SAFETY_MEETING.value] = safety
        emit(StandardEvent.COMMENCE_SAFETY_MEETING, t)
        t += timedelta(hours=safety)
        emit(StandardEvent.COMPLETE_SAFETY_MEETING, t)

        d = draw_block(BlockKind.TANK_INSPECTION)
        emit(StandardEvent.COMMENCE_TANK_INSPECTION, t)
        t += timedelta(hours=d)
        emit(StandardEvent.COMPLETE_TANK_INSPECTION, t)

        d = draw_block(BlockKind.UBO)
        emit(StandardEvent.COMMENCE_ULLAGE_BEFORE_OPERATION, t)
        t += timedelta(hours=d)
        emit(StandardEvent.COMPLETE_ULLAGE_BEFORE_OPERATION, t)

        d = draw_block(BlockKind.CARGO_ARM_CONNECTION)
        t += timedelta(hours=d)
        emit(StandardEvent.CARGO_ARM_CONNECTED, t, cargo_idx=0)

        if shifting:
            hours = n_cargo * truth.proportional[BlockKind.SHIFTING]
            realized = _round_minutes(hours) / 60.0
            log.blocks[BlockKind.SHIFTING.value] = realized
            emit(StandardEvent.COMMENCE_SHIFTING, t)
            t += timedelta(hours=realized)
            emit(StandardEvent.COMPLETE_SHIFTING, t)

        op_durations: list[float] = []
        for idx, (cargo, size) in enumerate(cargoes):
            a, b = truth.lines[CatalogKey(profile.name, cargo.group, shipment)]
            hours = a * size + b
            if truth.op_noise_sigma > 0:
                hours += float(rng.normal(0.0, truth.op_noise_sigma))
            realized = _round_minutes(hours, minimum=6) / 60.0
            op_durations.append(realized)
            log.ops.append(OpTruth(cargo=cargo.canonical_name, size_mt=size, hours=realized))

        if concurrent:
            for idx in range(n_cargo):
                emit(StandardEvent.COMMENCE_OPERATION, t, cargo_idx=idx)
            op_end = t
            for idx, d in enumerate(op_durations):
                end = t + timedelta(hours=d)
                emit(StandardEvent.COMPLETE_OPERATION, end, cargo_idx=idx)
                op_end = max(op_end, end)
            t = op_end
            log.blocks[BlockKind.CARGO_OPERATION.value] = max(op_durations)
        else:
            block_start = t
            for idx, d in enumerate(op_durations):
                emit(StandardEvent.COMMENCE_OPERATION, t, cargo_idx=idx)
                t += timedelta(hours=d)
                emit(StandardEvent.COMPLETE_OPERATION, t, cargo_idx=idx)
            log.blocks[BlockKind.CARGO_OPERATION.value] = (
                (t - block_start).total_seconds() / 3600.0
            )

        d = draw_block(BlockKind.CARGO_ARM_DISCONNECTION)
        t += timedelta(hours=d)
        emit(StandardEvent.CARGO_ARM_DISCONNECTED, t, cargo_idx=n_cargo - 1)

        if prewash:
            wash_idx = next(
                idx
                for idx, (cargo, _) in enumerate(cargoes)
                if requires_prewash(cargo.group, shipment, truth.prewash_policy)
            )
            d = draw_block(BlockKind.PREWASH_ARM_CONNECTION)
            t += timedelta(hours=d)
            emit(StandardEvent.MARPOL_PREWASH_ARM_CONNECTED, t, cargo_idx=wash_idx)

            wash = _round_minutes(n_cargo * truth.proportional[BlockKind.PREWASH]) / 60.0
            strip = _round_minutes(n_cargo * truth.proportional[BlockKind.STRIPPING]) / 60.0
            log.blocks[BlockKind.PREWASH.value] = wash
            log.blocks[BlockKind.STRIPPING.value] = strip
            emit(StandardEvent.COMMENCE_PREWASH, t, cargo_idx=wash_idx)
            emit(StandardEvent.COMMENCE_STRIPPING_TO_SHORE, t, cargo_idx=wash_idx)
            emit(StandardEvent.COMPLETE_PREWASH, t + timedelta(hours=wash), cargo_idx=wash_idx)
            emit(
                StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
                t + timedelta(hours=strip),
                cargo_idx=wash_idx,
            )
            t += timedelta(hours=max(wash, strip))

            d = draw_block(BlockKind.PREWASH_ARM_DISCONNECTION)
            t += timedelta(hours=d)
            emit(StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED, t, cargo_idx=wash_idx)

        portcalls.append(Portcall.from_records(records))
        truth_log.append(log)

    return portcalls, truth_log


@dataclass(frozen=True)
class Corruption:
    """One injected error, for recall scoring against the cleaned output."""

    portcall_id: str
    record_index: int
    violation_class: ViolationClass
    field_name: str
    before: str
    after: str

    def to_json_dict(self) -> dict:
        return {
            "portcall_id": self.portcall_id,
            "record_index": self.record_index,
            "class": self.violation_class.value,
            "field": self.field_name,
            "before": self.before,
            "after": self.after,
        }


def _typo_cargo(name: str, strip: bool) -> str:
    return name[:-1] if strip else "N" + name[:-1]


def inject_errors(
    portcalls: Sequence[Portcall], rates: ErrorRates, rng: np.random.Generator
) -> tuple[list[Portcall], list[Corruption]]:
    """Independently corrupt each eligible record with its class rate.

    Cargo names lose or shuffle their trailing N; events get replaced by
    the chain's next event (same General/Cargo tag only, so the record
    stays schema-valid); timestamps get their month and day swapped where
    the day can pass as a month.  Eligibility is judged on the pristine
    records, so the manifest is reproducible per seed.
    """
    corrupted_portcalls: list[Portcall] = []
    manifest: list[Corruption] = []

    for pc in portcalls:
        originals = pc.records
        changed = list(originals)
        for i, record in enumerate(originals):
            updates: dict = {}

            if (
                record.cargo is not None
                and _GRADE_PATTERN.match(record.cargo.canonical_name)
                and rates.cargo_info > 0
                and rng.random() < rates.cargo_info
            ):
                strip = rng.random() < 0.5
                bad_name = _typo_cargo(record.cargo.canonical_name, strip)
                updates["cargo"] = CargoRef(bad_name, CargoGroup.OTHER)
                manifest.append(
                    Corruption(
                        pc.portcall_id,
                        i,
                        ViolationClass.CARGO_INFO,
                        "cargo",
                        record.cargo.canonical_name,
                        bad_name,
                    )
                )

            nxt = originals[i + 1] if i + 1 < len(originals) else None
            if (
                nxt is not None
                and nxt.event is not record.event
                and nxt.event.tag is record.event.tag
                and rates.port_event > 0
                and rng.random() < rates.port_event
            ):
                updates["event"] = nxt.event
                manifest.append(
                    Corruption(
                        pc.portcall_id,
                        i,
                        ViolationClass.PORT_EVENT,
                        "event",
                        record.event.label,
                        nxt.event.label,
                    )
                )

            ts = record.timestamp
            if (
                ts.day <= 12
                and ts.day != ts.month
                and rates.port_timing > 0
                and rng.random() < rates.port_timing
            ):
                swapped = ts.replace(month=ts.day, day=ts.month)
                updates["timestamp"] = swapped
                manifest.append(
                    Corruption(
                        pc.portcall_id,
                        i,
                        ViolationClass.PORT_TIMING,
                        "timestamp",
                        ts.strftime("%Y-%m-%d %H:%M"),
                        swapped.strftime("%Y-%m-%d %H:%M"),
                    )
                )

            if updates:
                changed[i] = dataclasses.replace(record, **updates)
        corrupted_portcalls.append(Portcall.from_records(changed))
    return corrupted_portcalls, manifest
