"""Berth-stay composition engine.

Combines per-block duration models into scenario-specific chains and
produces stay predictions, either as a sum of block expectations or as
seeded Monte Carlo draws over the whole chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import (
    DEFAULT_PREWASH_POLICY,
    GENERIC_CHAIN,
    BerthstayError,
    BlockKind,
    CargoGroup,
    CargoRef,
    OperationMode,
    Portcall,
    ShipmentType,
    StandardEvent,
    requires_prewash,
)
from .mdgs import (
    MIXTURE_BLOCKS,
    FitConfig,
    FitNotConverged,
    TruncatedMixture,
    fit_mdgs,
    sample_mixture,
    truncated_mean,
)
from .regress import CatalogKey, CoverageReport, LinearModel, fit_catalog, predict_duration


class ModelUnavailable(BerthstayError):
    """The registry lacks a model the requested chain needs."""


class NotApplicable(BerthstayError):
    """The scenario cannot be anchored for this job (e.g. Sample Pass at a
    terminal that never records sampling)."""


@dataclass(frozen=True)
class FixedApproach:
    hours: float


@dataclass(frozen=True)
class ProportionalApproach:
    unit_hours: float


@dataclass(frozen=True)
class MixtureApproach:
    mixture: TruncatedMixture


@dataclass(frozen=True)
class RegressionApproach:
    """Durations come from the per-(terminal, group, shipment) catalog."""


Approach = Union[FixedApproach, ProportionalApproach, MixtureApproach, RegressionApproach]

#: Fixed duration of the safety-meeting block, in hours.
SAFETY_MEETING_HOURS = 1.0

PROPORTIONAL_BLOCKS = (BlockKind.SHIFTING, BlockKind.PREWASH, BlockKind.STRIPPING)


@dataclass(frozen=True)
class BlockModel:
    kind: BlockKind
    approach: Approach

    def __post_init__(self):
        ok = (
            (self.kind is BlockKind.CARGO_OPERATION and isinstance(self.approach, RegressionApproach))
            or (self.kind is BlockKind.SAFETY_MEETING and isinstance(self.approach, FixedApproach))
            or (self.kind in PROPORTIONAL_BLOCKS and isinstance(self.approach, ProportionalApproach))
            or (self.kind in MIXTURE_BLOCKS and isinstance(self.approach, MixtureApproach))
        )
        if not ok:
            raise ValueError(f"block {self.kind.value} cannot use {type(self.approach).__name__}")


@dataclass(frozen=True)
class JobSpec:
    """Everything a prediction needs to know about one upcoming stay."""

    terminal: str
    shipment: ShipmentType
    cargoes: tuple[tuple[CargoRef, float], ...]
    operation_mode: OperationMode
    needs_shifting: bool = False
    prewash_policy: Mapping[CargoGroup, bool] = field(default=DEFAULT_PREWASH_POLICY)
    available_blocks: Optional[frozenset[BlockKind]] = None

    def __post_init__(self):
        if not self.cargoes:
            raise ValueError("a job needs at least one cargo")
        if (len(self.cargoes) == 1) != (self.operation_mode is OperationMode.SINGLE):
            raise ValueError("operation_mode must be Single exactly for one cargo")

    @property
    def wants_prewash(self) -> bool:
        return any(
            requires_prewash(cargo.group, self.shipment, self.prewash_policy)
            for cargo, _ in self.cargoes
        )

    def block_available(self, kind: BlockKind) -> bool:
        return self.available_blocks is None or kind in self.available_blocks


class Scenario(Enum):
    """Prediction anchor points, from mooring to operation completion."""

    S1_ALL_FAST = (1, StandardEvent.ALL_FAST)
    S2_SAMPLE_PASS = (2, StandardEvent.SAMPLE_PASS)
    S3_COMMENCE_OPERATION = (3, StandardEvent.COMMENCE_OPERATION)
    S4_COMPLETE_OPERATION = (4, StandardEvent.COMPLETE_OPERATION)

    def __new__(cls, number: int, anchor: StandardEvent):
        obj = object.__new__(cls)
        obj._value_ = number
        obj.anchor_event = anchor
        return obj

    @property
    def label(self) -> str:
        return f"S{self.value}"


@dataclass(frozen=True)
class ChainPlan:
    """Ordered chain elements; multi-kind elements run in parallel."""

    scenario: Scenario
    elements: tuple[tuple[BlockKind, ...], ...]

    def blocks(self) -> list[BlockKind]:
        return [kind for element in self.elements for kind in element]


def element_label(element: tuple[BlockKind, ...]) -> str:
    return "+".join(kind.value for kind in element)


def build_chain(job: JobSpec, scenario: Scenario) -> ChainPlan:
    """Assemble the block chain for a job from the scenario's anchor to the
    final arm disconnection, dropping blocks that do not apply."""
    discharging = job.shipment is ShipmentType.DISCHARGING
    sampling_in = discharging and job.block_available(BlockKind.SAMPLING)
    prewash_in = job.wants_prewash and all(
        job.block_available(k)
        for k in (
            BlockKind.PREWASH_ARM_CONNECTION,
            BlockKind.PREWASH,
            BlockKind.STRIPPING,
            BlockKind.PREWASH_ARM_DISCONNECTION,
        )
    )

    def included(kind: BlockKind) -> bool:
        if kind is BlockKind.SAMPLING:
            return sampling_in
        if kind is BlockKind.SHIFTING:
            return job.needs_shifting and job.block_available(kind)
        if kind is BlockKind.CARGO_OPERATION:
            return True
        if kind in (
            BlockKind.PREWASH_ARM_CONNECTION,
            BlockKind.PREWASH,
            BlockKind.STRIPPING,
            BlockKind.PREWASH_ARM_DISCONNECTION,
        ):
            return prewash_in
        return job.block_available(kind)

    elements: list[tuple[BlockKind, ...]] = []
    for element in GENERIC_CHAIN:
        kept = tuple(kind for kind in element if included(kind))
        if kept:
            elements.append(kept)

    if scenario is Scenario.S2_SAMPLE_PASS:
        if not sampling_in:
            raise NotApplicable(
                f"scenario S2 needs sampling events, which {job.terminal!r} "
                f"{job.shipment.value} stays do not provide"
            )
        elements = [e for e in elements if e != (BlockKind.SAMPLING,)]
    elif scenario is Scenario.S3_COMMENCE_OPERATION:
        start = elements.index((BlockKind.CARGO_OPERATION,))
        elements = elements[start:]
    elif scenario is Scenario.S4_COMPLETE_OPERATION:
        start = elements.index((BlockKind.CARGO_OPERATION,))
        elements = elements[start + 1 :]

    if not elements or elements[-1][-1] not in (
        BlockKind.CARGO_ARM_DISCONNECTION,
        BlockKind.PREWASH_ARM_DISCONNECTION,
    ):
        raise NotApplicable(
            f"no arm-disconnection block available for {job.terminal!r}; "
            "the chain cannot close"
        )
    return ChainPlan(scenario=scenario, elements=tuple(elements))


def aggregate_cargo_ops(durations: Sequence[float], mode: OperationMode) -> float:
    """Total operation time: sequential cargoes add up, concurrent take the max."""
    if not durations:
        raise ValueError("need at least one cargo duration")
    return max(durations) if mode is OperationMode.CONCURRENT else float(sum(durations))


@dataclass
class ModelRegistry:
    """Per-terminal block models plus the shared regression catalog."""

    blocks: dict[str, dict[BlockKind, BlockModel]] = field(default_factory=dict)
    catalog: dict[CatalogKey, LinearModel] = field(default_factory=dict)
    floor_hours: float = 0.1

    def available_blocks(self, terminal: str) -> frozenset[BlockKind]:
        return frozenset(self.blocks.get(terminal, {}))

    def block_model(self, terminal: str, kind: BlockKind) -> BlockModel:
        model = self.blocks.get(terminal, {}).get(kind)
        if model is None:
            raise ModelUnavailable(f"no model for block {kind.value} at terminal {terminal!r}")
        return model

    def regression(self, key: CatalogKey) -> LinearModel:
        model = self.catalog.get(key)
        if model is None:
            raise ModelUnavailable(f"no cargo-operation model for key {key}")
        return model

    def to_json_dict(self) -> dict:
        terminals: dict[str, dict] = {}
        for terminal in sorted(self.blocks):
            entry: dict[str, dict] = {}
            for kind in BlockKind:
                model = self.blocks[terminal].get(kind)
                if model is None:
                    continue
                approach = model.approach
                if isinstance(approach, FixedApproach):
                    entry[kind.value] = {"approach": "fixed", "hours": approach.hours}
                elif isinstance(approach, ProportionalApproach):
                    entry[kind.value] = {
                        "approach": "proportional",
                        "unit_hours": approach.unit_hours,
                    }
                elif isinstance(approach, MixtureApproach):
                    entry[kind.value] = {
                        "approach": "mixture",
                        "mixture": approach.mixture.to_json_dict(),
                    }
                else:
                    entry[kind.value] = {"approach": "regression"}
            terminals[terminal] = entry
        return {
            "terminals": terminals,
            "catalog": [self.catalog[k].to_json_dict() for k in sorted(self.catalog, key=str)],
            "floor_hours": self.floor_hours,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelRegistry":
        registry = cls(floor_hours=float(data.get("floor_hours", 0.1)))
        for terminal, entry in data.get("terminals", {}).items():
            models: dict[BlockKind, BlockModel] = {}
            for kind_label, payload in entry.items():
                kind = BlockKind(kind_label)
                approach_name = payload["approach"]
                if approach_name == "fixed":
                    approach: Approach = FixedApproach(float(payload["hours"]))
                elif approach_name == "proportional":
                    approach = ProportionalApproach(float(payload["unit_hours"]))
                elif approach_name == "mixture":
                    approach = MixtureApproach(TruncatedMixture.from_json_dict(payload["mixture"]))
                elif approach_name == "regression":
                    approach = RegressionApproach()
                else:
                    raise ValueError(f"unknown approach {approach_name!r}")
                models[kind] = BlockModel(kind=kind, approach=approach)
            registry.blocks[terminal] = models
        for item in data.get("catalog", []):
            key = CatalogKey(
                item["terminal"], CargoGroup(item["group"]), ShipmentType(item["shipment"])
            )
            registry.catalog[key] = LinearModel(
                a=float(item["a"]), b=float(item["b"]), n_train=int(item["n_train"]), key=key
            )
        return registry

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelRegistry":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


class Mode(Enum):
    EXPECTATION = "expectation"
    SAMPLE = "sample"


def _regression_hours(registry: ModelRegistry, job: JobSpec) -> float:
    durations = [
        predict_duration(
            registry.regression(CatalogKey(job.terminal, cargo.group, job.shipment)),
            size,
            floor=registry.floor_hours,
        )
        for cargo, size in job.cargoes
    ]
    return aggregate_cargo_ops(durations, job.operation_mode)


def block_duration(
    model: BlockModel,
    job: JobSpec,
    mode: Mode,
    registry: Optional[ModelRegistry] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Hours one block contributes: the expectation, or one random draw."""
    approach = model.approach
    if isinstance(approach, FixedApproach):
        return approach.hours
    if isinstance(approach, ProportionalApproach):
        return len(job.cargoes) * approach.unit_hours
    if isinstance(approach, MixtureApproach):
        if mode is Mode.EXPECTATION:
            return truncated_mean(approach.mixture)
        if rng is None:
            raise ValueError("sampling a mixture block needs an rng")
        return float(sample_mixture(approach.mixture, 1, rng)[0])
    if registry is None:
        raise ValueError("a regression block needs the registry catalog")
    return _regression_hours(registry, job)


def _block_draws(
    model: BlockModel,
    job: JobSpec,
    count: int,
    registry: ModelRegistry,
    rng: np.random.Generator,
) -> np.ndarray:
    approach = model.approach
    if isinstance(approach, MixtureApproach):
        return sample_mixture(approach.mixture, count, rng)
    value = block_duration(model, job, Mode.EXPECTATION, registry)
    return np.full(count, value)


@dataclass
class Prediction:
    scenario: Scenario
    point_hours: float
    per_block: dict[str, float]
    samples: Optional[np.ndarray] = None

    def quantiles(self) -> Optional[dict[str, float]]:
        if self.samples is None:
            return None
        p10, p50, p90 = np.quantile(self.samples, [0.1, 0.5, 0.9])
        return {"p10": float(p10), "p50": float(p50), "p90": float(p90)}

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario.label,
            "point_hours": self.point_hours,
            "per_block": self.per_block,
            "quantiles": self.quantiles(),
        }


def predict_berth_stay(
    registry: ModelRegistry,
    job: JobSpec,
    scenario: Scenario,
    mode: Mode = Mode.EXPECTATION,
    mc_count: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    """Predict the stay from the scenario anchor to the last disconnection.

    Expectation mode sums block expectations; a parallel element
    contributes the max of its members' expectations.  Sample mode draws
    ``mc_count`` full-chain replicates (parallel elements take the max per
    replicate) and reports their mean, deterministically per seed.
    """
    chain = build_chain(job, scenario)

    if mode is Mode.EXPECTATION:
        per_block: dict[str, float] = {}
        for element in chain.elements:
            values = [
                block_duration(registry.block_model(job.terminal, kind), job, mode, registry)
                for kind in element
            ]
            per_block[element_label(element)] = max(values)
        return Prediction(
            scenario=scenario,
            point_hours=float(sum(per_block.values())),
            per_block=per_block,
        )

    if mc_count < 1:
        raise ValueError("Monte Carlo mode needs mc_count >= 1")
    if rng is None:
        raise ValueError("Monte Carlo mode needs a seeded rng")
    per_block = {}
    totals = np.zeros(mc_count)
    for element in chain.elements:
        draws = [
            _block_draws(registry.block_model(job.terminal, kind), job, mc_count, registry, rng)
            for kind in element
        ]
        contribution = draws[0]
        for extra in draws[1:]:
            contribution = np.maximum(contribution, extra)
        per_block[element_label(element)] = float(np.mean(contribution))
        totals = totals + contribution
    return Prediction(
        scenario=scenario,
        point_hours=float(sum(per_block.values())),
        per_block=per_block,
        samples=totals,
    )


def extract_block_samples(
    portcalls: Sequence[Portcall],
) -> dict[tuple[str, BlockKind], list[tuple[float, int]]]:
    """Observed per-block durations as (hours, cargo_count) per terminal.

    Paired blocks span commence to complete; the arm gap blocks span from
    the preceding chain milestone to their single closing event.
    """
    out: dict[tuple[str, BlockKind], list[tuple[float, int]]] = {}

    def push(terminal: str, kind: BlockKind, start, end, n: int) -> None:
        if start is None or end is None or end < start:
            return
        hours = (end - start).total_seconds() / 3600.0
        out.setdefault((terminal, kind), []).append((hours, n))

    paired = {
        BlockKind.SAMPLING: (StandardEvent.COMMENCE_SAMPLING, StandardEvent.SAMPLE_PASS),
        BlockKind.SAFETY_MEETING: (
            StandardEvent.COMMENCE_SAFETY_MEETING,
            StandardEvent.COMPLETE_SAFETY_MEETING,
        ),
        BlockKind.TANK_INSPECTION: (
            StandardEvent.COMMENCE_TANK_INSPECTION,
            StandardEvent.COMPLETE_TANK_INSPECTION,
        ),
        BlockKind.UBO: (
            StandardEvent.COMMENCE_ULLAGE_BEFORE_OPERATION,
            StandardEvent.COMPLETE_ULLAGE_BEFORE_OPERATION,
        ),
        BlockKind.SHIFTING: (StandardEvent.COMMENCE_SHIFTING, StandardEvent.COMPLETE_SHIFTING),
        BlockKind.PREWASH: (StandardEvent.COMMENCE_PREWASH, StandardEvent.COMPLETE_PREWASH),
        BlockKind.STRIPPING: (
            StandardEvent.COMMENCE_STRIPPING_TO_SHORE,
            StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
        ),
    }

    for pc in portcalls:
        if pc.incomplete:
            continue
        n = max(1, len(pc.intervals()))
        first = lambda kind: min(pc.timestamps_of(kind), default=None)  # noqa: E731
        last = lambda kind: max(pc.timestamps_of(kind), default=None)  # noqa: E731

        for kind, (commence, complete) in paired.items():
            push(pc.terminal, kind, first(commence), first(complete), n)
        push(
            pc.terminal,
            BlockKind.CARGO_ARM_CONNECTION,
            first(StandardEvent.COMPLETE_ULLAGE_BEFORE_OPERATION),
            first(StandardEvent.CARGO_ARM_CONNECTED),
            n,
        )
        push(
            pc.terminal,
            BlockKind.CARGO_ARM_DISCONNECTION,
            last(StandardEvent.COMPLETE_OPERATION),
            first(StandardEvent.CARGO_ARM_DISCONNECTED),
            n,
        )
        push(
            pc.terminal,
            BlockKind.PREWASH_ARM_CONNECTION,
            first(StandardEvent.CARGO_ARM_DISCONNECTED),
            first(StandardEvent.MARPOL_PREWASH_ARM_CONNECTED),
            n,
        )
        wash_end = [
            ts
            for kind in (
                StandardEvent.COMPLETE_PREWASH,
                StandardEvent.COMPLETE_STRIPPING_TO_SHORE,
            )
            for ts in pc.timestamps_of(kind)
        ]
        push(
            pc.terminal,
            BlockKind.PREWASH_ARM_DISCONNECTION,
            max(wash_end) if wash_end else None,
            first(StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED),
            n,
        )
    return out


@dataclass
class FitReport:
    """How each block model came out of fitting."""

    blocks: list[dict] = field(default_factory=list)
    coverage: Optional[CoverageReport] = None

    def to_json_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "catalog": self.coverage.to_json_dict() if self.coverage else None,
        }


def _iqr_fence(values: np.ndarray, k: float = 3.0) -> np.ndarray:
    """Keep values inside [Q1 - k*IQR, Q3 + k*IQR].

    Block durations are physical spans of at most hours; a single
    undetected timestamp error yields a weeks-long sample that would
    otherwise dictate the fitted bounds.
    """
    q1, q3 = np.quantile(values, [0.25, 0.75])
    iqr = q3 - q1
    return values[(values >= q1 - k * iqr) & (values <= q3 + k * iqr)]


#: Component counts used when fitting mixtures to logs, matching the
#: modality of the historical per-block distributions.
DEFAULT_COMPONENT_COUNTS = {
    BlockKind.SAMPLING: 3,
    BlockKind.TANK_INSPECTION: 3,
    BlockKind.UBO: 3,
    BlockKind.CARGO_ARM_CONNECTION: 2,
    BlockKind.CARGO_ARM_DISCONNECTION: 3,
    BlockKind.PREWASH_ARM_CONNECTION: 4,
    BlockKind.PREWASH_ARM_DISCONNECTION: 1,
}


def fit_registry(
    portcalls: Sequence[Portcall],
    seed: int,
    mdgs_samples: int = 1000,
    max_iter: int = 500,
    alpha: float = 0.05,
    component_counts: Optional[dict[BlockKind, int]] = None,
    min_block_samples: int = 8,
    floor_hours: float = 0.1,
    dither_minutes: float = 1.0,
    accept_margin: float = 2.0,
) -> tuple[ModelRegistry, FitReport]:
    """Fit every block model observable in the cleaned portcalls.

    Mixture blocks go through the KS-gated fit (a non-converged fit keeps
    its best mixture and is noted in the report); shifting, prewash and
    stripping get per-cargo proportional constants; the safety meeting is
    the fixed one-hour block; cargo operations use the regression catalog.

    Logged durations are quantized to the recording resolution, which
    leaves the KS statistic a grid-alignment floor no smooth mixture can
    get under; ``dither_minutes`` spreads each observation uniformly over
    its quantization cell (seeded, zero-mean) before fitting.
    """
    counts = dict(DEFAULT_COMPONENT_COUNTS)
    counts.update(component_counts or {})
    registry = ModelRegistry(floor_hours=floor_hours)
    report = FitReport()

    catalog, coverage = fit_catalog(portcalls)
    registry.catalog = catalog
    report.coverage = coverage

    samples = extract_block_samples(portcalls)
    terminals = sorted({terminal for terminal, _ in samples} | {pc.terminal for pc in portcalls})
    seed_seq = np.random.SeedSequence(seed)
    block_seeds = {
        (terminal, kind): child
        for (terminal, kind), child in zip(
            [(t, k) for t in terminals for k in MIXTURE_BLOCKS],
            seed_seq.spawn(len(terminals) * len(MIXTURE_BLOCKS)),
        )
    }

    for terminal in terminals:
        models: dict[BlockKind, BlockModel] = {}
        if any(key.terminal == terminal for key in catalog):
            models[BlockKind.CARGO_OPERATION] = BlockModel(
                BlockKind.CARGO_OPERATION, RegressionApproach()
            )

        for kind in (BlockKind.SAFETY_MEETING, *PROPORTIONAL_BLOCKS, *MIXTURE_BLOCKS):
            observed = samples.get((terminal, kind), [])
            if len(observed) < min_block_samples:
                continue
            if kind is BlockKind.SAFETY_MEETING:
                models[kind] = BlockModel(kind, FixedApproach(SAFETY_MEETING_HOURS))
                continue
            if kind in PROPORTIONAL_BLOCKS:
                per_cargo = _iqr_fence(np.array([hours / n for hours, n in observed]))
                if per_cargo.size < min_block_samples:
                    continue
                models[kind] = BlockModel(kind, ProportionalApproach(float(per_cargo.mean())))
                continue
            values = _iqr_fence(np.array([hours for hours, _ in observed]))
            if values.size < min_block_samples:
                continue
            dither_seq, fit_seq = block_seeds[(terminal, kind)].spawn(2)
            if dither_minutes > 0:
                half = dither_minutes / 120.0
                dither = np.random.default_rng(dither_seq).uniform(-half, half, values.size)
                values = np.maximum(values + dither, 1e-6)
            lb, ub = float(values.min()), float(values.max())
            if ub <= lb:
                ub = lb + max(1e-3, abs(lb) * 1e-3)
            cfg = FitConfig(
                n=counts[kind],
                lb=lb,
                ub=ub,
                s=mdgs_samples,
                alpha=alpha,
                max_iter=max_iter,
                rng_seed=int(fit_seq.generate_state(1)[0]),
                accept_margin=accept_margin,
            )
            try:
                fit = fit_mdgs(values, cfg)
                mixture, ks, iterations, converged = fit.mixture, fit.ks, fit.iterations, True
            except FitNotConverged as exc:
                mixture, ks, iterations, converged = (
                    exc.best_mixture,
                    exc.best_ks,
                    max_iter,
                    False,
                )
            models[kind] = BlockModel(kind, MixtureApproach(mixture))
            report.blocks.append(
                {
                    "terminal": terminal,
                    "block": kind.value,
                    "n_samples": len(observed),
                    "converged": converged,
                    "iterations": iterations,
                    "ks_d": ks.d,
                    "ks_d_crit": ks.d_crit,
                    "ks_p": ks.p,
                }
            )
        if models:
            registry.blocks[terminal] = models
    return registry, report
