"""Prediction-error metrics and scenario evaluation reports.

Signed errors (predicted minus actual), the median/mean/sigma/MSE/MAE
metric suite with the sample (N-1) standard deviation, count-weighted
benchmark durations, the accuracy percentage derived from them, and the
per-scenario evaluation grid over held-out portcalls.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, TextIO, Union

import numpy as np

from .core import (
    DEFAULT_PREWASH_POLICY,
    CargoGroup,
    OperationMode,
    Portcall,
    ShipmentType,
    StandardEvent,
)
from .engine import (
    JobSpec,
    ModelRegistry,
    ModelUnavailable,
    NotApplicable,
    Scenario,
    predict_berth_stay,
)


def prediction_error(predicted: float, actual: float) -> float:
    """Signed error in hours; positive means over-prediction."""
    if not (math.isfinite(predicted) and math.isfinite(actual)):
        raise ValueError("prediction error needs finite inputs")
    return predicted - actual


@dataclass(frozen=True)
class Metrics:
    """Median, mean, sample sigma, MSE and MAE over an error vector.

    sigma uses the N-1 divisor and is absent for a single observation;
    MSE and MAE are plain means of squared/absolute errors, so
    mse == mean^2 + ((n-1)/n) * sigma^2 holds as an identity.
    """

    median: float
    mean: float
    sigma: Optional[float]
    mse: float
    mae: float
    n: int


def compute_metrics(errors: Sequence[float]) -> Metrics:
    values = np.asarray(errors, dtype=float)
    if values.size == 0:
        raise ValueError("cannot compute metrics over an empty error vector")
    return Metrics(
        median=float(np.median(values)),
        mean=float(np.mean(values)),
        sigma=float(np.std(values, ddof=1)) if values.size > 1 else None,
        mse=float(np.mean(values**2)),
        mae=float(np.mean(np.abs(values))),
        n=int(values.size),
    )


def within_band(errors: Sequence[float], h: float) -> float:
    """Fraction of errors with |error| <= h."""
    if h <= 0:
        raise ValueError("band half-width must be positive")
    values = np.asarray(errors, dtype=float)
    if values.size == 0:
        raise ValueError("within_band needs a non-empty error vector")
    return float(np.mean(np.abs(values) <= h))


@dataclass(frozen=True)
class BenchmarkEntry:
    label: str
    operation_count: int
    mean_hours: float

    def __post_init__(self):
        if self.operation_count < 1:
            raise ValueError("benchmark entries need a count of at least 1")


@dataclass(frozen=True)
class BenchmarkTable:
    entries: tuple[BenchmarkEntry, ...]


def weighted_benchmark(table: BenchmarkTable) -> float:
    """Operation-count-weighted mean historical stay duration."""
    if not table.entries:
        raise ValueError("benchmark table is empty")
    total = sum(e.operation_count for e in table.entries)
    if total == 0:
        raise ValueError("benchmark table has zero total count")
    return sum(e.operation_count * e.mean_hours for e in table.entries) / total


def accuracy(mae: float, benchmark: float) -> float:
    """Accuracy percentage implied by an MAE against a benchmark duration."""
    if benchmark <= 0:
        raise ValueError("benchmark must be positive")
    if mae < 0:
        raise ValueError("MAE cannot be negative")
    return max(0.0, (1.0 - mae / benchmark) * 100.0)


_END_EVENTS = (
    StandardEvent.CARGO_ARM_DISCONNECTED,
    StandardEvent.MARPOL_PREWASH_ARM_DISCONNECTED,
)


def actual_stay_hours(pc: Portcall, scenario: Scenario) -> Optional[float]:
    """Observed hours from the scenario anchor to the last arm disconnection."""
    if scenario is Scenario.S1_ALL_FAST:
        anchors = pc.timestamps_of(StandardEvent.ALL_FAST)
        anchor = min(anchors) if anchors else None
    elif scenario is Scenario.S2_SAMPLE_PASS:
        anchors = pc.timestamps_of(StandardEvent.SAMPLE_PASS)
        anchor = max(anchors) if anchors else None
    elif scenario is Scenario.S3_COMMENCE_OPERATION:
        anchors = pc.timestamps_of(StandardEvent.COMMENCE_OPERATION)
        anchor = min(anchors) if anchors else None
    else:
        anchors = pc.timestamps_of(StandardEvent.COMPLETE_OPERATION)
        anchor = max(anchors) if anchors else None
    ends = [ts for kind in _END_EVENTS for ts in pc.timestamps_of(kind)]
    if anchor is None or not ends:
        return None
    end = max(ends)
    if end < anchor:
        return None
    return (end - anchor).total_seconds() / 3600.0


def job_from_portcall(
    pc: Portcall,
    registry: ModelRegistry,
    prewash_policy: Mapping[CargoGroup, bool] = DEFAULT_PREWASH_POLICY,
) -> JobSpec:
    """Reconstruct the job a historical portcall answered."""
    intervals = pc.intervals()
    if not intervals:
        raise ValueError(f"portcall {pc.portcall_id} has no completed operations")
    return JobSpec(
        terminal=pc.terminal,
        shipment=pc.shipment,
        cargoes=tuple((iv.cargo, iv.size_mt) for iv in intervals),
        operation_mode=pc.operation_mode,
        needs_shifting=pc.has_event(StandardEvent.COMMENCE_SHIFTING),
        prewash_policy=prewash_policy,
        available_blocks=registry.available_blocks(pc.terminal),
    )


@dataclass
class EvaluationCell:
    """One (scenario, terminal, shipment, multiplicity) grid cell."""

    scenario: Scenario
    terminal: str
    shipment: ShipmentType
    multiplicity: str  # "Single" | "Multiple"
    errors: list[float] = field(default_factory=list)
    not_applicable: bool = False
    skipped: int = 0

    @property
    def metrics(self) -> Optional[Metrics]:
        return compute_metrics(self.errors) if self.errors else None

    def is_na(self) -> bool:
        return self.not_applicable and not self.errors


_CSV_COLUMNS = [
    "scenario",
    "terminal",
    "shipment",
    "multiplicity",
    "median",
    "mean",
    "sigma",
    "mse",
    "mae",
    "n",
]


@dataclass
class EvaluationReport:
    cells: list[EvaluationCell]

    def to_csv(self, stream: Union[TextIO, str, Path]) -> None:
        if isinstance(stream, (str, Path)):
            with open(stream, "w", newline="", encoding="utf-8") as fh:
                self.to_csv(fh)
                return
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for cell in self.cells:
            base = [cell.scenario.label, cell.terminal, cell.shipment.value, cell.multiplicity]
            if cell.is_na():
                writer.writerow(base + ["N.A."] * 5 + [0])
            elif not cell.errors:
                writer.writerow(base + [""] * 5 + [0])
            else:
                m = cell.metrics
                writer.writerow(
                    base
                    + [
                        repr(m.median),
                        repr(m.mean),
                        "" if m.sigma is None else repr(m.sigma),
                        repr(m.mse),
                        repr(m.mae),
                        m.n,
                    ]
                )

    def to_json_dict(self) -> dict:
        rows = []
        for cell in self.cells:
            m = cell.metrics
            rows.append(
                {
                    "scenario": cell.scenario.label,
                    "terminal": cell.terminal,
                    "shipment": cell.shipment.value,
                    "multiplicity": cell.multiplicity,
                    "na": cell.is_na(),
                    "metrics": None
                    if m is None
                    else {
                        "median": m.median,
                        "mean": m.mean,
                        "sigma": m.sigma,
                        "mse": m.mse,
                        "mae": m.mae,
                        "n": m.n,
                    },
                    "skipped": cell.skipped,
                }
            )
        return {"cells": rows}

    def to_json(self, stream: Union[TextIO, str, Path]) -> None:
        text = json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"
        if isinstance(stream, (str, Path)):
            Path(stream).write_text(text)
        else:
            stream.write(text)


def evaluate_scenarios(
    registry: ModelRegistry,
    portcalls: Sequence[Portcall],
    prewash_policy: Mapping[CargoGroup, bool] = DEFAULT_PREWASH_POLICY,
    scenarios: Sequence[Scenario] = tuple(Scenario),
) -> EvaluationReport:
    """Expectation-mode prediction errors for every grid cell.

    Cells whose scenario cannot be anchored at that terminal/shipment come
    back marked N.A.; portcalls lacking the anchor or end event are
    skipped and counted.
    """
    cells: dict[tuple[Scenario, str, ShipmentType, str], EvaluationCell] = {}

    def cell_for(scenario: Scenario, pc: Portcall) -> EvaluationCell:
        multiplicity = "Single" if pc.operation_mode is OperationMode.SINGLE else "Multiple"
        key = (scenario, pc.terminal, pc.shipment, multiplicity)
        if key not in cells:
            cells[key] = EvaluationCell(scenario, pc.terminal, pc.shipment, multiplicity)
        return cells[key]

    for pc in portcalls:
        if pc.incomplete:
            continue
        try:
            job = job_from_portcall(pc, registry, prewash_policy)
        except ValueError:
            continue
        for scenario in scenarios:
            cell = cell_for(scenario, pc)
            try:
                predicted = predict_berth_stay(registry, job, scenario).point_hours
            except (NotApplicable, ModelUnavailable):
                cell.not_applicable = True
                continue
            actual = actual_stay_hours(pc, scenario)
            if actual is None:
                cell.skipped += 1
                continue
            cell.errors.append(prediction_error(predicted, actual))

    ordered = sorted(
        cells.values(),
        key=lambda c: (c.scenario.value, c.terminal, c.shipment.value, c.multiplicity),
    )
    return EvaluationReport(cells=ordered)


def error_histogram(
    errors: Sequence[float], bin_width: float = 0.5
) -> list[tuple[float, float, int]]:
    """Contiguous (bin_left, bin_right, count) rows over the error range,
    with bin edges aligned to multiples of the bin width."""
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    values = np.asarray(errors, dtype=float)
    if values.size == 0:
        return []
    lo = math.floor(float(values.min()) / bin_width)
    hi = math.floor(float(values.max()) / bin_width)
    rows = []
    for k in range(lo, hi + 1):
        left = k * bin_width
        right = (k + 1) * bin_width
        count = int(np.sum((values >= left) & (values < right)))
        rows.append((left, right, count))
    return rows
