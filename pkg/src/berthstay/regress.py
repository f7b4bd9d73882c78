"""Least-squares cargo-operation duration models.

One straight line ``duration = a * size + b`` per (terminal, cargo group,
shipment type), solved through the 2x2 normal equations in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    BerthstayError,
    CargoGroup,
    Portcall,
    ShipmentType,
)


class InsufficientData(BerthstayError):
    """Fewer than two training points."""


class SingularDesign(BerthstayError):
    """All sizes equal; the slope is unidentifiable."""


class CatalogKey(NamedTuple):
    terminal: str
    group: CargoGroup
    shipment: ShipmentType

    def __str__(self) -> str:
        return f"{self.terminal}/{self.group.value}/{self.shipment.value}"


@dataclass(frozen=True)
class DesignMatrix:
    """Size column plus the same column behind a constant-1 column."""

    x0: np.ndarray
    x1: np.ndarray

    @classmethod
    def from_sizes(cls, sizes: Sequence[float]) -> "DesignMatrix":
        x0 = np.asarray(sizes, dtype=float)
        if np.any(x0 < 0):
            raise ValueError("sizes must be non-negative")
        return cls(x0=x0, x1=np.column_stack([np.ones_like(x0), x0]))


@dataclass(frozen=True)
class LinearModel:
    """Fitted line: a in hours per metric ton, b in hours."""

    a: float
    b: float
    n_train: int
    key: Optional[CatalogKey] = None

    def to_json_dict(self) -> dict:
        out = {"a": self.a, "b": self.b, "n_train": self.n_train}
        if self.key is not None:
            out.update(
                terminal=self.key.terminal,
                group=self.key.group.value,
                shipment=self.key.shipment.value,
            )
        return out


def fit_linear(
    points: Sequence[tuple[float, float]], key: Optional[CatalogKey] = None
) -> LinearModel:
    """Solve (b, a) = (X1'X1)^-1 X1'Y on (size_mt, duration_hours) pairs."""
    if len(points) < 2:
        raise InsufficientData(f"need at least 2 points, got {len(points)}")
    sizes = [float(x) for x, _ in points]
    if len(set(sizes)) < 2:
        raise SingularDesign("all cargo sizes are equal; cannot identify a slope")
    design = DesignMatrix.from_sizes(sizes)
    ys = [float(y) for _, y in points]

    n = float(len(points))
    sx = math.fsum(sizes)
    sxx = math.fsum(x * x for x in sizes)
    sy = math.fsum(ys)
    sxy = math.fsum(x * y for x, y in zip(sizes, ys))
    det = n * sxx - sx * sx
    a = (n * sxy - sx * sy) / det
    b = (sxx * sy - sx * sxy) / det
    assert design.x1.shape[0] == len(points)
    return LinearModel(a=a, b=b, n_train=len(points), key=key)


def predict_duration(model: LinearModel, size_mt: float, floor: float = 0.1) -> float:
    """Predicted operation hours, clamped to a minimum positive duration."""
    if size_mt < 0:
        raise ValueError(f"size_mt must be non-negative, got {size_mt}")
    return max(model.a * size_mt + model.b, floor)


@dataclass
class CoverageReport:
    """Which catalog keys were fitted and which lacked data."""

    fitted: list[CatalogKey] = field(default_factory=list)
    skipped: list[tuple[CatalogKey, str, int]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "fitted": [str(k) for k in self.fitted],
            "skipped": [
                {"key": str(k), "reason": reason, "n": n} for k, reason, n in self.skipped
            ],
        }


def fit_catalog(
    portcalls: Sequence[Portcall],
) -> tuple[dict[CatalogKey, LinearModel], CoverageReport]:
    """One model per (terminal, group, shipment) with enough data.

    Durations come from each cargo's own commence/complete operation pair.
    Incomplete portcalls are skipped; keys that cannot be fitted are listed
    in the coverage report rather than silently dropped.
    """
    points: dict[CatalogKey, list[tuple[float, float]]] = {}
    for pc in portcalls:
        if pc.incomplete:
            continue
        shipment = pc.shipment
        for iv in pc.intervals():
            key = CatalogKey(pc.terminal, iv.cargo.group, shipment)
            points.setdefault(key, []).append((iv.size_mt, iv.duration_hours))

    catalog: dict[CatalogKey, LinearModel] = {}
    report = CoverageReport()
    for key in sorted(points, key=str):
        pts = points[key]
        try:
            catalog[key] = fit_linear(pts, key=key)
            report.fitted.append(key)
        except (InsufficientData, SingularDesign) as exc:
            report.skipped.append((key, str(exc), len(pts)))
    return catalog, report
