"""Berth-stay prediction engine for tanker terminals."""

from .core import (
    BlockKind,
    CargoGroup,
    CargoRef,
    OperationMode,
    Portcall,
    ShipmentType,
    StandardEvent,
    StandardRecord,
)
from .engine import JobSpec, Mode, ModelRegistry, Scenario, predict_berth_stay
from .mdgs import TruncatedMixture, fit_mdgs, ks_two_sample

__version__ = "0.1.0"

__all__ = [
    "BlockKind",
    "CargoGroup",
    "CargoRef",
    "JobSpec",
    "Mode",
    "ModelRegistry",
    "OperationMode",
    "Portcall",
    "Scenario",
    "ShipmentType",
    "StandardEvent",
    "StandardRecord",
    "TruncatedMixture",
    "fit_mdgs",
    "ks_two_sample",
    "predict_berth_stay",
    "__version__",
]
