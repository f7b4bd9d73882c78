from __future__ import annotations

from datetime import datetime

import pytest

from berthstay.core import (
    CargoRef,
    EventTag,
    Portcall,
    ShipmentType,
    StandardEvent,
    StandardRecord,
)


def ts(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%d %H:%M")


def rec(
    event: StandardEvent,
    when: str,
    pc_id: str = "P1",
    terminal: str = "T",
    shipment: ShipmentType = ShipmentType.DISCHARGING,
    cargo: str | None = None,
    size: float | None = None,
    arm: int | None = None,
) -> StandardRecord:
    if event.tag is EventTag.CARGO and cargo is None:
        cargo = "150N"
    if cargo is not None and size is None:
        size = 1000.0
    return StandardRecord(
        portcall_id=pc_id,
        terminal=terminal,
        event=event,
        timestamp=ts(when),
        shipment=shipment,
        cargo=CargoRef.of(cargo) if cargo else None,
        size_mt=size if cargo else None,
        arm_id=arm,
    )


def portcall(records) -> Portcall:
    return Portcall.from_records(records)


@pytest.fixture
def op_pair():
    def build(start: str, end: str, pc_id="P1", cargo="150N", size=1000.0, arm=None,
              shipment=ShipmentType.DISCHARGING):
        return [
            rec(StandardEvent.COMMENCE_OPERATION, start, pc_id=pc_id, cargo=cargo,
                size=size, arm=arm, shipment=shipment),
            rec(StandardEvent.COMPLETE_OPERATION, end, pc_id=pc_id, cargo=cargo,
                size=size, arm=arm, shipment=shipment),
        ]

    return build
