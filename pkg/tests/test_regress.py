from __future__ import annotations

import math

import numpy as np
import pytest

from berthstay.core import CargoGroup, ShipmentType
from berthstay.regress import (
    CatalogKey,
    InsufficientData,
    LinearModel,
    SingularDesign,
    fit_catalog,
    fit_linear,
    predict_duration,
)

from conftest import portcall, rec
from berthstay.core import StandardEvent


class TestFitLinear:
    def test_collinear_points_exact(self):
        model = fit_linear([(0, 1), (1, 3), (2, 5)])
        assert model.a == pytest.approx(2.0, abs=1e-12)
        assert model.b == pytest.approx(1.0, abs=1e-12)

    def test_hand_solved_normal_equations(self):
        # X'X = [[3, 3], [3, 5]], X'Y = [4, 7] for these points
        model = fit_linear([(0, 0), (1, 1), (2, 3)])
        assert model.a == pytest.approx(1.5, abs=1e-12)
        assert model.b == pytest.approx(-1 / 6, abs=1e-12)

    def test_singular_design(self):
        with pytest.raises(SingularDesign):
            fit_linear([(5, 2), (5, 3)])

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            fit_linear([(5, 2)])

    def test_negative_sizes_rejected(self):
        with pytest.raises(ValueError):
            fit_linear([(-1, 2), (3, 4)])

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            sizes = rng.uniform(10, 5000, 40)
            ys = 0.004 * sizes + 1.2 + rng.normal(0, 0.5, 40)
            model = fit_linear(list(zip(sizes, ys)))
            residuals = ys - (model.a * sizes + model.b)
            scale = max(1.0, float(np.sum(np.abs(ys))))
            assert abs(math.fsum(residuals)) <= 1e-9 * scale
            assert abs(math.fsum(residuals * sizes)) <= 1e-9 * scale * max(1.0, sizes.max())

    def test_affine_equivariance_power_of_two_exact(self):
        rng = np.random.default_rng(5)
        sizes = rng.uniform(10, 5000, 30)
        ys = rng.uniform(1, 30, 30)
        base = fit_linear(list(zip(sizes, ys)))
        doubled = fit_linear(list(zip(sizes, 2.0 * ys)))
        assert doubled.a == 2.0 * base.a
        assert doubled.b == 2.0 * base.b

    def test_affine_equivariance_general_scale(self):
        rng = np.random.default_rng(6)
        sizes = rng.uniform(10, 5000, 30)
        ys = rng.uniform(1, 30, 30)
        base = fit_linear(list(zip(sizes, ys)))
        scaled = fit_linear(list(zip(sizes, 3.7 * ys)))
        assert scaled.a == pytest.approx(3.7 * base.a, rel=1e-12)
        assert scaled.b == pytest.approx(3.7 * base.b, rel=1e-12)

    def test_zero_noise_round_trip(self):
        sizes = np.arange(25, 5025, 25, dtype=float)
        ys = 0.004 * sizes + 1.2
        model = fit_linear(list(zip(sizes, ys)))
        assert model.a == pytest.approx(0.004, rel=1e-9)
        assert model.b == pytest.approx(1.2, rel=1e-9)


class TestPredictDuration:
    def test_plain_line(self):
        assert predict_duration(LinearModel(a=2, b=1, n_train=3), 3) == 7

    def test_floor_clamp(self):
        assert predict_duration(LinearModel(a=0.001, b=-1, n_train=3), 100) == 0.1

    def test_negative_size_rejected(self):
        with pytest.raises(ValueError):
            predict_duration(LinearModel(a=2, b=1, n_train=3), -1)

    def test_round_trip_against_generating_line(self):
        sizes = np.arange(25, 5025, 25, dtype=float)
        model = fit_linear(list(zip(sizes, 0.004 * sizes + 1.2)))
        assert predict_duration(model, 2000) == pytest.approx(9.2, abs=1e-9)


class TestFitCatalog:
    def _portcall(self, pc_id, cargo, size, hours, shipment=ShipmentType.DISCHARGING):
        start = "2018-01-10 10:00"
        whole = int(hours)
        minutes = int(round((hours - whole) * 60))
        end = f"2018-01-10 {10 + whole:02d}:{minutes:02d}"
        return portcall(
            [
                rec(StandardEvent.COMMENCE_OPERATION, start, pc_id=pc_id, cargo=cargo,
                    size=size, shipment=shipment),
                rec(StandardEvent.COMPLETE_OPERATION, end, pc_id=pc_id, cargo=cargo,
                    size=size, shipment=shipment),
            ]
        )

    def test_key_with_enough_data_is_fitted(self):
        pcs = [
            self._portcall(f"P{i}", "150N", 500 + 250 * i, 2.0 + 0.5 * i) for i in range(5)
        ]
        catalog, report = fit_catalog(pcs)
        key = CatalogKey("T", CargoGroup.G1, ShipmentType.DISCHARGING)
        assert key in catalog
        assert key in report.fitted
        assert catalog[key].n_train == 5

    def test_key_with_single_operation_is_reported(self):
        pcs = [self._portcall("P0", "EHC 50", 800, 3.0)]
        catalog, report = fit_catalog(pcs)
        key = CatalogKey("T", CargoGroup.G2, ShipmentType.DISCHARGING)
        assert key not in catalog
        assert any(k == key for k, _, _ in report.skipped)

    def test_empty_input(self):
        catalog, report = fit_catalog([])
        assert catalog == {}
        assert report.fitted == [] and report.skipped == []
