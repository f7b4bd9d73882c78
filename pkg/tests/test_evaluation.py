from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from berthstay.core import ShipmentType
from berthstay.engine import Scenario, fit_registry
from berthstay.evaluation import (
    BenchmarkEntry,
    BenchmarkTable,
    accuracy,
    compute_metrics,
    error_histogram,
    evaluate_scenarios,
    prediction_error,
    weighted_benchmark,
    within_band,
)
from berthstay.synth import (
    MINIMAL_EVENTS,
    TerminalProfile,
    default_ground_truth,
    generate_portcalls,
)
from berthstay.regress import CatalogKey


class TestPredictionError:
    def test_zero(self):
        assert prediction_error(5, 5) == 0

    def test_sign_convention(self):
        assert prediction_error(4, 5) == -1

    def test_benchmark_scale_arithmetic(self):
        assert prediction_error(20.13, 18.68) == pytest.approx(1.45)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            prediction_error(float("nan"), 1.0)


class TestComputeMetrics:
    def test_all_zero(self):
        m = compute_metrics([0, 0, 0])
        assert (m.median, m.mean, m.sigma, m.mse, m.mae) == (0, 0, 0, 0, 0)

    def test_hand_arithmetic(self):
        m = compute_metrics([1, 2, 3])
        assert m.median == 2
        assert m.mean == 2
        assert m.sigma == pytest.approx(1.0)
        assert m.mse == pytest.approx(14 / 3)
        assert m.mae == 2
        assert m.n == 3

    def test_single_observation_has_no_sigma(self):
        m = compute_metrics([1.5])
        assert m.sigma is None
        assert m.n == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics([])

    def test_even_count_median_is_midpoint(self):
        assert compute_metrics([1, 2, 3, 4]).median == 2.5

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_identity_mse_mean_sigma(self, errors):
        m = compute_metrics(errors)
        expected = m.mean**2 + ((m.n - 1) / m.n) * m.sigma**2
        assert m.mse == pytest.approx(expected, rel=1e-9, abs=1e-9)


class TestHistoricalConsistency:
    """The published per-cargo-group error metrics satisfy the sample-sigma
    identity with the matching operation counts, pinning the convention."""

    def test_g1_cell(self):
        n, mean, sigma = 99, 0.028330514, 1.040935438
        mse = mean**2 + ((n - 1) / n) * sigma**2
        assert mse == pytest.approx(1.073404288, abs=0.0005)

    def test_g2_cell(self):
        n, mean, sigma = 41, 0.206535282, 0.956142992
        mse = mean**2 + ((n - 1) / n) * sigma**2
        assert mse == pytest.approx(0.934568453, abs=0.0005)


class TestWithinBand:
    def test_direct_count(self):
        assert within_band([0.5, -0.9, 1.5], 1) == pytest.approx(2 / 3)

    def test_all_inside(self):
        assert within_band([0, 0], 1) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            within_band([], 1)

    @given(
        st.lists(st.floats(-20, 20), min_size=1, max_size=40),
        st.floats(0.1, 5),
        st.floats(0.1, 5),
    )
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_band_width(self, errors, h1, h2):
        lo, hi = sorted((h1, h2))
        assert within_band(errors, lo) <= within_band(errors, hi)


class TestWeightedBenchmark:
    def test_terminal_pair(self):
        table = BenchmarkTable(
            (BenchmarkEntry("B-Loading", 101, 15.39), BenchmarkEntry("B-Discharging", 34, 22.52))
        )
        assert weighted_benchmark(table) == pytest.approx(17.18, abs=0.01)

    def test_three_segments(self):
        table = BenchmarkTable(
            (
                BenchmarkEntry("A-Discharging", 140, 20.13),
                BenchmarkEntry("B-Loading", 101, 15.39),
                BenchmarkEntry("B-Discharging", 34, 22.52),
            )
        )
        assert weighted_benchmark(table) == pytest.approx(18.68, abs=0.01)

    def test_single_entry(self):
        assert weighted_benchmark(BenchmarkTable((BenchmarkEntry("X", 7, 12.0),))) == 12.0

    def test_counts_must_be_positive(self):
        with pytest.raises(ValueError):
            BenchmarkEntry("X", 0, 1.0)


class TestAccuracy:
    def test_best_terminal_cell(self):
        assert accuracy(0.238986, 20.13) == pytest.approx(98.81, abs=0.05)

    def test_perfect(self):
        assert accuracy(0, 5) == 100

    def test_worst_published_cell(self):
        assert accuracy(6.536111, 17.18) == pytest.approx(61.93, abs=0.10)

    def test_floored_at_zero(self):
        assert accuracy(100, 1) == 0

    def test_bad_benchmark(self):
        with pytest.raises(ValueError):
            accuracy(1, 0)

    def test_strictly_decreasing_in_mae(self):
        values = [accuracy(mae, 20.0) for mae in (0.1, 0.5, 1.0, 3.0)]
        assert values == sorted(values, reverse=True)


class TestEvaluateScenarios:
    def _fitted(self, count=250, seed=5):
        truth = default_ground_truth()
        truth.op_noise_sigma = 0.5
        pcs, _ = generate_portcalls(truth, count, np.random.default_rng(seed))
        registry, _ = fit_registry(pcs, seed=11, mdgs_samples=800)
        return registry, pcs

    def test_self_consistency_zero_mean(self):
        registry, pcs = self._fitted()
        report = evaluate_scenarios(registry, pcs)
        for cell in report.cells:
            m = cell.metrics
            if m is None or m.n < 10 or m.sigma is None or m.sigma == 0:
                continue
            assert abs(m.mean) <= 3 * m.sigma / np.sqrt(m.n), (
                cell.scenario, cell.shipment, cell.multiplicity, m)

    def test_sampling_less_terminal_reports_na(self):
        truth = default_ground_truth("TERMINAL_B")
        truth.terminals = (TerminalProfile("TERMINAL_B", recorded_events=MINIMAL_EVENTS),)
        truth.lines = {
            CatalogKey("TERMINAL_B", key.group, key.shipment): line
            for key, line in truth.lines.items()
        }
        pcs, _ = generate_portcalls(truth, 120, np.random.default_rng(3))
        registry, _ = fit_registry(pcs, seed=2, mdgs_samples=600)
        report = evaluate_scenarios(registry, pcs)
        s2_cells = [c for c in report.cells if c.scenario is Scenario.S2_SAMPLE_PASS]
        assert s2_cells
        assert all(cell.is_na() for cell in s2_cells)
        s1_cells = [
            c for c in report.cells
            if c.scenario is Scenario.S1_ALL_FAST and c.shipment is ShipmentType.DISCHARGING
        ]
        assert any(c.errors for c in s1_cells)

    def test_single_portcall_cell_has_no_sigma(self):
        registry, pcs = self._fitted(count=80, seed=6)
        single = [pc for pc in pcs if not pc.incomplete][:1]
        report = evaluate_scenarios(registry, single)
        populated = [c for c in report.cells if c.errors]
        assert populated
        for cell in populated:
            assert cell.metrics.n == 1
            assert cell.metrics.sigma is None

    def test_csv_shape(self):
        registry, pcs = self._fitted(count=60, seed=7)
        report = evaluate_scenarios(registry, pcs)
        buffer = io.StringIO()
        report.to_csv(buffer)
        lines = buffer.getvalue().splitlines()
        assert lines[0] == "scenario,terminal,shipment,multiplicity,median,mean,sigma,mse,mae,n"
        assert len(lines) == len(report.cells) + 1


class TestErrorHistogram:
    def test_half_hour_bins_aligned(self):
        rows = error_histogram([-0.4, 0.2, 0.3, 1.4], bin_width=0.5)
        assert rows[0][0] == -0.5
        assert rows[-1][1] == 1.5
        assert sum(count for _, _, count in rows) == 4

    def test_empty(self):
        assert error_histogram([]) == []
