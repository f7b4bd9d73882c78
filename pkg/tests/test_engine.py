from __future__ import annotations

import numpy as np
import pytest

from berthstay.core import (
    BlockKind,
    CargoGroup,
    CargoRef,
    OperationMode,
    ShipmentType,
)
from berthstay.engine import (
    BlockModel,
    FixedApproach,
    JobSpec,
    MixtureApproach,
    Mode,
    ModelRegistry,
    ModelUnavailable,
    NotApplicable,
    ProportionalApproach,
    RegressionApproach,
    Scenario,
    aggregate_cargo_ops,
    block_duration,
    build_chain,
    element_label,
    fit_registry,
    predict_berth_stay,
)
from berthstay.mdgs import reference_block_mixtures, truncated_mean
from berthstay.regress import CatalogKey, LinearModel
from berthstay.synth import default_ground_truth, generate_portcalls


def reference_registry(terminal="TERMINAL_A") -> ModelRegistry:
    registry = ModelRegistry()
    models = {
        BlockKind.SAFETY_MEETING: BlockModel(BlockKind.SAFETY_MEETING, FixedApproach(1.0)),
        BlockKind.SHIFTING: BlockModel(BlockKind.SHIFTING, ProportionalApproach(0.5)),
        BlockKind.PREWASH: BlockModel(BlockKind.PREWASH, ProportionalApproach(1.0)),
        BlockKind.STRIPPING: BlockModel(BlockKind.STRIPPING, ProportionalApproach(0.75)),
        BlockKind.CARGO_OPERATION: BlockModel(BlockKind.CARGO_OPERATION, RegressionApproach()),
    }
    for kind, mixture in reference_block_mixtures().items():
        models[kind] = BlockModel(kind, MixtureApproach(mixture))
    registry.blocks[terminal] = models
    for group, line in ((CargoGroup.G1, (0.004, 1.2)), (CargoGroup.G2, (0.006, 1.5))):
        for shipment in ShipmentType:
            key = CatalogKey(terminal, group, shipment)
            registry.catalog[key] = LinearModel(a=line[0], b=line[1], n_train=50, key=key)
    return registry


def job(
    shipment=ShipmentType.DISCHARGING,
    cargoes=((("150N"), 2000.0),),
    mode=None,
    needs_shifting=False,
    available=None,
):
    refs = tuple((CargoRef.of(name), size) for name, size in cargoes)
    if mode is None:
        mode = OperationMode.SINGLE if len(refs) == 1 else OperationMode.SEQUENTIAL
    return JobSpec(
        terminal="TERMINAL_A",
        shipment=shipment,
        cargoes=refs,
        operation_mode=mode,
        needs_shifting=needs_shifting,
        available_blocks=available,
    )


class TestBlockDuration:
    def test_safety_meeting_is_one_hour(self):
        model = BlockModel(BlockKind.SAFETY_MEETING, FixedApproach(1.0))
        assert block_duration(model, job(), Mode.EXPECTATION) == 1.0

    def test_shifting_scales_with_cargo_count(self):
        model = BlockModel(BlockKind.SHIFTING, ProportionalApproach(0.5))
        three = job(cargoes=(("150N", 500.0), ("500N", 700.0), ("EHC 50", 900.0)))
        assert block_duration(model, three, Mode.EXPECTATION) == 1.5

    def test_cad_expectation_within_bounds(self):
        mixture = reference_block_mixtures()[BlockKind.CARGO_ARM_DISCONNECTION]
        model = BlockModel(BlockKind.CARGO_ARM_DISCONNECTION, MixtureApproach(mixture))
        value = block_duration(model, job(), Mode.EXPECTATION)
        assert 0.03 <= value <= 2.0
        assert value == truncated_mean(mixture)

    def test_regression_block_needs_catalog(self):
        model = BlockModel(BlockKind.CARGO_OPERATION, RegressionApproach())
        registry = reference_registry()
        value = block_duration(model, job(), Mode.EXPECTATION, registry=registry)
        assert value == pytest.approx(0.004 * 2000 + 1.2)

    def test_missing_regression_key(self):
        registry = reference_registry()
        registry.catalog.clear()
        with pytest.raises(ModelUnavailable, match="G1"):
            predict_berth_stay(registry, job(), Scenario.S3_COMMENCE_OPERATION)


class TestAggregate:
    def test_sequential_sums(self):
        assert aggregate_cargo_ops([2, 3], OperationMode.SEQUENTIAL) == 5

    def test_concurrent_takes_max(self):
        assert aggregate_cargo_ops([2, 3], OperationMode.CONCURRENT) == 3

    def test_single_value(self):
        assert aggregate_cargo_ops([4], OperationMode.SINGLE) == 4
        assert aggregate_cargo_ops([4], OperationMode.CONCURRENT) == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_cargo_ops([], OperationMode.SEQUENTIAL)


class TestBuildChain:
    def test_s4_loading_single_is_just_disconnection(self):
        plan = build_chain(job(shipment=ShipmentType.LOADING), Scenario.S4_COMPLETE_OPERATION)
        assert plan.elements == ((BlockKind.CARGO_ARM_DISCONNECTION,),)

    def test_s4_discharging_with_prewash(self):
        plan = build_chain(job(), Scenario.S4_COMPLETE_OPERATION)
        assert plan.elements == (
            (BlockKind.CARGO_ARM_DISCONNECTION,),
            (BlockKind.PREWASH_ARM_CONNECTION,),
            (BlockKind.PREWASH, BlockKind.STRIPPING),
            (BlockKind.PREWASH_ARM_DISCONNECTION,),
        )

    def test_full_s1_discharging_chain(self):
        plan = build_chain(job(needs_shifting=True), Scenario.S1_ALL_FAST)
        assert plan.blocks() == [
            BlockKind.SAMPLING,
            BlockKind.SAFETY_MEETING,
            BlockKind.TANK_INSPECTION,
            BlockKind.UBO,
            BlockKind.CARGO_ARM_CONNECTION,
            BlockKind.SHIFTING,
            BlockKind.CARGO_OPERATION,
            BlockKind.CARGO_ARM_DISCONNECTION,
            BlockKind.PREWASH_ARM_CONNECTION,
            BlockKind.PREWASH,
            BlockKind.STRIPPING,
            BlockKind.PREWASH_ARM_DISCONNECTION,
        ]

    def test_loading_drops_sampling_and_prewash(self):
        plan = build_chain(job(shipment=ShipmentType.LOADING), Scenario.S1_ALL_FAST)
        blocks = plan.blocks()
        assert BlockKind.SAMPLING not in blocks
        assert BlockKind.PREWASH not in blocks
        assert blocks[-1] is BlockKind.CARGO_ARM_DISCONNECTION

    def test_s2_without_sampling_support_not_applicable(self):
        available = frozenset(BlockKind) - {BlockKind.SAMPLING}
        with pytest.raises(NotApplicable):
            build_chain(job(available=available), Scenario.S2_SAMPLE_PASS)

    def test_s2_loading_not_applicable(self):
        with pytest.raises(NotApplicable):
            build_chain(job(shipment=ShipmentType.LOADING), Scenario.S2_SAMPLE_PASS)

    def test_chain_nesting_is_suffix(self):
        for the_job in (
            job(),
            job(shipment=ShipmentType.LOADING),
            job(needs_shifting=True),
            job(cargoes=(("150N", 100.0), ("EHC 110", 50.0))),
        ):
            plans = {}
            for scenario in Scenario:
                try:
                    plans[scenario] = build_chain(the_job, scenario).elements
                except NotApplicable:
                    continue
            s1 = plans[Scenario.S1_ALL_FAST]
            for scenario, elements in plans.items():
                assert elements == s1[len(s1) - len(elements):]


class TestPredict:
    def test_s4_loading_equals_cad_truncated_mean(self):
        registry = reference_registry()
        prediction = predict_berth_stay(
            registry, job(shipment=ShipmentType.LOADING), Scenario.S4_COMPLETE_OPERATION
        )
        expected = truncated_mean(
            reference_block_mixtures()[BlockKind.CARGO_ARM_DISCONNECTION]
        )
        assert prediction.point_hours == pytest.approx(expected, abs=1e-9)

    def test_same_seed_same_prediction(self):
        registry = reference_registry()
        a = predict_berth_stay(
            registry, job(), Scenario.S1_ALL_FAST, Mode.SAMPLE, 500, np.random.default_rng(7)
        )
        b = predict_berth_stay(
            registry, job(), Scenario.S1_ALL_FAST, Mode.SAMPLE, 500, np.random.default_rng(7)
        )
        assert np.array_equal(a.samples, b.samples)
        assert a.point_hours == b.point_hours

    def test_s1_strictly_above_s3(self):
        registry = reference_registry()
        s1 = predict_berth_stay(registry, job(), Scenario.S1_ALL_FAST).point_hours
        s3 = predict_berth_stay(registry, job(), Scenario.S3_COMMENCE_OPERATION).point_hours
        assert s1 > s3

    def test_expectations_monotone_across_scenarios(self):
        registry = reference_registry()
        values = [
            predict_berth_stay(registry, job(), scenario).point_hours for scenario in Scenario
        ]
        assert values == sorted(values, reverse=True)

    def test_point_equals_per_block_sum(self):
        registry = reference_registry()
        prediction = predict_berth_stay(
            registry, job(needs_shifting=True), Scenario.S1_ALL_FAST,
            Mode.SAMPLE, 2000, np.random.default_rng(3),
        )
        assert prediction.point_hours == pytest.approx(
            sum(prediction.per_block.values()), rel=1e-9
        )

    def test_mc_totals_respect_lower_bounds(self):
        registry = reference_registry()
        the_job = job()
        prediction = predict_berth_stay(
            registry, the_job, Scenario.S1_ALL_FAST, Mode.SAMPLE, 1000, np.random.default_rng(5)
        )
        mixtures = reference_block_mixtures()
        plan = build_chain(the_job, Scenario.S1_ALL_FAST)
        floor = 0.0
        for element in plan.elements:
            values = []
            for kind in element:
                if kind in mixtures:
                    values.append(mixtures[kind].lb)
                elif kind is BlockKind.SAFETY_MEETING:
                    values.append(1.0)
                elif kind is BlockKind.CARGO_OPERATION:
                    values.append(0.004 * 2000 + 1.2)
                else:
                    values.append(0.0)
            floor += max(values) if len(element) > 1 else values[0]
        assert np.all(prediction.samples >= floor - 1e-9)

    def test_mc_mean_tracks_expectation(self):
        registry = reference_registry()
        exp = predict_berth_stay(registry, job(), Scenario.S1_ALL_FAST).point_hours
        mc = predict_berth_stay(
            registry, job(), Scenario.S1_ALL_FAST, Mode.SAMPLE, 20000, np.random.default_rng(11)
        )
        se = float(np.std(mc.samples, ddof=1) / np.sqrt(mc.samples.size))
        assert abs(float(np.mean(mc.samples)) - exp) <= 3 * se

    def test_prediction_json_shape(self):
        registry = reference_registry()
        payload = predict_berth_stay(registry, job(), Scenario.S1_ALL_FAST).to_json_dict()
        assert payload["scenario"] == "S1"
        assert payload["quantiles"] is None
        assert "Prewash+Stripping" in payload["per_block"]


class TestRegistryJson:
    def test_round_trip(self):
        registry = reference_registry()
        again = ModelRegistry.from_json_dict(registry.to_json_dict())
        assert again.to_json_dict() == registry.to_json_dict()
        assert again.available_blocks("TERMINAL_A") == registry.available_blocks("TERMINAL_A")

    def test_unknown_block_raises(self):
        registry = ModelRegistry()
        with pytest.raises(ModelUnavailable):
            registry.block_model("X", BlockKind.SAMPLING)


class TestFitRegistry:
    def test_fit_covers_observed_blocks(self):
        truth = default_ground_truth()
        pcs, _ = generate_portcalls(truth, 250, np.random.default_rng(8))
        registry, report = fit_registry(pcs, seed=3, mdgs_samples=600)
        available = registry.available_blocks("TERMINAL_A")
        assert BlockKind.CARGO_OPERATION in available
        assert BlockKind.SAFETY_MEETING in available
        assert BlockKind.CARGO_ARM_DISCONNECTION in available
        assert registry.catalog
        assert all(entry["converged"] for entry in report.blocks)

    def test_element_label(self):
        assert element_label((BlockKind.PREWASH, BlockKind.STRIPPING)) == "Prewash+Stripping"
