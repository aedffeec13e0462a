# Copyright 2026 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""
Unit tests for the :mod:`advprop.propagation` module.
"""
import warnings

import numpy as np
import pytest

from advprop import learner
from advprop.attack_model import (
    AttackVector,
    CardAction,
    CardBundle,
    Slot,
    apply_attack,
    sample_component,
)
from advprop.feature_engine import compute_features, parse_plan, recompute_row
from advprop.propagation import (
    Assignment,
    EstimatorAssignment,
    EstimatorConfig,
    Estimators,
    EstimatorThresholds,
    LookupTable,
    ProfileQuality,
    RegressionEstimator,
    assign_estimators,
    build_lookup,
    build_regression_set,
    load_estimators,
    propagate,
    quality_frame,
    regression_input_names,
    save_estimators,
    train_estimators,
)
from advprop.utils import MS_PER_DAY, MS_PER_HOUR, make_rng
from conftest import SPLIT_BASIS_PLAN, make_frame

ATTACKS = [
    AttackVector(amount_scale=0.05),
    AttackVector(amount_scale=4.0),
    AttackVector(network_change="net09", geo_change=(52.52, 13.405)),
    AttackVector(time_shift_ms=-5 * MS_PER_HOUR),
    AttackVector(time_shift_ms=2 * MS_PER_DAY, amount_scale=0.3),
    AttackVector(card_action=CardAction.RESET),
    AttackVector(
        time_shift_ms=-MS_PER_DAY,
        amount_scale=2.5,
        card_action=CardAction.SWITCH,
        card_bundle=CardBundle("amex", "missing"),
    ),
]


@pytest.fixture(scope="module")
def split_enriched(tiny_dataset):
    return compute_features(tiny_dataset, parse_plan(SPLIT_BASIS_PLAN))


def constant_regression(plan, profiles, values):
    """A regression estimator that predicts the same profile values for every input."""
    model = learner.GbdtModel(
        learner.Objective.MULTI_SQUARED_ERROR, 0.1, tuple(values), regression_input_names(plan)
    )
    return RegressionEstimator(tuple(profiles), model)


class TestExactPropagation:
    """Test propagation with every profile recomputed exactly."""

    @pytest.mark.parametrize("attack", ATTACKS, ids=lambda a: a.describe())
    def test_matches_recomputation(self, tiny_enriched, exact_propagator, attack):
        """Test that propagated features equal a recomputation of the
        perturbed row over the full history."""
        for i in tiny_enriched.positives()[:5]:
            row = tiny_enriched.row(int(i))
            attacked = exact_propagator(row, attack)

            perturbed = apply_attack(row.base, attack, exact_propagator.estimators.fresh_card_id)
            expected = recompute_row(tiny_enriched, tiny_enriched.plan, perturbed)

            assert attacked.base == perturbed
            assert np.allclose(attacked.features, expected.features, rtol=1e-9, atol=1e-9)

    def test_random_attacks(self, tiny_enriched, exact_propagator):
        """Test exact propagation against recomputation for random attacks
        drawn slot by slot from the dataset statistics."""
        plan = tiny_enriched.plan
        statistics = exact_propagator.statistics
        fresh_card_id = exact_propagator.estimators.fresh_card_id
        rng = make_rng(21)

        worst = 0.0
        for _ in range(1000):
            row = tiny_enriched.row(int(rng.integers(len(tiny_enriched.frame))))
            attack = AttackVector()
            while attack.is_empty:
                for slot in Slot:
                    if rng.uniform() < 0.5:
                        value = sample_component(slot, row.base, statistics, rng)
                        attack = attack.with_slot(slot, value)

            attacked = exact_propagator(row, attack)
            perturbed = apply_attack(row.base, attack, fresh_card_id)
            expected = recompute_row(tiny_enriched, plan, perturbed).features
            error = np.abs(attacked.features - expected) / np.maximum(1.0, np.abs(expected))
            worst = max(worst, float(error.max()))
        assert worst <= 1e-9

    def test_reset_idempotent(self, tiny_enriched, exact_propagator):
        """Test that resetting an already reset card changes nothing."""
        reset = AttackVector(card_action=CardAction.RESET)
        for i in tiny_enriched.positives()[:5]:
            once = exact_propagator(tiny_enriched.row(int(i)), reset)
            twice = exact_propagator(once, reset)
            assert twice.base == once.base
            assert np.array_equal(twice.features, once.features)

    @pytest.mark.parametrize("assignment", [Assignment.EXACT, Assignment.DISCARDED])
    def test_reset_overrides_shift_and_amount(self, tiny_enriched, exact_propagator, assignment):
        """Test that the card profiles after a reset only depend on the final
        amount, whatever the time shift and the profile estimators."""
        plan = tiny_enriched.plan
        card = [
            plan.position[s.name]
            for s in plan.profiles()
            if plan.basis_position[s.basis] in plan.card_bases()
        ]
        assert card
        assignments = EstimatorAssignment(tuple((s.name, assignment) for s in plan.profiles()))
        shifted = AttackVector(
            time_shift_ms=-3 * MS_PER_HOUR, amount_scale=0.4, card_action=CardAction.RESET
        )
        reset = AttackVector(amount_scale=0.4, card_action=CardAction.RESET)

        for i in tiny_enriched.positives()[:5]:
            row = tiny_enriched.row(int(i))
            attacked = propagate(row, shifted, assignments, exact_propagator.estimators)
            expected = exact_propagator(row, reset)
            assert np.allclose(attacked.features[card], expected.features[card], rtol=1e-12)

            counts = [plan.position[s.name] for s in plan.profiles() if s.aggregation == "count"]
            counts = [p for p in counts if p in card]
            assert np.all(attacked.features[counts] == 1.0)

    @pytest.mark.parametrize("assignment", [Assignment.LOOKUP, Assignment.DISCARDED])
    def test_amount_exact_for_any_estimator(self, tiny_enriched, exact_propagator, assignment):
        """Test that amount changes are propagated exactly whatever estimator
        handles the time shifts of a profile."""
        plan = tiny_enriched.plan
        assignments = EstimatorAssignment(tuple((s.name, assignment) for s in plan.profiles()))
        attack = AttackVector(amount_scale=3.5, network_change="net01")
        for i in tiny_enriched.positives()[:5]:
            row = tiny_enriched.row(int(i))
            attacked = propagate(row, attack, assignments, exact_propagator.estimators)
            expected = exact_propagator(row, attack)
            assert np.allclose(attacked.features, expected.features, rtol=1e-12, atol=1e-12)

    def test_purity(self, tiny_enriched, exact_propagator):
        """Test that propagation leaves the clean row untouched."""
        row = tiny_enriched.row(int(tiny_enriched.positives()[0]))
        before = row.copy()
        exact_propagator(row, ATTACKS[-1])
        assert row.base == before.base
        assert np.array_equal(row.features, before.features)
        assert np.array_equal(row.stats, before.stats)

    def test_empty_attack(self, tiny_enriched, exact_propagator):
        """Test that the empty attack returns a copy of the clean row."""
        row = tiny_enriched.row(0)
        attacked = exact_propagator(row, AttackVector())
        assert attacked.base == row.base
        assert np.array_equal(attacked.features, row.features)
        assert attacked.features is not row.features

    def test_amount_maximum(self, small_plan):
        """Test the window maximum when the largest amount is scaled down."""
        enriched = compute_features(
            make_frame([(0, 10.0, 1), (10, 50.0, 1), (20, 30.0, 1)]), small_plan
        )
        estimators = Estimators(small_plan, 2, index=enriched.profile_index)
        assignment = EstimatorAssignment.all_exact(small_plan)

        attacked = propagate(enriched.row(1), AttackVector(amount_scale=0.1), assignment, estimators)
        m = dict(zip(small_plan.names, attacked.features))
        assert m["max_amount_card_1h"] == pytest.approx(10.0)
        assert m["sum_amount_card_1h"] == pytest.approx(15.0)
        assert m["mean_amount_card_1h"] == pytest.approx(7.5)
        assert m["std_amount_card_1h"] == pytest.approx(2.5)

    def test_missing_index(self, tiny_enriched):
        """Test that exact time shifts need the history index."""
        plan = tiny_enriched.plan
        estimators = Estimators(plan, 10_000)
        with pytest.raises(ValueError, match="profile index"):
            propagate(
                tiny_enriched.row(0),
                AttackVector(time_shift_ms=MS_PER_HOUR),
                EstimatorAssignment.all_exact(plan),
                estimators,
            )


class TestEstimatedPropagation:
    """Test propagation through lookup tables and the regression model."""

    def test_lookup_and_regression(self, split_enriched):
        """Test that a time shift sets the estimated profiles and the amount
        change is applied on top of them."""
        plan = split_enriched.plan
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.REGRESSION), ("sum_amount_merchant_24h", Assignment.LOOKUP))
        )
        table = LookupTable("sum_amount_merchant_24h", MS_PER_HOUR, 0, (123.0,))
        estimators = Estimators(
            plan,
            10_000,
            {"sum_amount_merchant_24h": table},
            constant_regression(plan, ["count_card_1h"], [2.6]),
        )
        row = split_enriched.row(int(split_enriched.positives()[0]))

        shifted = propagate(row, AttackVector(time_shift_ms=MS_PER_HOUR), assignment, estimators)
        assert shifted.features[plan.position["count_card_1h"]] == pytest.approx(2.6)
        assert shifted.features[plan.position["sum_amount_merchant_24h"]] == 123.0
        assert np.all(np.isnan(shifted.stats))

        both = propagate(
            row, AttackVector(time_shift_ms=MS_PER_HOUR, amount_scale=2.0), assignment, estimators
        )
        assert both.features[plan.position["sum_amount_merchant_24h"]] == pytest.approx(
            123.0 + row.base.amount
        )
        assert both.features[plan.position["log_amount"]] == pytest.approx(np.log(2 * row.base.amount))

    def test_regression_clamps(self, split_enriched):
        """Test that predicted counts are at least one."""
        plan = split_enriched.plan
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.REGRESSION), ("sum_amount_merchant_24h", Assignment.EXACT))
        )
        estimators = Estimators(
            plan,
            10_000,
            regression=constant_regression(plan, ["count_card_1h"], [-3.0]),
            index=split_enriched.profile_index,
        )
        row = split_enriched.row(5)
        attacked = propagate(row, AttackVector(time_shift_ms=-MS_PER_HOUR), assignment, estimators)
        assert attacked.features[plan.position["count_card_1h"]] == 1.0

        expected = recompute_row(split_enriched, plan, apply_attack(row.base, AttackVector(time_shift_ms=-MS_PER_HOUR), 0))
        position = plan.position["sum_amount_merchant_24h"]
        assert attacked.features[position] == pytest.approx(expected.features[position])

    def test_reset_after_estimate(self, split_enriched):
        """Test that a card reset overrides an estimated card profile."""
        plan = split_enriched.plan
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.REGRESSION), ("sum_amount_merchant_24h", Assignment.EXACT))
        )
        estimators = Estimators(
            plan,
            10_000,
            regression=constant_regression(plan, ["count_card_1h"], [7.0]),
            index=split_enriched.profile_index,
        )
        attack = AttackVector(time_shift_ms=MS_PER_HOUR, card_action=CardAction.RESET)
        attacked = propagate(split_enriched.row(5), attack, assignment, estimators)
        assert attacked.features[plan.position["count_card_1h"]] == 1.0
        assert attacked.base.card_id == 10_000

    def test_discarded_unchanged(self, split_enriched):
        """Test that discarded profiles keep their clean value."""
        plan = split_enriched.plan
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.DISCARDED), ("sum_amount_merchant_24h", Assignment.EXACT))
        )
        estimators = Estimators(plan, 10_000, index=split_enriched.profile_index)
        row = split_enriched.row(7)
        attacked = propagate(row, AttackVector(time_shift_ms=3 * MS_PER_HOUR), assignment, estimators)
        position = plan.position["count_card_1h"]
        assert attacked.features[position] == row.features[position]

    def test_missing_estimator(self, split_enriched):
        """Test that a missing lookup table raises an error."""
        plan = split_enriched.plan
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.EXACT), ("sum_amount_merchant_24h", Assignment.LOOKUP))
        )
        estimators = Estimators(plan, 10_000, index=split_enriched.profile_index)
        with pytest.raises(ValueError, match="Missing lookup table"):
            propagate(split_enriched.row(0), AttackVector(time_shift_ms=MS_PER_HOUR), assignment, estimators)


class TestAssignment:
    """Test choosing estimators from their quality."""

    @pytest.mark.parametrize(
        "volume, r2, identity_r2, residual_range, expected",
        [
            (80.0, float("nan"), 0.0, float("nan"), Assignment.LOOKUP),
            (3.0, 0.9, 0.2, 4.0, Assignment.REGRESSION),
            (3.0, 0.4, 0.2, 4.0, Assignment.DISCARDED),
            (3.0, 0.9, 0.95, 4.0, Assignment.DISCARDED),
            (3.0, 0.9, 0.2, 12.0, Assignment.DISCARDED),
        ],
    )
    def test_gate(self, volume, r2, identity_r2, residual_range, expected):
        """Test the quality gate with the default thresholds."""
        quality = [ProfileQuality("p", volume, r2, identity_r2, residual_range)]
        assert assign_estimators(quality)["p"] is expected

    def test_without_time_shifts(self):
        """Test that every profile is exact when attacks cannot shift time."""
        quality = [ProfileQuality("p", 1.0, 0.0, 0.9, 50.0)]
        assert assign_estimators(quality, EstimatorThresholds(), temporal=False)["p"] is Assignment.EXACT

    def test_classifier_features(self, split_enriched):
        """Test that discarded profiles are excluded from the classifier."""
        assignment = EstimatorAssignment(
            (("count_card_1h", Assignment.DISCARDED), ("sum_amount_merchant_24h", Assignment.LOOKUP))
        )
        assert assignment.classifier_features(split_enriched.plan) == [
            "log_amount",
            "sum_amount_merchant_24h",
        ]
        with pytest.raises(KeyError):
            assignment["log_amount"]


class TestLookup:
    """Test the time-binned lookup tables."""

    def test_empty_bins(self, small_plan):
        """Test that empty bins take the nearest filled bin, the earlier one on ties."""
        enriched = compute_features(
            make_frame([(0, 10.0, 1), (5, 30.0, 2), (120, 50.0, 3), (240, 70.0, 4)]), small_plan
        )
        table = build_lookup(enriched, "sum_amount_card_1h", MS_PER_HOUR)
        assert table.values == (20.0, 20.0, 50.0, 50.0, 70.0)

        origin = table.origin_ms
        assert table.query(origin - MS_PER_DAY) == 20.0
        assert table.query(origin + 3 * MS_PER_HOUR) == 50.0
        assert table.query(origin + MS_PER_DAY) == 70.0

    def test_invalid(self, tiny_enriched):
        """Test that only profiles of non-empty splits have tables."""
        with pytest.raises(ValueError, match="not a profile"):
            build_lookup(tiny_enriched, "log_amount")
        with pytest.raises(ValueError, match="empty split"):
            build_lookup(tiny_enriched.take([]), "count_card_1h")


class TestTraining:
    """Test training and storing the estimators."""

    CONFIG = EstimatorConfig(
        thresholds=EstimatorThresholds(volume_threshold=20.0),
        n_rows=40,
        n_perturbations=2,
        params=learner.TrainParams(n_rounds=5, max_depth=2, min_child_samples=5, early_stopping_patience=5),
    )

    @pytest.fixture(scope="class")
    def trained(self, tiny_enriched):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return train_estimators(tiny_enriched, self.CONFIG, seed=1)

    def test_regression_set(self, tiny_enriched):
        """Test the shapes of the regression set."""
        profiles = ["count_card_1h", "std_amount_card_1h"]
        X, Y = build_regression_set(tiny_enriched, tiny_enriched.plan, profiles, 3, make_rng(0), n_rows=10)
        assert X.shape == (30, len(tiny_enriched.plan) + 4)
        assert Y.shape == (30, 2)
        assert np.all(Y[:, 0] >= 1)

    def test_assignment(self, tiny_enriched, trained):
        """Test that every profile is assigned and high-volume profiles use lookups."""
        assignment, estimators, quality = trained
        profiles = [spec.name for spec in tiny_enriched.plan.profiles()]
        assert [name for name, _ in assignment.items] == profiles
        assert [q.profile for q in quality] == profiles
        for q in quality:
            if q.volume >= 20.0:
                assert assignment[q.profile] is Assignment.LOOKUP
                assert q.profile in estimators.lookups
            else:
                assert assignment[q.profile] is not Assignment.LOOKUP
        estimators.check(assignment)
        assert estimators.fresh_card_id == tiny_enriched.frame["card_id"].max() + 1

        frame = quality_frame(quality, assignment)
        assert list(frame.columns[:2]) == ["profile", "assignment"]
        assert len(frame) == len(profiles)

    def test_deterministic(self, tiny_enriched, trained):
        """Test that equal seeds give equal estimators."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            again = train_estimators(tiny_enriched, self.CONFIG, seed=1)
        assert again[0] == trained[0]
        assert again[1].lookups == trained[1].lookups

    def test_without_time_shifts(self, tiny_enriched):
        """Test that no estimators are trained when time shifts are disabled."""
        config = EstimatorConfig(temporal=False)
        assignment, estimators, _ = train_estimators(tiny_enriched, config)
        assert assignment == EstimatorAssignment.all_exact(tiny_enriched.plan)
        assert estimators.lookups == {}
        assert estimators.regression is None

    def test_file_roundtrip(self, tiny_enriched, trained, tmpdir):
        """Test that stored estimators propagate exactly as the trained ones."""
        assignment, estimators, _ = trained
        index = tiny_enriched.profile_index
        estimators = Estimators(
            estimators.plan, estimators.fresh_card_id, estimators.lookups, estimators.regression, index
        )
        filepath = save_estimators(assignment, estimators, tmpdir.join("estimators.yaml"))
        loaded_assignment, loaded = load_estimators(filepath, tiny_enriched.plan, index)
        assert loaded_assignment == assignment

        row = tiny_enriched.row(int(tiny_enriched.positives()[0]))
        attack = AttackVector(time_shift_ms=-2 * MS_PER_HOUR, amount_scale=0.5)
        expected = propagate(row, attack, assignment, estimators)
        actual = propagate(row, attack, loaded_assignment, loaded)
        assert np.array_equal(actual.features, expected.features)

    def test_file_wrong_plan(self, trained, split_enriched, tmpdir):
        """Test that estimators of another plan are rejected."""
        assignment, estimators, _ = trained
        filepath = save_estimators(assignment, estimators, tmpdir.join("estimators.yaml"))
        with pytest.raises(ValueError, match="do not match"):
            load_estimators(filepath, split_enriched.plan)

    @pytest.mark.parametrize("params", [{"n_rows": 0}, {"holdout_fraction": 1.0}, {"bin_width_ms": 0}])
    def test_invalid_config(self, params):
        """Test that invalid settings are rejected."""
        with pytest.raises(ValueError):
            EstimatorConfig(**params)
