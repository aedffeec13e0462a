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
Propagation of raw-space attacks into engineered features.

A perturbation is applied in four stages: categorical and geo changes,
the time shift, the amount change and finally the card reset. Profiles
move under a time shift through the estimator assigned to them: an exact
recomputation, a lookup table of mean values per time bin, or a
multi-output regression model.
"""
import dataclasses
import enum
import logging
import warnings

import numpy as np
import pandas as pd
import yaml

from advprop import learner
from advprop.attack_model import CardAction, apply_attack, sample_time_shift
from advprop.evaluation import r2_per_output
from advprop.feature_engine import (
    STAT_COUNT,
    EnrichedRow,
    FeatureKind,
    aggregate,
    recompute_row,
    transaction_columns,
)
from advprop.utils import MS_PER_HOUR, make_rng

logger = logging.getLogger(__name__)

ESTIMATORS_FORMAT = "advprop-estimators"
ESTIMATORS_VERSION = 1

RAW_INPUT_FIELDS = ("amount", "latitude", "longitude")


class Assignment(enum.Enum):
    EXACT = "exact"
    LOOKUP = "lookup"
    REGRESSION = "regression"
    DISCARDED = "discarded"


@dataclasses.dataclass(frozen=True)
class EstimatorAssignment:
    """The estimator of every profile feature, as ``(name, Assignment)``
    pairs in plan order."""

    items: tuple

    @classmethod
    def all_exact(cls, plan):
        return cls(tuple((spec.name, Assignment.EXACT) for spec in plan.profiles()))

    def __getitem__(self, name):
        for profile, assignment in self.items:
            if profile == name:
                return assignment
        raise KeyError(name)

    def names(self, assignment):
        """Profiles with the given assignment, in plan order."""
        return [name for name, a in self.items if a is assignment]

    def classifier_features(self, plan):
        """Plan features the classifier may use: all but the discarded profiles."""
        discarded = set(self.names(Assignment.DISCARDED))
        return [name for name in plan.names if name not in discarded]


@dataclasses.dataclass(frozen=True)
class EstimatorThresholds:
    """Quality gate of the profile estimators.

    Args:
        volume_threshold (float): mean window event count from which a
            profile is estimated with a lookup table
        r_min (float): smallest held-out R² of a regression estimator
        q_max (float): largest held-out residual range, in units of the
            profile's standard deviation
    """

    volume_threshold: float = 50.0
    r_min: float = 0.5
    q_max: float = 10.0


@dataclasses.dataclass(frozen=True)
class ProfileQuality:
    """Held-out quality of the estimators of one profile."""

    profile: str
    volume: float
    r2: float
    identity_r2: float
    residual_range: float
    lookup_r2: float = float("nan")


@dataclasses.dataclass(frozen=True)
class LookupTable:
    """Mean value of one profile per time bin of the training horizon.

    Args:
        profile (str): the profile feature
        bin_width_ms (int): width of a bin
        origin_ms (int): start of the first bin
        values (tuple[float]): mean profile value of each bin
    """

    profile: str
    bin_width_ms: int
    origin_ms: int
    values: tuple

    def query(self, timestamp):
        """Value of the bin containing ``timestamp``, clamped to the table."""
        i = (int(timestamp) - self.origin_ms) // self.bin_width_ms
        return self.values[min(max(i, 0), len(self.values) - 1)]


def build_lookup(enriched, profile, bin_width=MS_PER_HOUR):
    """Builds the lookup table of a profile from enriched (training) rows.

    Empty bins take the value of the nearest non-empty bin, the earlier one
    on ties.

    Args:
        enriched (EnrichedDataset): the rows to average over
        profile (str): the profile feature
        bin_width (int): the bin width in milliseconds

    Returns:
        LookupTable: the table

    Raises:
        ValueError: if the profile is not in the plan or there are no rows
    """
    plan = enriched.plan
    spec = plan.specs[plan.position[profile]] if profile in plan.position else None
    if spec is None or spec.kind is not FeatureKind.PROFILE:
        raise ValueError(f"{profile} is not a profile of the feature plan.")
    if len(enriched) == 0:
        raise ValueError("Cannot build a lookup table from an empty split.")

    timestamps = enriched.frame["timestamp"].to_numpy(dtype=np.int64)
    column = enriched.features[:, enriched.plan.position[profile]]
    origin = (int(timestamps.min()) // bin_width) * bin_width
    bins = (timestamps - origin) // bin_width

    sums = np.bincount(bins, weights=column)
    counts = np.bincount(bins)
    filled = np.flatnonzero(counts)
    means = sums[filled] / counts[filled]

    # Nearest non-empty bin for every bin
    positions = np.arange(len(counts))
    after = np.minimum(np.searchsorted(filled, positions, side="left"), len(filled) - 1)
    before = np.maximum(after - 1, 0)
    use_before = np.abs(filled[before] - positions) <= np.abs(filled[after] - positions)
    nearest = np.where(use_before, before, after)

    return LookupTable(profile, int(bin_width), origin, tuple(float(v) for v in means[nearest]))


@dataclasses.dataclass(frozen=True)
class RegressionEstimator:
    """Multi-output model predicting low-volume profiles after a time shift.

    The input of a row is its raw numeric fields, its unperturbed engineered
    features and the signed shift in milliseconds.
    """

    profiles: tuple
    model: learner.GbdtModel

    def predict(self, inputs):
        return self.model.predict(np.atleast_2d(inputs))


def regression_input_names(plan):
    return tuple(f"raw_{f}" for f in RAW_INPUT_FIELDS) + plan.names + ("delta_ms",)


def regression_inputs(row, delta_ms):
    """Input vector of the regression estimator for one row and shift."""
    raw = [float(getattr(row.base, f)) for f in RAW_INPUT_FIELDS]
    return np.concatenate([raw, row.features, [float(delta_ms)]])


def _shift_pairs(dataset, plan, profiles, n_perturbations_per_row, rng, n_rows=None):
    positions = np.arange(len(dataset))
    if n_rows is not None and n_rows < len(dataset):
        positions = np.sort(rng.choice(len(dataset), size=n_rows, replace=False))
    columns = [plan.position[name] for name in profiles]

    inputs, targets, timestamps = [], [], []
    for i in positions:
        row = dataset.row(int(i))
        for _ in range(n_perturbations_per_row):
            delta = sample_time_shift(rng)
            moved = row.base.replace(timestamp=row.base.timestamp + delta)
            shifted = recompute_row(dataset, plan, moved)
            inputs.append(regression_inputs(row, delta))
            targets.append(shifted.features[columns])
            timestamps.append(moved.timestamp)

    width = len(plan) + len(RAW_INPUT_FIELDS) + 1
    return (
        np.asarray(inputs, dtype=np.float64).reshape(-1, width),
        np.asarray(targets, dtype=np.float64).reshape(-1, len(columns)),
        np.asarray(timestamps, dtype=np.int64),
    )


def build_regression_set(
    dataset, plan, low_volume_profiles, n_perturbations_per_row, rng, n_rows=None
):
    """Pairs of time-shifted rows and their exactly recomputed profiles.

    Every sampled row is shifted ``n_perturbations_per_row`` times by a
    signed delay with log-uniform magnitude between one minute and one week.

    Args:
        dataset (EnrichedDataset): enriched rows with their full history
        plan (FeaturePlan): the feature plan
        low_volume_profiles (Sequence[str]): the target profiles
        n_perturbations_per_row (int): shifts per row
        rng (numpy.random.Generator): the random generator
        n_rows (int): number of rows to sample, all rows if ``None``

    Returns:
        tuple[array[float]]: inputs of shape ``(m, len(plan) + 4)`` and
        targets of shape ``(m, len(low_volume_profiles))``
    """
    inputs, targets, _ = _shift_pairs(
        dataset, plan, low_volume_profiles, n_perturbations_per_row, rng, n_rows
    )
    return inputs, targets


def assign_estimators(quality, thresholds=EstimatorThresholds(), temporal=True):
    """Chooses the estimator of every profile from its held-out quality.

    High-volume profiles use lookup tables. Low-volume profiles use the
    regression model if its R² reaches ``r_min``, beats the identity
    predictor that keeps profiles unchanged, and its normalized residual
    range stays within ``q_max``; otherwise they are discarded. Without time
    shifts every profile is updated exactly.

    The assignment only decides how a profile follows a time shift. Attacks
    that leave the timestamp alone change amounts, cards and categorical
    fields exactly from the window statistics carried by the row, whatever
    the assignment. A card reset is exact in every case.

    Args:
        quality (Sequence[ProfileQuality]): quality of every profile, in plan order
        thresholds (EstimatorThresholds): the quality gate
        temporal (bool): whether attacks may shift timestamps

    Returns:
        EstimatorAssignment: the assignment
    """
    items = []
    for q in quality:
        if not temporal:
            assignment = Assignment.EXACT
        elif q.volume >= thresholds.volume_threshold:
            assignment = Assignment.LOOKUP
        elif q.r2 >= thresholds.r_min and q.residual_range <= thresholds.q_max and q.r2 > q.identity_r2:
            assignment = Assignment.REGRESSION
        else:
            assignment = Assignment.DISCARDED
        items.append((q.profile, assignment))
    return EstimatorAssignment(tuple(items))


@dataclasses.dataclass(frozen=True)
class Estimators:
    """Everything propagation needs besides the assignment.

    Args:
        plan (FeaturePlan): the feature plan
        fresh_card_id (int): card identifier used by resets and switches
        lookups (dict[str, LookupTable]): lookup tables by profile
        regression (RegressionEstimator): the regression estimator, if any
        index (ProfileIndex): history index for exact recomputation, if any
    """

    plan: object
    fresh_card_id: int
    lookups: dict = dataclasses.field(default_factory=dict)
    regression: RegressionEstimator = None
    index: object = None

    def check(self, assignment):
        """Raises ``ValueError`` if an assigned estimator is missing."""
        for name in assignment.names(Assignment.LOOKUP):
            if name not in self.lookups:
                raise ValueError(f"Missing lookup table for the profile {name}.")
        regression = assignment.names(Assignment.REGRESSION)
        if regression and (self.regression is None or set(regression) - set(self.regression.profiles)):
            raise ValueError(f"Missing regression estimator for the profiles {regression}.")


def _shift_profiles(row, shifted, delta, assignment, estimators, features, stats):
    """Stage ii: moves every profile to the shifted timestamp."""
    plan = estimators.plan
    estimated = {}
    regression_names = assignment.names(Assignment.REGRESSION)
    if regression_names:
        estimators.check(assignment)
        predicted = estimators.regression.predict(regression_inputs(row, delta))[0]
        estimated.update(zip(estimators.regression.profiles, predicted))

    for b, basis in enumerate(plan.bases):
        specs = [s for s in plan.profiles() if s.basis == basis]
        kinds = {assignment[s.name] for s in specs}
        if Assignment.EXACT in kinds:
            if estimators.index is None:
                raise ValueError("Exact time-shift propagation needs a profile index.")
            stats[b] = estimators.index.window_stats(basis, shifted).as_array()
            if kinds <= {Assignment.EXACT, Assignment.DISCARDED}:
                continue
        else:
            stats[b] = np.nan

        for spec in specs:
            kind = assignment[spec.name]
            position = plan.position[spec.name]
            if kind is Assignment.LOOKUP:
                if spec.name not in estimators.lookups:
                    raise ValueError(f"Missing lookup table for the profile {spec.name}.")
                features[position] = estimators.lookups[spec.name].query(shifted.timestamp)
            elif kind is Assignment.REGRESSION:
                value = estimated[spec.name]
                if spec.aggregation == "count":
                    value = max(value, 1.0)
                elif spec.aggregation == "stddev":
                    value = max(value, 0.0)
                features[position] = value


def _change_amount(shifted, new_amount, estimators, features, stats):
    """Stage iii: replaces the row's own contribution to every profile."""
    plan = estimators.plan
    old_amount = shifted.amount
    delta = new_amount - old_amount

    for b, basis in enumerate(plan.bases):
        if basis[2] != "amount":
            continue
        if np.all(np.isfinite(stats[b])):
            count, total, m2, maximum = stats[b]
            new_total = total + delta
            if count <= 1:
                new_m2 = 0.0
            else:
                new_m2 = m2 + delta * ((new_amount - new_total / count) + (old_amount - total / count))
            if new_amount >= maximum:
                new_max = new_amount
            elif old_amount >= maximum and estimators.index is not None:
                moved = shifted.replace(amount=new_amount)
                new_max = float(np.max(estimators.index.window_values(basis, moved)))
            else:
                # Without an index the previous maximum is kept
                new_max = maximum
            stats[b] = (count, new_total, max(new_m2, 0.0), new_max)
            continue

        specs = [s for s in plan.profiles() if s.basis == basis]
        count_specs = [s for s in specs if s.aggregation == "count"]
        count = features[plan.position[count_specs[0].name]] if count_specs else 1.0
        for spec in specs:
            position = plan.position[spec.name]
            if spec.aggregation == "sum":
                features[position] += delta
            elif spec.aggregation == "mean":
                features[position] += delta / max(count, 1.0)
            elif spec.aggregation == "max":
                features[position] = max(features[position], new_amount)


def propagate(row, attack, assignment, estimators):
    """Propagates an attack on a raw row into its engineered features.

    The stages run in a fixed order:

    1. categorical and geo fields change directly
    2. the timestamp shifts and the profiles move with their estimators
    3. the amount changes and the row's own contribution is replaced
    4. a card reset sets the card profiles to those of a first transaction

    Row maps and higher-order features are recomputed last.

    **Example**

    >>> attacked = propagate(row, AttackVector(amount_scale=0.5), assignment, estimators)

    Args:
        row (EnrichedRow): the clean row
        attack (AttackVector): the perturbation
        assignment (EstimatorAssignment): the estimator of every profile
        estimators (Estimators): the trained estimators

    Returns:
        EnrichedRow: the perturbed row

    Raises:
        ValueError: if an assigned estimator is missing
    """
    if attack.is_empty:
        return row.copy()

    plan = estimators.plan
    final = apply_attack(row.base, attack, estimators.fresh_card_id)
    features = row.features.copy()
    stats = row.stats.copy()

    shifted = row.base
    if attack.time_shift_ms is not None:
        shifted = row.base.replace(timestamp=final.timestamp)
        _shift_profiles(row, shifted, attack.time_shift_ms, assignment, estimators, features, stats)

    if attack.amount_scale is not None:
        _change_amount(shifted, final.amount, estimators, features, stats)

    if attack.card_action is not CardAction.NONE:
        for b in plan.card_bases():
            value = getattr(final, plan.bases[b][2])
            stats[b] = (1.0, value, 0.0, value)

    exact = np.all(np.isfinite(stats), axis=1)
    for spec in plan.profiles():
        b = plan.basis_position[spec.basis]
        if exact[b]:
            features[plan.position[spec.name]] = aggregate(spec.aggregation, stats[b])

    columns = transaction_columns([final])
    for name, value in plan.row_map_values(columns).items():
        features[plan.position[name]] = value[0]
    features = plan.apply_higher_order(features[None], columns)[0]
    return EnrichedRow(final, features, stats)


@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
    """Settings of estimator training.

    Args:
        thresholds (EstimatorThresholds): the quality gate
        bin_width_ms (int): lookup table bin width
        n_rows (int): rows sampled for the regression set
        n_perturbations (int): time shifts per sampled row
        holdout_fraction (float): share of sampled rows held out for quality
        params (TrainParams): hyperparameters of the regression model
        temporal (bool): whether attacks may shift timestamps
    """

    thresholds: EstimatorThresholds = EstimatorThresholds()
    bin_width_ms: int = MS_PER_HOUR
    n_rows: int = 2000
    n_perturbations: int = 5
    holdout_fraction: float = 0.2
    params: learner.TrainParams = learner.TrainParams(n_rounds=100, max_depth=5)
    temporal: bool = True

    def __post_init__(self):
        if self.n_rows < 1 or self.n_perturbations < 1:
            raise ValueError("n_rows and n_perturbations have to be at least 1.")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction has to be in (0, 1).")
        if self.bin_width_ms < 1:
            raise ValueError("bin_width_ms has to be positive.")


def profile_volumes(enriched):
    """Mean window event count of every profile's basis over the rows."""
    plan = enriched.plan
    return {
        spec.name: float(enriched.stats[:, plan.basis_position[spec.basis], STAT_COUNT].mean())
        for spec in plan.profiles()
    }


def _residual_range(targets, predictions):
    residuals = targets - predictions
    spread = targets.std(axis=0)
    width = residuals.max(axis=0) - residuals.min(axis=0)
    safe = np.where(spread > 0, spread, 1.0)
    return np.where(spread > 0, width / safe, np.where(width > 0, np.inf, 0.0))


def train_estimators(train, config, seed=0, index=None):
    """Builds lookup tables, trains the regression estimator and assigns an
    estimator to every profile.

    Quality is measured on time-shifted copies of held-out training rows.
    The regression model is fitted on the low-volume profiles only; the
    identity predictor that keeps profiles unchanged is its baseline.

    Args:
        train (EnrichedDataset): enriched training rows with their history
        config (EstimatorConfig): the settings
        seed (int): the global seed
        index (ProfileIndex): index of the full dataset; it provides exact
            updates and a card identifier unused by any split

    Returns:
        tuple[EstimatorAssignment, Estimators, list[ProfileQuality]]: the
        assignment, the estimators and the quality report
    """
    plan = train.plan
    profiles = [spec.name for spec in plan.profiles()]
    volumes = profile_volumes(train)
    fresh = (index or train.profile_index).max_card_id + 1

    if not config.temporal or not profiles:
        nan = float("nan")
        quality = [ProfileQuality(p, volumes[p], nan, nan, nan) for p in profiles]
        assignment = assign_estimators(quality, config.thresholds, temporal=False)
        return assignment, Estimators(plan, fresh, index=index), quality

    rng = make_rng(seed, "propagation", "regression_set")
    sample = min(config.n_rows, len(train))
    n_holdout = max(1, int(round(config.holdout_fraction * sample)))
    rows = rng.permutation(len(train))[:sample]
    holdout_rows, fit_rows = rows[:n_holdout], rows[n_holdout:]
    n_val = max(1, len(fit_rows) // 4)

    def pairs(positions):
        return _shift_pairs(
            train.take(np.sort(positions)), plan, profiles, config.n_perturbations, rng
        )

    X_fit, Y_fit, _ = pairs(fit_rows[n_val:])
    X_val, Y_val, _ = pairs(fit_rows[:n_val])
    X_out, Y_out, shifted_at = pairs(holdout_rows)

    lookups = {
        p: build_lookup(train, p, config.bin_width_ms)
        for p in profiles
        if volumes[p] >= config.thresholds.volume_threshold
    }
    low_volume = [p for p in profiles if p not in lookups]

    identity = X_out[:, [len(RAW_INPUT_FIELDS) + plan.position[p] for p in profiles]]
    identity_r2 = r2_per_output(Y_out, identity)

    r2 = np.full(len(profiles), np.nan)
    residual_range = np.full(len(profiles), np.nan)
    lookup_r2 = np.full(len(profiles), np.nan)

    model = None
    if low_volume:
        columns = [profiles.index(p) for p in low_volume]
        model = learner.fit(
            (X_fit, Y_fit[:, columns]),
            (X_val, Y_val[:, columns]),
            config.params,
            learner.Objective.MULTI_SQUARED_ERROR,
            feature_names=regression_input_names(plan),
        )
        predicted = model.predict(X_out)
        r2[columns] = r2_per_output(Y_out[:, columns], predicted)
        residual_range[columns] = _residual_range(Y_out[:, columns], predicted)

    for p, table in lookups.items():
        k = profiles.index(p)
        predicted = np.array([table.query(t) for t in shifted_at])
        lookup_r2[k] = r2_per_output(Y_out[:, [k]], predicted[:, None])[0]

    quality = [
        ProfileQuality(
            p,
            volumes[p],
            float(r2[k]),
            float(identity_r2[k]),
            float(residual_range[k]),
            float(lookup_r2[k]),
        )
        for k, p in enumerate(profiles)
    ]
    assignment = assign_estimators(quality, config.thresholds, temporal=True)

    discarded = assignment.names(Assignment.DISCARDED)
    if discarded:
        warnings.warn(
            f"The profiles {discarded} have no estimator of sufficient quality and are "
            "excluded from the classifier's features."
        )

    regression = None
    chosen = assignment.names(Assignment.REGRESSION)
    if chosen:
        outputs = [low_volume.index(p) for p in chosen]
        regression = RegressionEstimator(tuple(chosen), model.select_outputs(outputs))

    logger.info(
        "Assigned %d lookup, %d regression and %d discarded profiles.",
        len(lookups),
        len(chosen),
        len(discarded),
    )
    return assignment, Estimators(plan, fresh, lookups, regression, index), quality


def quality_frame(quality, assignment):
    """The estimator quality report as a data frame."""
    frame = pd.DataFrame([dataclasses.asdict(q) for q in quality])
    frame.insert(1, "assignment", [assignment[q.profile].value for q in quality])
    return frame


def save_estimators(assignment, estimators, filepath):
    """Writes the assignment, lookup tables and regression model as YAML."""
    document = {
        "format": ESTIMATORS_FORMAT,
        "version": ESTIMATORS_VERSION,
        "fresh_card_id": int(estimators.fresh_card_id),
        "assignment": {name: a.value for name, a in assignment.items},
        "lookups": {
            name: {
                "bin_width_ms": table.bin_width_ms,
                "origin_ms": table.origin_ms,
                "values": [float(v) for v in table.values],
            }
            for name, table in estimators.lookups.items()
        },
        "regression": None,
    }
    if estimators.regression is not None:
        document["regression"] = {
            "profiles": list(estimators.regression.profiles),
            "model": learner.model_to_document(estimators.regression.model),
        }
    with open(filepath, "w") as f:
        yaml.safe_dump(document, f, sort_keys=False, default_flow_style=None)
    return str(filepath)


def load_estimators(filepath, plan, index=None):
    """Reads estimators written by :func:`save_estimators`.

    Args:
        filepath (str): the estimator file
        plan (FeaturePlan): the feature plan the estimators belong to
        index (ProfileIndex): history index for exact updates

    Returns:
        tuple[EstimatorAssignment, Estimators]: the assignment and the estimators

    Raises:
        ValueError: if the file does not match the plan or misses an estimator
    """
    with open(filepath) as f:
        document = yaml.safe_load(f)
    if not isinstance(document, dict) or document.get("format") != ESTIMATORS_FORMAT:
        raise ValueError(f"{filepath} is not an estimator file.")
    if document.get("version") != ESTIMATORS_VERSION:
        raise ValueError(f"Unsupported estimator file version {document.get('version')}.")

    profiles = [spec.name for spec in plan.profiles()]
    stored = document["assignment"]
    if list(stored) != profiles:
        raise ValueError(f"The estimators in {filepath} do not match the feature plan.")
    assignment = EstimatorAssignment(tuple((p, Assignment(stored[p])) for p in profiles))

    lookups = {
        name: LookupTable(name, table["bin_width_ms"], table["origin_ms"], tuple(table["values"]))
        for name, table in document["lookups"].items()
    }
    regression = None
    if document["regression"] is not None:
        regression = RegressionEstimator(
            tuple(document["regression"]["profiles"]),
            learner.model_from_document(document["regression"]["model"], filepath),
        )

    estimators = Estimators(plan, document["fresh_card_id"], lookups, regression, index)
    estimators.check(assignment)
    return assignment, estimators
