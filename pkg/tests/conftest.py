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
Data and auxiliary functions used for testing advprop.
"""
import dataclasses

import numpy as np
import pandas as pd
import pytest

from advprop.attack_model import DEFAULT_COSTS, DatasetStatistics
from advprop.feature_engine import EnrichedRow, compute_features, default_plan, parse_plan
from advprop.propagation import EstimatorAssignment, Estimators
from advprop.search import Propagator
from advprop.synthdata import DEFAULT_START_MS, TRANSACTION_FIELDS, GeneratorConfig, Transaction, generate
from advprop.utils import MS_PER_MINUTE

# A dataset small enough for brute-force oracles; roughly 1,300 rows of which
# about 5% are fraudulent
TINY_GENERATOR = GeneratorConfig(
    n_cards=60,
    n_merchants=10,
    weeks=4,
    legit_rate=5.0,
    target_fraud_rate=0.05,
    fraud_card_fraction=0.3,
    seed=3,
)

SMALL_PLAN = """\
rowmap log_amount fn=log field=amount
profile count_card_1h agg=count key=card_id window=1h
profile sum_amount_card_1h agg=sum key=card_id window=1h field=amount
profile mean_amount_card_1h agg=mean key=card_id window=1h field=amount
profile std_amount_card_1h agg=stddev key=card_id window=1h field=amount
profile max_amount_card_1h agg=max key=card_id window=1h field=amount
"""

# One profile per basis so that every estimator kind can be assigned alone
SPLIT_BASIS_PLAN = """\
rowmap log_amount fn=log field=amount
profile count_card_1h agg=count key=card_id window=1h
profile sum_amount_merchant_24h agg=sum key=merchant_id window=24h field=amount
"""

# Settings of a complete pipeline run on the tiny dataset
TINY_CONFIG = {
    "seed": 5,
    "generator": {
        "n_cards": 60,
        "n_merchants": 10,
        "weeks": 4,
        "legit_rate": 5.0,
        "target_fraud_rate": 0.05,
        "fraud_card_fraction": 0.3,
    },
    "splits": {"train_weeks": 2, "val_weeks": 1, "test_weeks": 1},
    "learner": {
        "n_rounds": 10,
        "max_depth": 3,
        "min_child_samples": 5,
        "early_stopping_patience": 5,
    },
    "estimators": {
        "n_rows": 40,
        "n_perturbations": 2,
        "volume_threshold": 20.0,
        "learner": {
            "n_rounds": 5,
            "max_depth": 2,
            "min_child_samples": 5,
            "early_stopping_patience": 5,
        },
    },
    "search": {"budget": 40, "random_iters": 20, "grid_points": 4, "card_switches": 2},
    "attack_bench": {"norm_caps": [30, 65], "n_victims": 4, "allow_temporal": [False, True]},
    "adv_train": {
        "max_adv_rounds": 1,
        "boost_rounds": 3,
        "adversarial_fraction": 0.2,
        "allow_temporal": [False, True],
        "norm_cap": [30, 65],
        "alpha": 0.1,
        "learner": {
            "n_rounds": 5,
            "max_depth": 3,
            "min_child_samples": 5,
            "early_stopping_patience": 3,
        },
    },
    "evaluate": {"norm_caps": [0, 65], "n_victims": 4, "alpha": 0.1},
}


def make_transaction(**changes):
    """A legitimate transaction with default values for every field."""
    values = dict(
        event_id=0,
        timestamp=DEFAULT_START_MS,
        amount=10.0,
        card_id=1,
        card_network="visa",
        cvv_match="match",
        merchant_id=1,
        merchant_category="grocery",
        latitude=40.7,
        longitude=-74.0,
        ip_network="net00",
        label=0,
    )
    values.update(changes)
    return Transaction(**values)


def make_frame(rows):
    """A time-sorted transaction frame from ``(minutes, amount, card_id)``
    triples, event ids following the given order."""
    transactions = [
        make_transaction(
            event_id=i,
            timestamp=DEFAULT_START_MS + int(minutes * MS_PER_MINUTE),
            amount=float(amount),
            card_id=card,
        )
        for i, (minutes, amount, card) in enumerate(rows)
    ]
    frame = pd.DataFrame([dataclasses.asdict(t) for t in transactions], columns=list(TRANSACTION_FIELDS))
    return frame.sort_values(["timestamp", "event_id"], kind="mergesort").reset_index(drop=True)


def brute_force_window(frame, i, key, window_ms):
    """Amounts of the rows in the trailing window of row ``i``, by scanning
    every row of the frame."""
    t = frame["timestamp"].to_numpy()
    ids = frame["event_id"].to_numpy()
    entity = frame[key].to_numpy()
    members = (
        (entity == entity[i])
        & (t > t[i] - window_ms)
        & ((t < t[i]) | ((t == t[i]) & (ids <= ids[i])))
    )
    return frame["amount"].to_numpy()[members]


class LinearScorer:
    """Scores feature vectors with a weighted sum of named features."""

    def __init__(self, plan, weights, threshold):
        self.weights = np.zeros(len(plan))
        for name, weight in weights.items():
            self.weights[plan.position[name]] = weight
        self.threshold = threshold

    def score(self, features):
        return np.atleast_2d(features) @ self.weights


class ColumnModel:
    """Model stub whose score is the first feature column."""

    def score_rows(self, enriched):
        return enriched.features[:, 0]


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate(TINY_GENERATOR)


@pytest.fixture(scope="session")
def tiny_enriched(tiny_dataset):
    return compute_features(tiny_dataset, default_plan())


@pytest.fixture(scope="session")
def small_plan():
    return parse_plan(SMALL_PLAN)


@pytest.fixture(scope="session")
def exact_propagator(tiny_enriched):
    """Propagation with every profile updated exactly over the full history."""
    plan = tiny_enriched.plan
    index = tiny_enriched.profile_index
    estimators = Estimators(plan, index.max_card_id + 1, index=index)
    statistics = DatasetStatistics.from_frame(tiny_enriched.frame)
    return Propagator(EstimatorAssignment.all_exact(plan), estimators, statistics, DEFAULT_COSTS)


@pytest.fixture
def clean_row():
    """A standalone row with a single feature equal to 1."""
    return EnrichedRow(make_transaction(), np.array([1.0]), np.zeros((0, 4)))
