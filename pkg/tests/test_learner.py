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
Unit tests for the :mod:`advprop.learner` module.
"""
import numpy as np
import pytest

from advprop import learner
from advprop.evaluation import pauc_at_fpr, r2_per_output
from advprop.learner import BinMapper, GbdtModel, Objective, TrainParams, Tree
from advprop.utils import make_rng

PARAMS = TrainParams(n_rounds=20, max_depth=2, min_child_samples=5, early_stopping_patience=20)


@pytest.fixture(scope="module")
def separable():
    X = np.linspace(0.0, 1.0, 200)[:, None]
    y = (X[:, 0] > 0.5).astype(int)
    return X, y


@pytest.fixture(scope="module")
def halves(tiny_enriched):
    n = len(tiny_enriched)
    return tiny_enriched.take(slice(0, n // 2)), tiny_enriched.take(slice(n // 2, n))


class TestTree:
    """Test the stored tree structure."""

    TREE = Tree(
        np.array([0, -1, -1]),
        np.array([0.5, 0.0, 0.0]),
        np.array([1, -1, -1]),
        np.array([2, -1, -1]),
        np.array([0.0, -1.0, 2.0]),
    )

    def test_predict(self):
        """Test that rows go left iff their feature is at most the threshold."""
        X = np.array([[0.2], [0.5], [0.7]])
        assert np.array_equal(self.TREE.predict(X), [-1.0, -1.0, 2.0])
        assert self.TREE.depth == 1

    def test_records(self):
        """Test that the record form rebuilds the same tree."""
        tree = Tree.from_records(self.TREE.to_records())
        X = np.linspace(0, 1, 11)[:, None]
        assert np.array_equal(tree.predict(X), self.TREE.predict(X))

    def test_model_sum(self):
        """Test that the raw prediction adds the shrunk trees to the base score."""
        model = GbdtModel(Objective.MULTI_SQUARED_ERROR, 0.5, (1.0,), ("x",), ((self.TREE,), (self.TREE,)))
        assert np.allclose(model.predict(np.array([[0.0], [1.0]]))[:, 0], [0.0, 3.0])
        assert model.n_rounds == 2
        assert model.n_outputs == 1


class TestBinMapper:
    """Test the quantile binning of features."""

    def test_few_values(self):
        """Test that features with few values get one bin per value."""
        bins = BinMapper.fit(np.array([[1.0], [2.0], [3.0], [4.0]]), 8)
        assert np.array_equal(bins.edges[0], [1.0, 2.0, 3.0])
        assert bins.n_bins == 4
        binned = bins.transform(np.array([[0.5], [1.0], [1.5], [4.0], [10.0]]))
        assert np.array_equal(binned[:, 0], [0, 0, 1, 3, 3])

    def test_many_values(self):
        """Test that features with many values are limited to the bin count."""
        X = make_rng(0).normal(size=(1000, 2))
        bins = BinMapper.fit(X, 16)
        assert bins.n_bins <= 16
        binned = bins.transform(X)
        assert binned.min() == 0
        assert binned.max() <= 15


class TestParams:
    """Test the hyperparameter validation."""

    @pytest.mark.parametrize(
        "params",
        [
            {"n_rounds": -1},
            {"learning_rate": 0.0},
            {"max_depth": 0},
            {"feature_subsample": 1.5},
            {"histogram_bins": 1},
            {"l2_regularization": -0.1},
            {"n_rounds": 5, "early_stopping_patience": 6},
        ],
    )
    def test_invalid(self, params):
        """Test that invalid hyperparameters are rejected."""
        with pytest.raises(ValueError):
            TrainParams(**params)


class TestFit:
    """Test training classifiers and regressors."""

    def test_separable(self, separable):
        """Test that a separable problem is ranked perfectly."""
        X, y = separable
        model = learner.fit((X, y), (X, y), PARAMS)
        scores = model.predict(X)

        assert model.feature_names == ("x0",)
        assert 1 <= model.n_rounds <= PARAMS.n_rounds
        assert scores[y == 1].min() > scores[y == 0].max()
        assert np.all((scores > 0) & (scores < 1))

    def test_without_validation(self, separable):
        """Test that all rounds are kept without validation rows."""
        X, y = separable
        model = learner.fit((X, y), None, PARAMS.replace(n_rounds=7, early_stopping_patience=7))
        assert model.n_rounds == 7

    def test_single_class(self, separable):
        """Test that classifiers need both classes."""
        X, _ = separable
        with pytest.raises(ValueError, match="both classes"):
            learner.fit((X, np.zeros(len(X))), None, PARAMS)

    def test_layout(self, separable):
        """Test that rows of another width are rejected."""
        X, y = separable
        model = learner.fit((X, y), None, PARAMS.replace(n_rounds=2, early_stopping_patience=2))
        with pytest.raises(ValueError, match="Expected rows with 1 features"):
            model.predict(np.zeros((3, 2)))

    def test_deterministic(self, halves):
        """Test that equal inputs give equal models."""
        train, val = halves
        params = PARAMS.replace(feature_subsample=0.5)
        first = learner.fit(train, val, params).score_rows(val)
        second = learner.fit(train, val, params).score_rows(val)
        assert np.array_equal(first, second)

    def test_enriched_rows(self, halves):
        """Test training on a subset of the features of enriched rows."""
        train, val = halves
        columns = ["log_amount", "count_card_1h", "amount_zscore_card_7d"]
        model = learner.fit(train, val, PARAMS, feature_names=columns)
        assert model.feature_names == tuple(columns)
        assert np.array_equal(learner.predict(model, val), model.predict(val.matrix(columns)))

    def test_missing_features(self, halves):
        """Test that scoring rows without the model's features raises an error."""
        _, val = halves
        model = GbdtModel(Objective.LOGISTIC, 0.1, (0.0,), ("not_a_feature",))
        with pytest.raises(ValueError, match="miss the model's features"):
            model.score_rows(val)

    def test_regression(self):
        """Test a two-output regression."""
        X = make_rng(1).uniform(size=(400, 2))
        Y = np.column_stack([X[:, 0], 2.0 * X[:, 1]])
        params = TrainParams(n_rounds=60, max_depth=3, min_child_samples=5, early_stopping_patience=60)
        model = learner.fit((X, Y), None, params, Objective.MULTI_SQUARED_ERROR)

        predictions = model.predict(X)
        assert predictions.shape == (400, 2)
        assert np.all(r2_per_output(Y, predictions) > 0.9)

        second = model.select_outputs([1])
        assert np.array_equal(second.predict(X)[:, 0], predictions[:, 1])
        assert np.allclose(model.truncate(0).predict(X), Y.mean(axis=0))


class TestContinueFit:
    """Test warm-start continuation."""

    def test_appends_rounds(self, separable):
        """Test that continuation keeps the existing rounds and appends new ones."""
        X, y = separable
        params = PARAMS.replace(n_rounds=3, early_stopping_patience=3)
        model = learner.fit((X, y), None, params)
        extended = learner.continue_fit(model, (X, y), None, 4, params)

        assert model.n_rounds == 3
        assert extended.n_rounds == 7
        assert all(a is b for a, b in zip(extended.trees, model.trees))
        assert extended.learning_rate == model.learning_rate

    def test_early_stopping(self, halves):
        """Test that continuation keeps at most the requested rounds."""
        train, val = halves
        model = learner.fit(train, val, PARAMS)
        extended = learner.continue_fit(model, train, val, 5, PARAMS.replace(early_stopping_patience=2))
        assert model.n_rounds <= extended.n_rounds <= model.n_rounds + 5

    def test_negative_rounds(self, separable):
        """Test that a negative number of rounds is rejected."""
        X, y = separable
        model = learner.fit((X, y), None, PARAMS.replace(n_rounds=1, early_stopping_patience=1))
        with pytest.raises(ValueError, match="non-negative"):
            learner.continue_fit(model, (X, y), None, -1, PARAMS)


class TestTune:
    """Test the hyperparameter search."""

    def test_first_trial(self, halves):
        """Test that tuning is at least as good as the given parameters."""
        train, val = halves
        params = TrainParams(n_rounds=10, max_depth=3, min_child_samples=5, early_stopping_patience=5)
        model, best, score = learner.tune(train, val, params, n_trials=3, seed=2)

        reference = learner.fit(train, val, params)
        assert score >= pauc_at_fpr(reference.score_rows(val), val.labels, 0.01)
        assert score == pytest.approx(pauc_at_fpr(model.score_rows(val), val.labels, 0.01))
        assert isinstance(best, TrainParams)


class TestModelFiles:
    """Test storing models."""

    def test_roundtrip(self, halves, tmpdir):
        """Test that a stored model gives exactly the same scores."""
        train, val = halves
        model = learner.fit(train, val, PARAMS)
        filepath = learner.save_model(model, tmpdir.join("model.yaml"))
        loaded = learner.load_model(filepath)

        assert loaded.feature_names == model.feature_names
        assert loaded.n_rounds == model.n_rounds
        assert np.array_equal(loaded.score_rows(val), model.score_rows(val))

    def test_not_a_model(self, tmpdir):
        """Test that other YAML documents are rejected."""
        filepath = tmpdir.join("other.yaml")
        filepath.write("format: something-else\n")
        with pytest.raises(ValueError, match="not a model file"):
            learner.load_model(str(filepath))

    def test_version(self, tmpdir):
        """Test that unknown versions are rejected."""
        document = learner.model_to_document(GbdtModel(Objective.LOGISTIC, 0.1, (0.0,), ("x",)))
        document["version"] = 99
        with pytest.raises(ValueError, match="Unsupported model version"):
            learner.model_from_document(document)
