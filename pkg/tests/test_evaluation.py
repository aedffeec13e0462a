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
Unit tests for the :mod:`advprop.evaluation` module.
"""
import numpy as np
import pytest
from scipy.stats import mannwhitneyu
from sklearn.metrics import roc_auc_score

from advprop.evaluation import (
    evaluate,
    operating_threshold,
    pauc_at_fpr,
    r2_score,
    recall_at_fpr,
    reports_frame,
    roc_curve,
)
from advprop.feature_engine import EnrichedDataset, parse_plan
from advprop.utils import make_rng
from conftest import ColumnModel, make_frame

SCORES = [0.9, 0.8, 0.7, 0.4, 0.3, 0.1]
LABELS = [1, 1, 0, 1, 0, 0]


@pytest.fixture
def clean_rows():
    """Six rows whose first feature is the score of ``SCORES``."""
    frame = make_frame([(i, 10.0, i) for i in range(len(SCORES))])
    frame["label"] = LABELS
    plan = parse_plan("rowmap log_amount fn=log field=amount")
    return EnrichedDataset(frame, np.array(SCORES)[:, None], np.zeros((len(SCORES), 0, 4)), plan)


def random_problem(seed, n=500, rate=0.2):
    rng = make_rng(seed, "problem")
    labels = (rng.uniform(size=n) < rate).astype(int)
    scores = rng.normal(size=n) + 1.5 * labels
    return scores, labels


class TestROC:
    """Test the ROC vertices."""

    def test_vertices(self):
        """Test the vertices of a small ranking."""
        fpr, tpr, thresholds = roc_curve(SCORES, LABELS)
        assert np.allclose(fpr, [0, 0, 0, 1 / 3, 1 / 3, 2 / 3, 1])
        assert np.allclose(tpr, [0, 1 / 3, 2 / 3, 2 / 3, 1, 1, 1])
        assert thresholds[0] == np.inf
        assert np.array_equal(thresholds[1:], SCORES)

    def test_ties(self):
        """Test that tied scores form a single diagonal step."""
        fpr, tpr, _ = roc_curve([0.5, 0.5, 0.2], [1, 0, 0])
        assert np.allclose(fpr, [0, 0.5, 1])
        assert np.allclose(tpr, [0, 1, 1])


class TestPartialAUC:
    """Test the partial area under the ROC curve."""

    def test_hand_computed(self):
        """Test both normalizations against hand-computed values."""
        assert pauc_at_fpr(SCORES, LABELS, 0.5) == pytest.approx(7 / 9)
        assert pauc_at_fpr(SCORES, LABELS, 0.5, "mcclish") == pytest.approx(23 / 27)
        assert pauc_at_fpr(SCORES, LABELS, 0.2) == pytest.approx(2 / 3)

    def test_perfect_and_random(self):
        """Test the ratio normalization of perfect and tied rankings."""
        assert pauc_at_fpr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        assert pauc_at_fpr([0.5] * 4, [1, 1, 0, 0], 0.1) == pytest.approx(0.05)
        assert pauc_at_fpr([0.5] * 4, [1, 1, 0, 0], 0.1, "mcclish") == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("alpha", [0.01, 0.05, 0.3])
    def test_sklearn(self, seed, alpha):
        """Test the McClish normalization against scikit-learn."""
        scores, labels = random_problem(seed)
        expected = roc_auc_score(labels, scores, max_fpr=alpha)
        assert pauc_at_fpr(scores, labels, alpha, "mcclish") == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_full_area(self, seed):
        """Test that the full area equals the pairwise ranking probability."""
        scores, labels = random_problem(seed)
        positives, negatives = scores[labels == 1], scores[labels == 0]
        u = mannwhitneyu(positives, negatives).statistic
        expected = u / (len(positives) * len(negatives))
        assert pauc_at_fpr(scores, labels, 1.0) == pytest.approx(expected)

    @pytest.mark.parametrize(
        "scores, labels, alpha, normalization, message",
        [
            ([0.1, 0.2], [1, 1], 0.1, "ratio", "Both classes"),
            ([0.1, 0.2], [1, 0], 0.0, "ratio", "FPR cap"),
            ([0.1, 0.2], [1, 0], 1.5, "ratio", "FPR cap"),
            ([0.1, 0.2], [1, 0], 0.1, "standardized", "normalization"),
            ([0.1, 0.2, 0.3], [1, 0], 0.1, "ratio", "scores for"),
        ],
    )
    def test_invalid(self, scores, labels, alpha, normalization, message):
        """Test that invalid inputs raise an error."""
        with pytest.raises(ValueError, match=message):
            pauc_at_fpr(scores, labels, alpha, normalization)


class TestOperatingPoint:
    """Test the operating threshold and the recall at a fixed FPR."""

    def test_hand_computed(self):
        """Test thresholds and recalls of a small ranking."""
        assert operating_threshold(SCORES, LABELS, 0.2) == 0.8
        assert recall_at_fpr(SCORES, LABELS, 0.2) == pytest.approx(2 / 3)
        assert operating_threshold(SCORES, LABELS, 1 / 3) == 0.4
        assert recall_at_fpr(SCORES, LABELS, 1 / 3) == 1.0

    def test_no_feasible_threshold(self):
        """Test that the threshold is infinite if every threshold exceeds the FPR cap."""
        assert operating_threshold([0.5, 0.5], [1, 0], 0.5) == np.inf
        assert recall_at_fpr([0.5, 0.5], [1, 0], 0.5) == 0.0

    def test_threshold_meets_cap(self):
        """Test that flagging at the threshold respects the FPR cap."""
        scores, labels = random_problem(7)
        for alpha in (0.01, 0.05, 0.2):
            threshold = operating_threshold(scores, labels, alpha)
            flagged = scores >= threshold
            assert flagged[labels == 0].mean() <= alpha
            assert flagged[labels == 1].mean() == pytest.approx(recall_at_fpr(scores, labels, alpha))


class TestR2:
    """Test the coefficient of determination."""

    def test_values(self):
        """Test perfect, mean and constant-target predictions."""
        targets = np.array([[1.0, 2.0], [3.0, 2.0]])
        assert r2_score(targets, targets) == 1.0
        assert r2_score(targets, np.array([[2.0, 2.0], [2.0, 2.0]])) == pytest.approx(0.5)
        assert r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0


class TestEvaluate:
    """Test the clean-versus-adversarial report."""

    def test_report(self, clean_rows):
        """Test a report where one of two detected positives is flipped."""
        row = clean_rows.row(0)
        row.features[0] = 0.5
        attacked = clean_rows.with_rows([0], [row])

        report = evaluate(ColumnModel(), clean_rows, attacked, alpha=0.2, norm_cap=65)
        assert report.operating_threshold == 0.8
        assert report.clean_pauc == pytest.approx(2 / 3)
        assert report.adversarial_pauc == pytest.approx(1 / 3)
        assert report.success_rate == 0.5
        assert report.recall_at_fpr == pytest.approx(2 / 3)
        assert report.adversarial_recall == pytest.approx(1 / 3)
        assert (report.n_positives, report.n_negatives, report.n_attacked) == (3, 3, 1)
        assert report.norm_cap == 65.0
        assert "success rate" in report.summary()

    def test_unattacked(self, clean_rows):
        """Test that identical row sets give equal clean and adversarial metrics."""
        report = evaluate(ColumnModel(), clean_rows, clean_rows, alpha=0.5, normalization="mcclish")
        assert report.clean_pauc == report.adversarial_pauc == pytest.approx(23 / 27)
        assert report.success_rate == 0.0
        assert report.n_attacked == 0

    def test_mismatched_rows(self, clean_rows):
        """Test that row sets of different events are rejected."""
        with pytest.raises(ValueError, match="same events"):
            evaluate(ColumnModel(), clean_rows, clean_rows.take([1, 0, 2, 3, 4, 5]))

    def test_changed_labels(self, clean_rows):
        """Test that attacks cannot change labels."""
        row = clean_rows.row(2)
        row = type(row)(row.base.replace(label=1), row.features, row.stats)
        with pytest.raises(ValueError, match="labels"):
            evaluate(ColumnModel(), clean_rows, clean_rows.with_rows([2], [row]))

    def test_reports_frame(self, clean_rows):
        """Test the tabular form of several reports."""
        reports = [evaluate(ColumnModel(), clean_rows, clean_rows, alpha=a) for a in (0.2, 0.5)]
        frame = reports_frame(reports, model="baseline", train_cap=0)
        assert list(frame.columns[:3]) == ["model", "train_cap", "clean_pauc"]
        assert list(frame["alpha"]) == [0.2, 0.5]
        assert set(frame["model"]) == {"baseline"}
