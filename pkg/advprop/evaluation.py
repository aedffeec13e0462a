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
Classification metrics: partial AUC and recall at a fixed false-positive
rate, and the clean-versus-adversarial evaluation report.
"""
import dataclasses
import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("ratio", "mcclish")


def _check_inputs(scores, labels, alpha):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"Got {len(scores)} scores for {len(labels)} labels.")
    if not 0 < alpha <= 1:
        raise ValueError(f"The FPR cap has to be in (0, 1], got {alpha}.")
    positives = labels == 1
    if positives.all() or not positives.any():
        raise ValueError("Both classes have to be present in the labels.")
    return scores, positives


def roc_curve(scores, labels):
    """ROC vertices over the distinct score values.

    Tied scores form a single threshold, so a group of tied positives and
    negatives moves the curve diagonally in one step. Vertex ``i`` corresponds
    to predicting positive iff ``score >= thresholds[i]``; the first vertex is
    ``(0, 0)`` with an infinite threshold.

    Args:
        scores (array[float]): model scores, larger means more suspicious
        labels (array[int]): ``1`` for positives, ``0`` for negatives

    Returns:
        tuple[array[float]]: false-positive rates, true-positive rates and
        thresholds of the vertices

    Raises:
        ValueError: if only one class is present
    """
    scores, positives = _check_inputs(scores, labels, 1.0)
    order = np.argsort(-scores, kind="mergesort")
    scores, positives = scores[order], positives[order]

    last_of_group = np.r_[np.flatnonzero(np.diff(scores) != 0), len(scores) - 1]
    tp = np.cumsum(positives)[last_of_group]
    fp = np.cumsum(~positives)[last_of_group]

    fpr = np.r_[0.0, fp / fp[-1]]
    tpr = np.r_[0.0, tp / tp[-1]]
    thresholds = np.r_[np.inf, scores[last_of_group]]
    return fpr, tpr, thresholds


def _feasible_vertex(fpr, tpr, alpha):
    """Index of the vertex with the largest TPR among those with FPR <= alpha."""
    feasible = np.flatnonzero(fpr <= alpha)
    return feasible[np.argmax(tpr[feasible])]


def pauc_at_fpr(scores, labels, alpha=0.01, normalization="ratio"):
    """Normalized area under the ROC curve for false-positive rates up to ``alpha``.

    The curve is integrated with the trapezoidal rule and interpolated
    linearly at ``alpha``. With the ``ratio`` normalization the area is divided
    by ``alpha``, so a perfect ranking scores 1 and a random one ``alpha / 2``.
    The ``mcclish`` normalization rescales the area so that a random ranking
    scores 0.5.

    **Example**

    >>> pauc_at_fpr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    1.0

    Args:
        scores (array[float]): model scores
        labels (array[int]): binary labels
        alpha (float): the FPR cap in ``(0, 1]``
        normalization (str): ``"ratio"`` or ``"mcclish"``

    Returns:
        float: the normalized partial AUC

    Raises:
        ValueError: if only one class is present or the arguments are invalid
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"Unknown pAUC normalization {normalization!r}.")
    fpr, tpr, _ = roc_curve(scores, labels)
    _check_inputs(scores, labels, alpha)

    stop = np.searchsorted(fpr, alpha, side="right")
    x, y = fpr[:stop], tpr[:stop]
    if stop < len(fpr) and x[-1] < alpha:
        prev = stop - 1
        weight = (alpha - fpr[prev]) / (fpr[stop] - fpr[prev])
        x = np.r_[x, alpha]
        y = np.r_[y, tpr[prev] + weight * (tpr[stop] - tpr[prev])]

    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    if normalization == "ratio":
        return area / alpha

    min_area = alpha * alpha / 2.0
    return 0.5 * (1.0 + (area - min_area) / (alpha - min_area))


def recall_at_fpr(scores, labels, alpha=0.01):
    """Recall at the most permissive threshold whose FPR is at most ``alpha``.

    Raises:
        ValueError: if only one class is present
    """
    _check_inputs(scores, labels, alpha)
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(tpr[_feasible_vertex(fpr, tpr, alpha)])


def operating_threshold(scores, labels, alpha=0.01):
    """Score threshold of the clean operating point at FPR ``alpha``.

    A transaction is flagged iff its score is at least the threshold. An
    attack succeeds if it pushes a flagged positive below it.

    Returns:
        float: the threshold, ``inf`` if no threshold meets the FPR cap

    Raises:
        ValueError: if only one class is present
    """
    _check_inputs(scores, labels, alpha)
    fpr, tpr, thresholds = roc_curve(scores, labels)
    return float(thresholds[_feasible_vertex(fpr, tpr, alpha)])


def r2_score(targets, predictions):
    """Coefficient of determination averaged over outputs.

    An output with constant targets scores 1 if predicted exactly and 0
    otherwise.
    """
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.ndim == 1:
        targets, predictions = targets[:, None], predictions[:, None]
    return float(np.mean(r2_per_output(targets, predictions)))


def r2_per_output(targets, predictions):
    """Coefficient of determination of each output column."""
    residual = np.sum((targets - predictions) ** 2, axis=0)
    spread = np.sum((targets - targets.mean(axis=0)) ** 2, axis=0)
    safe = np.where(spread > 0, spread, 1.0)
    return np.where(spread > 0, 1.0 - residual / safe, np.where(residual > 0, 0.0, 1.0))


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """Clean and adversarial performance of a model on one set of rows."""

    clean_pauc: float
    adversarial_pauc: float
    success_rate: float
    recall_at_fpr: float
    adversarial_recall: float
    operating_threshold: float
    norm_cap: float
    n_positives: int
    n_negatives: int
    n_attacked: int
    alpha: float = 0.01

    def to_record(self):
        return dataclasses.asdict(self)

    def summary(self):
        """Human-readable multi-line summary."""
        return (
            f"clean pAUC@{self.alpha:g}FPR:       {self.clean_pauc:.4f}\n"
            f"adversarial pAUC@{self.alpha:g}FPR: {self.adversarial_pauc:.4f}\n"
            f"recall (clean / attacked): {self.recall_at_fpr:.4f} / "
            f"{self.adversarial_recall:.4f}\n"
            f"attack success rate:       {self.success_rate:.4f}"
            f" ({self.n_attacked} attacked of {self.n_positives} positives,"
            f" norm cap {self.norm_cap:g})\n"
        )


def evaluate(
    model, clean_rows, attacked_rows, alpha=0.01, norm_cap=100.0, normalization="ratio"
):
    """Compares a model's performance on clean rows and on the same rows with
    positives replaced by their best attacks.

    The operating threshold is fixed on the clean rows and reused to decide
    which attacks succeeded.

    Args:
        model: anything with a ``score_rows(enriched)`` method returning
            fraud scores, e.g. :class:`~.GbdtModel`
        clean_rows (EnrichedDataset): the clean rows
        attacked_rows (EnrichedDataset): the attacked rows
        alpha (float): FPR cap of the metrics
        norm_cap (float): norm cap the attacks were generated under
        normalization (str): pAUC normalization

    Returns:
        EvalReport: the report

    Raises:
        ValueError: if the two row sets do not describe the same events
    """
    clean_ids = clean_rows.frame["event_id"].to_numpy()
    attacked_ids = attacked_rows.frame["event_id"].to_numpy()
    if len(clean_ids) != len(attacked_ids) or np.any(clean_ids != attacked_ids):
        raise ValueError("The clean and attacked rows do not describe the same events.")
    labels = clean_rows.labels
    if np.any(labels != attacked_rows.labels):
        raise ValueError("Attacks must not change labels.")

    clean_scores = np.asarray(model.score_rows(clean_rows))
    attacked_scores = np.asarray(model.score_rows(attacked_rows))
    threshold = operating_threshold(clean_scores, labels, alpha)

    positives = labels == 1
    detected = positives & (clean_scores >= threshold)
    flipped = detected & (attacked_scores < threshold)
    changed = np.any(clean_rows.features != attacked_rows.features, axis=1)

    report = EvalReport(
        clean_pauc=pauc_at_fpr(clean_scores, labels, alpha, normalization),
        adversarial_pauc=pauc_at_fpr(attacked_scores, labels, alpha, normalization),
        success_rate=float(flipped.sum() / detected.sum()) if detected.any() else 0.0,
        recall_at_fpr=recall_at_fpr(clean_scores, labels, alpha),
        adversarial_recall=float(np.mean(attacked_scores[positives] >= threshold)),
        operating_threshold=threshold,
        norm_cap=float(norm_cap),
        n_positives=int(positives.sum()),
        n_negatives=int((~positives).sum()),
        n_attacked=int((changed & positives).sum()),
        alpha=alpha,
    )
    logger.info(
        "Clean pAUC %.4f, adversarial pAUC %.4f at norm cap %g.",
        report.clean_pauc,
        report.adversarial_pauc,
        report.norm_cap,
    )
    return report


def reports_frame(reports, **columns):
    """Data frame with one row per report, prefixed with constant columns."""
    frame = pd.DataFrame([r.to_record() for r in reports])
    for i, (name, value) in enumerate(columns.items()):
        frame.insert(i, name, value)
    return frame
