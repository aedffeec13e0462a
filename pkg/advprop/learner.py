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
Histogram-based gradient-boosted decision trees with warm-start
continuation, used as the fraud classifier and as the multi-output profile
estimator.
"""
import dataclasses
import enum
import logging

import numpy as np
import yaml

from advprop.evaluation import pauc_at_fpr, r2_score
from advprop.utils import make_rng

logger = logging.getLogger(__name__)

MODEL_FORMAT = "advprop-gbdt"
MODEL_VERSION = 1


class Objective(enum.Enum):
    LOGISTIC = "logistic"
    MULTI_SQUARED_ERROR = "multi_squared_error"


@dataclasses.dataclass(frozen=True)
class TrainParams:
    """Boosting hyperparameters.

    Args:
        n_rounds (int): maximal number of boosting rounds
        learning_rate (float): shrinkage applied to every tree
        max_depth (int): depth of the level-wise grown trees
        min_child_samples (int): smallest number of rows in a leaf
        feature_subsample (float): fraction of features considered per tree
        early_stopping_patience (int): rounds without validation improvement
            before training stops
        histogram_bins (int): maximal number of bins per feature
        l2_regularization (float): L2 penalty on leaf values
        seed (int): seed of the feature subsampling
    """

    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_samples: int = 20
    feature_subsample: float = 1.0
    early_stopping_patience: int = 20
    histogram_bins: int = 256
    l2_regularization: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds has to be non-negative.")
        for name in ("max_depth", "min_child_samples", "early_stopping_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} has to be positive.")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate has to be in (0, 1].")
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample has to be in (0, 1].")
        if not 2 <= self.histogram_bins <= 65535:
            raise ValueError("histogram_bins has to be in [2, 65535].")
        if self.l2_regularization < 0:
            raise ValueError("l2_regularization has to be non-negative.")
        if self.n_rounds and self.early_stopping_patience > self.n_rounds:
            raise ValueError("early_stopping_patience cannot exceed n_rounds.")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class Tree:
    """A regression tree stored as parallel node arrays.

    Internal nodes send a row left iff ``x[feature] <= threshold``; leaves
    have ``feature == -1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def predict(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.depth):
            internal = np.flatnonzero(self.feature[node] >= 0)
            if len(internal) == 0:
                break
            current = node[internal]
            go_left = X[internal, self.feature[current]] <= self.threshold[current]
            node[internal] = np.where(go_left, self.left[current], self.right[current])
        return self.value[node]

    def to_records(self):
        return [
            [int(f), float(t), int(l), int(r), float(v)]
            for f, t, l, r, v in zip(self.feature, self.threshold, self.left, self.right, self.value)
        ]

    @classmethod
    def from_records(cls, records):
        columns = list(zip(*records))
        return cls(
            np.array(columns[0], dtype=np.int64),
            np.array(columns[1], dtype=np.float64),
            np.array(columns[2], dtype=np.int64),
            np.array(columns[3], dtype=np.int64),
            np.array(columns[4], dtype=np.float64),
        )


def _sigmoid(raw):
    out = np.empty_like(raw)
    positive = raw >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-raw[positive]))
    z = np.exp(raw[~positive])
    out[~positive] = z / (1.0 + z)
    return out


@dataclasses.dataclass(frozen=True)
class GbdtModel:
    """Additive tree ensemble.

    The raw prediction of output ``k`` is ``base_score[k] + learning_rate *
    sum(tree(x))`` over the trees of that output. Classification scores are
    the sigmoid of the raw prediction.

    Args:
        objective (Objective): the training objective
        learning_rate (float): shrinkage of every tree
        base_score (tuple[float]): initial raw prediction per output
        feature_names (tuple[str]): the input layout
        trees (tuple[tuple[Tree]]): one tuple of ``n_outputs`` trees per round
    """

    objective: Objective
    learning_rate: float
    base_score: tuple
    feature_names: tuple
    trees: tuple = ()

    @property
    def n_outputs(self):
        return len(self.base_score)

    @property
    def n_rounds(self):
        return len(self.trees)

    def truncate(self, n_rounds):
        """The model made of the first ``n_rounds`` rounds."""
        return dataclasses.replace(self, trees=self.trees[:n_rounds])

    def select_outputs(self, outputs):
        """The model restricted to the given output columns."""
        outputs = list(outputs)
        return dataclasses.replace(
            self,
            base_score=tuple(self.base_score[k] for k in outputs),
            trees=tuple(tuple(round_trees[k] for k in outputs) for round_trees in self.trees),
        )

    def _check_layout(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"Expected rows with {len(self.feature_names)} features, got shape {X.shape}."
            )
        return X

    def raw_predict(self, X):
        """Raw additive predictions of shape ``(n, n_outputs)``."""
        X = self._check_layout(X)
        raw = np.tile(np.asarray(self.base_score, dtype=np.float64), (len(X), 1))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                raw[:, k] += self.learning_rate * tree.predict(X)
        return raw

    def predict(self, X):
        """Scores in ``(0, 1)`` for classification, one row of outputs per
        input row for regression."""
        raw = self.raw_predict(X)
        if self.objective is Objective.LOGISTIC:
            return _sigmoid(raw[:, 0])
        return raw

    score = predict

    def rows_matrix(self, enriched):
        """Extracts this model's input layout from an enriched dataset.

        Raises:
            ValueError: if a feature of the layout is missing
        """
        missing = [name for name in self.feature_names if name not in enriched.plan.position]
        if missing:
            raise ValueError(f"The rows miss the model's features {missing}.")
        return enriched.matrix(self.feature_names)

    def score_rows(self, enriched):
        return self.predict(self.rows_matrix(enriched))


def predict(model, rows):
    """Scores rows with a model.

    Args:
        model (GbdtModel): the model
        rows (array[float] or EnrichedDataset): rows in the model's layout

    Returns:
        array[float]: the scores

    Raises:
        ValueError: if the layout does not match
    """
    if hasattr(rows, "plan"):
        return model.score_rows(rows)
    return model.predict(rows)


class BinMapper:
    """Quantile bins of every feature. Bin ``b`` of a feature holds the
    values in ``(edges[b - 1], edges[b]]``."""

    def __init__(self, edges):
        self.edges = edges
        self.n_bins = max((len(e) + 1 for e in edges), default=1)

    @classmethod
    def fit(cls, X, max_bins):
        edges = []
        for column in X.T:
            unique = np.unique(column)
            if len(unique) <= max_bins:
                edges.append(unique[:-1])
            else:
                quantiles = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
                edges.append(np.unique(quantiles))
        return cls(edges)

    def transform(self, X):
        binned = np.empty(X.shape, dtype=np.int64)
        for j, edges in enumerate(self.edges):
            binned[:, j] = np.searchsorted(edges, X[:, j], side="left")
        return binned


def _grow_tree(binned, flat, bins, g, h, params, feature_mask):
    """Grows one tree level by level from gradient histograms.

    Args:
        binned (array[int]): bin index of every row and feature
        flat (array[int]): ``binned`` offset by ``feature * n_bins``
        bins (BinMapper): the bins, providing split thresholds
        g, h (array[float]): first and second order gradients per row
        params (TrainParams): the hyperparameters
        feature_mask (array[bool]): features allowed to split on

    Returns:
        Tree: the grown tree
    """
    n, n_features = binned.shape
    n_bins = bins.n_bins
    lam = params.l2_regularization
    min_child = params.min_child_samples

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    node_of = np.zeros(n, dtype=np.int64)
    active = [0]

    for depth in range(params.max_depth + 1):
        if not active:
            break
        slot_of = np.full(len(feature), -1, dtype=np.int64)
        slot_of[active] = np.arange(len(active))
        slot = slot_of[node_of]
        rows = np.flatnonzero(slot >= 0)
        slot = slot[rows]
        n_active = len(active)

        G = np.bincount(slot, weights=g[rows], minlength=n_active)
        H = np.bincount(slot, weights=h[rows], minlength=n_active)
        leaf_values = -G / (H + lam)

        if depth == params.max_depth:
            for a, node in enumerate(active):
                value[node] = leaf_values[a]
            break

        size = n_active * n_features * n_bins
        idx = (flat[rows] + (slot * n_features * n_bins)[:, None]).ravel()
        shape = (n_active, n_features, n_bins)
        GL = np.bincount(idx, weights=np.repeat(g[rows], n_features), minlength=size)
        HL = np.bincount(idx, weights=np.repeat(h[rows], n_features), minlength=size)
        CL = np.bincount(idx, minlength=size)
        GL = np.cumsum(GL.reshape(shape), axis=2)
        HL = np.cumsum(HL.reshape(shape), axis=2)
        CL = np.cumsum(CL.reshape(shape), axis=2)
        C = CL[:, 0, -1]
        GR = G[:, None, None] - GL
        HR = H[:, None, None] - HL
        CR = C[:, None, None] - CL

        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - (G**2 / (H + lam))[:, None, None]
        valid = (CL >= min_child) & (CR >= min_child) & feature_mask[None, :, None]
        gain = np.where(valid, gain, -np.inf).reshape(n_active, -1)
        best = np.argmax(gain, axis=1)
        best_gain = gain[np.arange(n_active), best]

        split_feature = np.full(len(feature), -1, dtype=np.int64)
        split_bin = np.zeros(len(feature), dtype=np.int64)
        next_active = []
        for a, node in enumerate(active):
            if not np.isfinite(best_gain[a]) or best_gain[a] <= 1e-12:
                value[node] = leaf_values[a]
                continue
            f, b = divmod(int(best[a]), n_bins)
            feature[node] = f
            threshold[node] = float(bins.edges[f][b])
            split_feature[node], split_bin[node] = f, b
            for side in (left, right):
                side[node] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            next_active += [left[node], right[node]]

        if next_active:
            nodes = node_of[rows]
            f = split_feature[nodes]
            moving = f >= 0
            rows, nodes, f = rows[moving], nodes[moving], f[moving]
            go_left = binned[rows, f] <= split_bin[nodes]
            node_of[rows] = np.where(
                go_left, np.asarray(left)[nodes], np.asarray(right)[nodes]
            )
        active = next_active

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


def _as_arrays(data, feature_names, objective):
    """Features and targets of a ``(X, y)`` pair or an enriched dataset."""
    if data is None:
        return None, None
    if hasattr(data, "plan"):
        X = data.matrix(feature_names)
        y = data.labels.astype(np.float64)
    else:
        X, y = data
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    if objective is Objective.MULTI_SQUARED_ERROR and y.ndim == 1:
        y = y[:, None]
    if objective is Objective.LOGISTIC:
        y = y.ravel()
    return X, y


class Booster:
    """Boosting state that adds one round at a time.

    The booster continues from ``model`` without modifying it and tracks
    the validation metric after every round for early stopping.

    Args:
        model (GbdtModel): the ensemble to continue from
        train (tuple or EnrichedDataset): training rows and targets
        val (tuple or EnrichedDataset): validation rows and targets, or ``None``
        params (TrainParams): the hyperparameters
    """

    def __init__(self, model, train, val, params):
        self.model = model
        self.params = params
        self.objective = model.objective

        self.X, self.y = _as_arrays(train, model.feature_names, self.objective)
        self.X_val, self.y_val = _as_arrays(val, model.feature_names, self.objective)
        if self.X_val is not None and len(self.X_val) == 0:
            self.X_val = self.y_val = None
        if self.objective is Objective.LOGISTIC:
            _check_two_classes(self.y)

        self.bins = BinMapper.fit(model._check_layout(self.X), params.histogram_bins)
        self.binned = self.bins.transform(self.X)
        self.flat = self.binned + np.arange(self.X.shape[1]) * self.bins.n_bins

        self.raw = model.raw_predict(self.X)
        self.raw_val = None if self.X_val is None else model.raw_predict(self.X_val)
        self.rng = make_rng(params.seed, "learner", model.n_rounds)

        self.new_trees = []
        self.history = [self.metric()]
        self.best_rounds = 0
        self.best_metric = self.history[0]
        self.rounds_since_best = 0

    @property
    def has_validation(self):
        return self.raw_val is not None

    def metric(self):
        """Validation metric of the current ensemble: pAUC at 1% FPR for
        classification, mean R² for regression. ``None`` without validation
        rows."""
        if not self.has_validation:
            return None
        if self.objective is Objective.LOGISTIC:
            if self.y_val.min() == self.y_val.max():
                return None
            return pauc_at_fpr(_sigmoid(self.raw_val[:, 0]), self.y_val, 0.01)
        return r2_score(self.y_val, self.raw_val)

    def gradients(self):
        if self.objective is Objective.LOGISTIC:
            p = _sigmoid(self.raw[:, 0])
            return (p - self.y)[:, None], np.maximum(p * (1.0 - p), 1e-16)[:, None]
        return self.raw - self.y, np.ones_like(self.raw)

    def training_loss(self):
        """Mean training loss of the current ensemble."""
        if self.objective is Objective.LOGISTIC:
            raw = self.raw[:, 0]
            return float(np.mean(np.logaddexp(0.0, raw) - self.y * raw))
        return float(np.mean((self.raw - self.y) ** 2))

    @property
    def converged(self):
        """bool: whether early stopping would stop now"""
        return self.rounds_since_best >= self.params.early_stopping_patience

    def step(self):
        """Adds one boosting round (one tree per output)."""
        n_features = self.X.shape[1]
        keep = max(1, int(round(self.params.feature_subsample * n_features)))
        mask = np.zeros(n_features, dtype=bool)
        mask[self.rng.choice(n_features, size=keep, replace=False)] = True

        g, h = self.gradients()
        round_trees = []
        for k in range(self.model.n_outputs):
            tree = _grow_tree(self.binned, self.flat, self.bins, g[:, k], h[:, k], self.params, mask)
            round_trees.append(tree)
            self.raw[:, k] += self.model.learning_rate * tree.predict(self.X)
            if self.has_validation:
                self.raw_val[:, k] += self.model.learning_rate * tree.predict(self.X_val)
        self.new_trees.append(tuple(round_trees))

        current = self.metric()
        self.history.append(current)
        if current is not None and (self.best_metric is None or current > self.best_metric):
            self.best_metric = current
            self.best_rounds = len(self.new_trees)
            self.rounds_since_best = 0
        else:
            self.rounds_since_best += 1
        logger.debug("Round %d: validation metric %s.", len(self.new_trees), current)

    def result(self, best=True):
        """The ensemble with the new rounds up to the best validation round
        (or all new rounds)."""
        rounds = self.best_rounds if best and self.best_metric is not None else len(self.new_trees)
        return dataclasses.replace(
            self.model, trees=self.model.trees + tuple(self.new_trees[:rounds])
        )


def _check_two_classes(y):
    if len(y) == 0 or y.min() == y.max():
        raise ValueError("Training a classifier requires both classes in the labels.")


def _run(booster, n_rounds):
    for _ in range(n_rounds):
        booster.step()
        if booster.best_metric is not None and booster.converged:
            break
    model = booster.result()
    logger.info(
        "Boosted %d rounds, kept %d (validation metric %s).",
        len(booster.new_trees),
        model.n_rounds - booster.model.n_rounds,
        booster.best_metric,
    )
    return model


def fit(train, val, params, objective=Objective.LOGISTIC, feature_names=None):
    """Trains a tree ensemble with early stopping on the validation rows.

    **Example**

    >>> model = fit(train, val, TrainParams(n_rounds=100), feature_names=columns)
    >>> scores = model.score_rows(test)

    Args:
        train (tuple or EnrichedDataset): ``(X, y)`` or enriched rows
            labelled for fraud
        val (tuple or EnrichedDataset): validation rows in the same form, or
            ``None`` to disable early stopping
        params (TrainParams): the hyperparameters
        objective (Objective or str): ``logistic`` or ``multi_squared_error``
        feature_names (Sequence[str]): the input layout; required for enriched
            rows, generated for arrays if omitted

    Returns:
        GbdtModel: the model truncated to its best validation round

    Raises:
        ValueError: if the classification labels contain a single class
    """
    objective = Objective(objective)
    if feature_names is None:
        if hasattr(train, "plan"):
            feature_names = train.names
        else:
            feature_names = [f"x{i}" for i in range(np.shape(train[0])[1])]
    X, y = _as_arrays(train, feature_names, objective)

    if objective is Objective.LOGISTIC:
        _check_two_classes(y)
        rate = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        base_score = (float(np.log(rate / (1.0 - rate))),)
    else:
        base_score = tuple(float(v) for v in y.mean(axis=0))

    model = GbdtModel(objective, params.learning_rate, base_score, tuple(feature_names))
    return _run(Booster(model, train, val, params), params.n_rounds)


def continue_fit(model, train, val, extra_rounds, params):
    """Appends up to ``extra_rounds`` rounds to a model, with early stopping.

    The learning rate of ``model`` is kept; ``model`` itself is not changed.

    Raises:
        ValueError: if the rows do not match the model's layout
    """
    if extra_rounds < 0:
        raise ValueError("extra_rounds has to be non-negative.")
    return _run(Booster(model, train, val, params), extra_rounds)


_TUNING_SPACE = {
    "learning_rate": (0.05, 0.1, 0.2),
    "max_depth": (3, 4, 5, 6, 8),
    "min_child_samples": (5, 10, 20, 50),
    "feature_subsample": (0.6, 0.8, 1.0),
    "l2_regularization": (0.1, 1.0, 10.0),
}


def tune(train, val, params, n_trials, feature_names=None, seed=0):
    """Random search over learner hyperparameters scored by validation pAUC.

    The first trial always uses ``params`` unchanged.

    Returns:
        tuple[GbdtModel, TrainParams, float]: the best model, its parameters
        and its validation pAUC
    """
    rng = make_rng(seed, "learner", "tune")
    best = None
    for trial in range(max(1, n_trials)):
        candidate = params
        if trial:
            candidate = params.replace(
                **{name: values[rng.integers(len(values))] for name, values in _TUNING_SPACE.items()}
            )
        model = fit(train, val, candidate, Objective.LOGISTIC, feature_names)
        score = pauc_at_fpr(model.score_rows(val), val.labels, 0.01)
        logger.info("Tuning trial %d: validation pAUC %.4f with %s.", trial, score, candidate)
        if best is None or score > best[2]:
            best = (model, candidate, score)
    return best


def model_to_document(model):
    """Plain-data form of a model, as stored in model and estimator files."""
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "objective": model.objective.value,
        "learning_rate": float(model.learning_rate),
        "base_score": [float(v) for v in model.base_score],
        "feature_names": list(model.feature_names),
        "trees": [[tree.to_records() for tree in round_trees] for round_trees in model.trees],
    }


def model_from_document(document, source="the document"):
    """Rebuilds a model from :func:`model_to_document` output.

    Raises:
        ValueError: if the document is not a model of a supported version
    """
    if not isinstance(document, dict) or document.get("format") != MODEL_FORMAT:
        raise ValueError(f"{source} is not a model file.")
    if document.get("version") != MODEL_VERSION:
        raise ValueError(f"Unsupported model version {document.get('version')}.")
    return GbdtModel(
        objective=Objective(document["objective"]),
        learning_rate=document["learning_rate"],
        base_score=tuple(document["base_score"]),
        feature_names=tuple(document["feature_names"]),
        trees=tuple(
            tuple(Tree.from_records(records) for records in round_trees)
            for round_trees in document["trees"]
        ),
    )


def save_model(model, filepath):
    """Writes a model as a versioned YAML document.

    Floats are written with ``repr`` precision so that loading restores the
    exact scores.
    """
    document = model_to_document(model)
    with open(filepath, "w") as f:
        yaml.safe_dump(document, f, sort_keys=False, default_flow_style=None)
    return str(filepath)


def load_model(filepath):
    """Reads a model written by :func:`save_model`.

    Raises:
        ValueError: if the file is not a model file of a supported version
    """
    with open(filepath) as f:
        document = yaml.safe_load(f)
    return model_from_document(document, filepath)
