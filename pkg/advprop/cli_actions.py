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
This module contains the pipeline stages run by the ``advprop`` command line
interface. Every stage reads and writes only its declared files inside the
configured output directory, so stages communicate through files alone.
"""
import logging
import os

import numpy as np
import pandas as pd

from advprop import advtrain, evaluation, learner, propagation, search, synthdata
from advprop.attack_model import DatasetStatistics
from advprop.feature_engine import compute_features, format_plan, load_enriched, save_enriched
from advprop.propagation import Assignment
from advprop.utils import ConfigurationError, derive_seed, make_rng, write_csv

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.csv"
ENRICHED_FILE = "enriched.csv"
PLAN_FILE = "plan.txt"
BASELINE_FILE = "baseline.model.yaml"
ESTIMATORS_FILE = "estimators.yaml"
QUALITY_FILE = "estimator_quality.csv"
BENCH_FILE = "attack_bench.csv"
ROBUST_PREFIX = "robust_"
MODEL_SUFFIX = ".model.yaml"
TRACE_FILE = "adv_trace.csv"
EVALUATION_FILE = "evaluation.csv"
REPORT_FILE = "report.txt"

PRODUCERS = {
    DATASET_FILE: "generate",
    ENRICHED_FILE: "featurize",
    BASELINE_FILE: "train-baseline",
    ESTIMATORS_FILE: "train-estimators",
    QUALITY_FILE: "train-estimators",
    BENCH_FILE: "attack-bench",
    TRACE_FILE: "adv-train",
    EVALUATION_FILE: "evaluate",
}

BENCH_COLUMNS = (
    "strategy",
    "allow_temporal",
    "norm_cap",
    "victims",
    "successes",
    "success_rate",
    "mean_evals",
)


def robust_name(variant):
    """Name of the robust model trained with an adversarial training
    configuration, e.g. ``robust_65`` or ``robust_65_notime`` without time
    shifts."""
    name = f"{ROBUST_PREFIX}{variant.search.norm_cap:g}"
    return name if variant.search.allow_temporal else f"{name}_notime"


def robust_file(variant):
    return robust_name(variant) + MODEL_SUFFIX


def output_path(config, filename):
    """Path of a pipeline file, creating the output directory if needed."""
    os.makedirs(config.output_dir, exist_ok=True)
    return config.path(filename)


def require(config, filename):
    """Path of a prerequisite file.

    Args:
        config (ExperimentConfig): the experiment configuration
        filename (str): one of the pipeline file names

    Returns:
        str: the path of the file

    Raises:
        FileNotFoundError: if the file has not been produced yet
    """
    filepath = config.path(filename)
    if not os.path.exists(filepath):
        producer = "adv-train" if filename.startswith(ROBUST_PREFIX) else PRODUCERS[filename]
        raise FileNotFoundError(
            f"The file {filepath} does not exist. Run 'advprop {producer}' first."
        )
    return filepath


class Pipeline:
    """Inputs shared by the stages following ``featurize``.

    The enriched dataset is read once and split by calendar weeks; estimators
    and models are read on demand.

    Args:
        config (ExperimentConfig): the experiment configuration
    """

    def __init__(self, config):
        self.config = config
        self.plan = config.features.load()
        self.enriched = load_enriched(require(config, ENRICHED_FILE), self.plan)
        weeks = config.splits
        self.split = synthdata.split(
            self.enriched.frame, weeks.train_weeks, weeks.val_weeks, weeks.test_weeks
        )
        self.train = self.enriched.take(self.split.train)
        self.validation = self.enriched.take(self.split.validation)
        self.test = self.enriched.take(self.split.test)

    def part(self, name):
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def estimators(self):
        """The assignment and estimators written by ``train-estimators``."""
        return propagation.load_estimators(
            require(self.config, ESTIMATORS_FILE), self.plan, self.enriched.profile_index
        )

    def propagator(self):
        assignment, estimators = self.estimators()
        statistics = DatasetStatistics.from_frame(self.train.frame)
        return search.Propagator(assignment, estimators, statistics, self.config.costs)

    def model(self, filename):
        """A saved classifier.

        Raises:
            ConfigurationError: if the classifier reads profiles the current
                estimators discard, i.e. it was trained before them
        """
        model = learner.load_model(require(self.config, filename))
        assignment, _ = self.estimators()
        stale = sorted(set(model.feature_names) & set(assignment.names(Assignment.DISCARDED)))
        if stale:
            raise ConfigurationError(
                f"The model {filename} uses the discarded profiles {stale}. "
                "Run 'advprop train-baseline' again after 'advprop train-estimators'."
            )
        return model

    def threshold(self, model, rows=None):
        """Operating threshold of ``model`` on clean rows, the validation
        split by default."""
        rows = self.validation if rows is None else rows
        return evaluation.operating_threshold(
            model.score_rows(rows), rows.labels, self.config.evaluate.alpha
        )


def detected_victims(rows, model, threshold, n_victims, seed, *names):
    """Positions of positives the model flags, subsampled to ``n_victims``.

    Args:
        rows (EnrichedDataset): the candidate rows
        model (GbdtModel): the attacked classifier
        threshold (float): the operating threshold
        n_victims (int): largest number of victims, ``0`` for all
        seed (int): the global seed
        *names (str): components naming the subsample stream

    Returns:
        array[int]: sorted row positions
    """
    positives = rows.positives()
    scores = model.score_rows(rows)[positives]
    detected = positives[scores >= threshold]
    if n_victims and len(detected) > n_victims:
        rng = make_rng(seed, "victims", *names)
        detected = np.sort(rng.choice(detected, size=n_victims, replace=False))
    return detected


def attack_positions(rows, positions, model, threshold, propagator, config, threads=1):
    """Attacks the rows at ``positions`` and returns the results together
    with a copy of ``rows`` in which the victims are replaced by their attacks."""
    scorer = search.Scorer(model, rows.plan, threshold)
    victims = [rows.row(int(i)) for i in positions]
    results = search.attack_rows(victims, scorer, propagator, config, threads)
    return results, rows.with_rows(positions, [r.row for r in results])


def generate(config):
    """Generates the synthetic dataset.

    Returns:
        str: the path of the dataset file
    """
    dataset = synthdata.generate(config.generator)
    logger.info("Generated %d transactions, %d fraudulent.", len(dataset), dataset["label"].sum())
    return synthdata.save_dataset(dataset, output_path(config, DATASET_FILE))


def featurize(config):
    """Computes the engineered features and writes the enriched dataset
    along with the feature plan it was computed with.

    Returns:
        str: the path of the enriched dataset
    """
    dataset = synthdata.load_dataset(require(config, DATASET_FILE))
    plan = config.features.load()
    enriched = compute_features(dataset, plan)
    with open(output_path(config, PLAN_FILE), "w") as f:
        f.write(format_plan(plan))
    return save_enriched(enriched, output_path(config, ENRICHED_FILE))


def train_baseline(config, tune=0):
    """Trains the baseline classifier on the clean training split.

    Profiles discarded by ``train-estimators`` are left out of the classifier
    when the estimator file exists; otherwise every feature is used.

    Args:
        config (ExperimentConfig): the experiment configuration
        tune (int): number of random hyperparameter trials, ``0`` to train
            with the configured parameters only

    Returns:
        str: the path of the model file
    """
    pipeline = Pipeline(config)
    columns = pipeline.plan.names
    if os.path.exists(config.path(ESTIMATORS_FILE)):
        assignment, _ = pipeline.estimators()
        columns = assignment.classifier_features(pipeline.plan)
    else:
        logger.info("No estimator file found; the baseline uses every feature.")

    if tune:
        model, params, score = learner.tune(
            pipeline.train, pipeline.validation, config.learner, tune, columns, config.seed
        )
        logger.info("Selected %s with validation pAUC %.4f.", params, score)
    else:
        model = learner.fit(
            pipeline.train, pipeline.validation, config.learner, feature_names=columns
        )
    logger.info("Baseline has %d rounds on %d features.", model.n_rounds, len(columns))
    return learner.save_model(model, output_path(config, BASELINE_FILE))


def train_estimators(config):
    """Trains the profile estimators on the training split.

    Returns:
        tuple[str, str]: the paths of the estimator file and the quality report
    """
    pipeline = Pipeline(config)
    assignment, estimators, quality = propagation.train_estimators(
        pipeline.train,
        config.estimators,
        seed=derive_seed(config.seed, "estimators"),
        index=pipeline.enriched.profile_index,
    )
    estimators_path = propagation.save_estimators(
        assignment, estimators, output_path(config, ESTIMATORS_FILE)
    )
    quality_path = write_csv(
        propagation.quality_frame(quality, assignment), output_path(config, QUALITY_FILE)
    )
    return estimators_path, quality_path


def attack_bench(config, threads=1):
    """Compares the search strategies against the baseline.

    Every strategy attacks the same detected positives under every norm cap
    and time-shift setting with the same evaluation budget.

    Returns:
        str: the path of the benchmark CSV
    """
    bench = config.attack_bench
    pipeline = Pipeline(config)
    model = pipeline.model(BASELINE_FILE)
    propagator = pipeline.propagator()
    threshold = pipeline.threshold(model)

    rows = pipeline.part(bench.split)
    victims = detected_victims(rows, model, threshold, bench.n_victims, config.seed, "bench")
    if len(victims) == 0:
        raise ValueError(f"The baseline flags no positives of the {bench.split} split.")
    scorer = search.Scorer(model, pipeline.plan, threshold)
    victim_rows = [rows.row(int(i)) for i in victims]

    records = []
    for name in bench.strategies:
        for temporal in bench.allow_temporal:
            for cap in bench.norm_caps:
                settings = config.search.replace(
                    strategy=search.Strategy(name),
                    norm_cap=cap,
                    allow_temporal=temporal,
                    seed=derive_seed(config.seed, "attack_bench", name, repr(cap), str(temporal)),
                )
                results = search.attack_rows(victim_rows, scorer, propagator, settings, threads)
                successes = sum(r.success for r in results)
                records.append(
                    {
                        "strategy": name,
                        "allow_temporal": temporal,
                        "norm_cap": cap,
                        "victims": len(results),
                        "successes": successes,
                        "success_rate": successes / len(results),
                        "mean_evals": float(np.mean([r.evaluations for r in results])),
                    }
                )
    frame = pd.DataFrame(records, columns=list(BENCH_COLUMNS))
    return write_csv(frame, output_path(config, BENCH_FILE))


def adv_train(config, threads=1):
    """Adversarially retrains the baseline once per norm cap and time-shift
    setting of the ``adv_train`` section.

    Returns:
        tuple[str]: the paths of the robust models followed by the path of
        the trace CSV
    """
    pipeline = Pipeline(config)
    baseline = pipeline.model(BASELINE_FILE)
    propagator = pipeline.propagator()

    paths, frames = [], []
    for variant in config.adv_variants:
        logger.info("Adversarial training of %s", robust_name(variant))
        model, trace = advtrain.adversarial_train(
            baseline,
            (pipeline.train, pipeline.validation),
            pipeline.plan,
            propagator,
            variant,
            threads,
        )
        paths.append(learner.save_model(model, output_path(config, robust_file(variant))))
        frame = advtrain.trace_frame(trace)
        frame.insert(0, "model", robust_name(variant))
        frame.insert(1, "train_cap", variant.search.norm_cap)
        frame.insert(2, "allow_temporal", variant.search.allow_temporal)
        frames.append(frame)
    trace_path = write_csv(pd.concat(frames, ignore_index=True), output_path(config, TRACE_FILE))
    return (*paths, trace_path)


def evaluate(config, threads=1):
    """Evaluates the baseline and every robust model on the test split under
    every norm cap of the evaluation grid.

    The operating threshold of each model is fixed on the clean test rows.
    A norm cap of zero reports the clean performance. The evaluation CSV
    holds one row per model and evaluation norm cap, with the norm cap and
    time-shift setting the model was trained under.

    Returns:
        str: the path of the evaluation CSV
    """
    settings = config.evaluate
    pipeline = Pipeline(config)
    propagator = pipeline.propagator()
    test = pipeline.test
    models = {"baseline": (pipeline.model(BASELINE_FILE), 0.0, False)}
    for variant in config.adv_variants:
        models[robust_name(variant)] = (
            pipeline.model(robust_file(variant)),
            variant.search.norm_cap,
            variant.search.allow_temporal,
        )

    frames = []
    for name, (model, train_cap, train_temporal) in models.items():
        threshold = pipeline.threshold(model, test)
        victims = detected_victims(
            test, model, threshold, settings.n_victims, config.seed, "evaluate", name
        )
        reports = []
        for cap in settings.norm_caps:
            attacked = test
            if cap > 0 and len(victims):
                search_config = config.search.replace(
                    strategy=search.Strategy(settings.strategy),
                    norm_cap=cap,
                    allow_temporal=settings.allow_temporal,
                    seed=derive_seed(config.seed, "evaluate", name, repr(cap)),
                )
                _, attacked = attack_positions(
                    test, victims, model, threshold, propagator, search_config, threads
                )
            reports.append(
                evaluation.evaluate(
                    model, test, attacked, settings.alpha, cap, settings.normalization
                )
            )
        frame = evaluation.reports_frame(
            reports, model=name, train_cap=train_cap, train_temporal=train_temporal
        )
        frames.append(frame.rename(columns={"norm_cap": "eval_cap", "adversarial_pauc": "adv_pauc"}))
    return write_csv(pd.concat(frames, ignore_index=True), output_path(config, EVALUATION_FILE))


def _table(title, frame):
    return f"{title}\n{'=' * len(title)}\n{frame.to_string()}\n"


def report(config):
    """Merges the metric files produced so far into plain-text tables.

    Returns:
        str: the path of the report

    Raises:
        FileNotFoundError: if no metric file exists yet
    """
    sections = []
    if os.path.exists(config.path(QUALITY_FILE)):
        quality = pd.read_csv(config.path(QUALITY_FILE))
        sections.append(_table("Estimator quality", quality.set_index("profile")))
    if os.path.exists(config.path(BENCH_FILE)):
        bench = pd.read_csv(config.path(BENCH_FILE))
        table = bench.pivot(
            index="norm_cap", columns=["strategy", "allow_temporal"], values="success_rate"
        )
        sections.append(_table("Attack success rate by norm cap", table))
    if os.path.exists(config.path(TRACE_FILE)):
        trace = pd.read_csv(config.path(TRACE_FILE))
        sections.append(_table("Adversarial training", trace.set_index(["model", "round"])))
    if os.path.exists(config.path(EVALUATION_FILE)):
        results = pd.read_csv(config.path(EVALUATION_FILE))
        table = results.pivot(index="eval_cap", columns="model", values="adv_pauc")
        sections.append(_table("Adversarial pAUC by evaluation norm cap", table))

    if not sections:
        raise FileNotFoundError(
            f"No metric files in {config.output_dir}. Run 'advprop attack-bench', "
            "'advprop adv-train' or 'advprop evaluate' first."
        )
    filepath = output_path(config, REPORT_FILE)
    with open(filepath, "w") as f:
        f.write("\n".join(sections))
    return filepath
