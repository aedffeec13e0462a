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
The adversarial training loop: attack a fraction of the training positives
and all validation positives, replace them by their attacks, continue
boosting from the current model and evaluate against fresh attacks.
"""
import dataclasses
import enum
import logging
import re

import numpy as np
import pandas as pd

from advprop.evaluation import evaluate, operating_threshold
from advprop.learner import Booster, TrainParams
from advprop.search import Scorer, SearchConfig, attack_rows
from advprop.utils import ConfigurationError, derive_seed, make_rng

logger = logging.getLogger(__name__)


class ScheduleKind(enum.Enum):
    PERIODIC = "periodic"
    ON_CONVERGENCE = "on_convergence"


class Gate(enum.Enum):
    ATTACK_NOW = "attack_now"
    KEEP_BOOSTING = "keep_boosting"


@dataclasses.dataclass(frozen=True)
class Schedule:
    """When to generate new attacks during boosting: every ``period`` rounds,
    or once early stopping on the validation rows fires."""

    kind: ScheduleKind = ScheduleKind.ON_CONVERGENCE
    period: int = 1

    def __post_init__(self):
        if self.period < 1:
            raise ConfigurationError("The period of a periodic schedule has to be at least 1.")

    @classmethod
    def parse(cls, text):
        """Parses ``"on_convergence"`` or ``"periodic(k)"``."""
        text = str(text).strip()
        if text == ScheduleKind.ON_CONVERGENCE.value:
            return cls(ScheduleKind.ON_CONVERGENCE)
        match = re.fullmatch(r"periodic\((\d+)\)", text)
        if match is None:
            raise ConfigurationError(f"Unknown schedule {text!r}.")
        return cls(ScheduleKind.PERIODIC, int(match.group(1)))

    def __str__(self):
        if self.kind is ScheduleKind.PERIODIC:
            return f"periodic({self.period})"
        return self.kind.value


@dataclasses.dataclass(frozen=True)
class GateState:
    """Boosting progress since the last attack."""

    rounds_since_attack: int
    rounds_since_best: int
    patience: int


def schedule_gate(state, schedule):
    """Decides whether to attack now or to keep boosting.

    **Example**

    >>> schedule_gate(GateState(3, 0, 5), Schedule(ScheduleKind.PERIODIC, 3))
    <Gate.ATTACK_NOW: 'attack_now'>

    Args:
        state (GateState): boosting progress since the last attack
        schedule (Schedule): the schedule

    Returns:
        Gate: the decision
    """
    if schedule.kind is ScheduleKind.PERIODIC:
        due = state.rounds_since_attack > 0 and state.rounds_since_attack % schedule.period == 0
    else:
        due = state.rounds_since_best >= state.patience
    return Gate.ATTACK_NOW if due else Gate.KEEP_BOOSTING


class Mode(enum.Enum):
    REPLACE = "replace"
    AUGMENT = "augment"


@dataclasses.dataclass(frozen=True)
class AdvTrainConfig:
    """Settings of adversarial training.

    Args:
        adversarial_fraction (float): share of training positives attacked
            per round, in ``(0, 1]``
        schedule (Schedule): when to attack during boosting
        search (SearchConfig): the attack search of every round
        max_adv_rounds (int): largest number of attack rounds
        stop_epsilon (float): adversarial pAUC improvement that resets the
            patience counter
        stop_patience (int): rounds without such an improvement before stopping
        mode (Mode): replace attacked training rows or append the attacks
        boost_rounds (int): largest number of boosting rounds between attacks
        params (TrainParams): the boosting hyperparameters
        alpha (float): FPR cap of the metrics
        normalization (str): pAUC normalization
        seed (int): seed of victim sampling and attack generation
    """

    adversarial_fraction: float = 0.05
    schedule: Schedule = Schedule()
    search: SearchConfig = SearchConfig(norm_cap=65.0)
    max_adv_rounds: int = 25
    stop_epsilon: float = 0.002
    stop_patience: int = 3
    mode: Mode = Mode.REPLACE
    boost_rounds: int = 50
    params: TrainParams = TrainParams(early_stopping_patience=5)
    alpha: float = 0.01
    normalization: str = "ratio"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.adversarial_fraction <= 1:
            raise ConfigurationError("adversarial_fraction has to be in (0, 1].")
        if self.max_adv_rounds < 1 or self.stop_patience < 1 or self.boost_rounds < 1:
            raise ConfigurationError(
                "max_adv_rounds, stop_patience and boost_rounds have to be at least 1."
            )
        if self.stop_epsilon < 0:
            raise ConfigurationError("stop_epsilon has to be non-negative.")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclasses.dataclass(frozen=True)
class TraceRecord:
    """Metrics of the model after one adversarial round."""

    round: int
    clean_pauc: float
    adversarial_pauc: float
    success_rate: float
    n_attacked: int
    trees_added: int


def _positives(split, name):
    positives = split.positives()
    if len(positives) == 0:
        raise ValueError(f"The {name} split contains no positives to attack.")
    return positives


def _attack(split, positions, model, threshold, propagator, search, threads):
    scorer = Scorer(model, split.plan, threshold)
    results = attack_rows([split.row(int(i)) for i in positions], scorer, propagator, search, threads)
    return results, [r.row for r in results]


def _threshold(model, split, alpha):
    return operating_threshold(model.score_rows(split), split.labels, alpha)


def _boost(model, train, val, config):
    booster = Booster(model, train, val, config.params)
    rounds = 0
    while rounds < config.boost_rounds:
        booster.step()
        rounds += 1
        state = GateState(rounds, booster.rounds_since_best, config.params.early_stopping_patience)
        if schedule_gate(state, config.schedule) is Gate.ATTACK_NOW:
            break
    return booster.result(best=config.schedule.kind is ScheduleKind.ON_CONVERGENCE)


def adversarial_train(baseline, splits, plan, propagator, config, threads=1):
    """Adversarially retrains a classifier with warm starts.

    Every round samples a fresh ``adversarial_fraction`` of the training
    positives, attacks them and all validation positives with the current
    model, replaces them by their attacks in copies of both splits and
    continues boosting until the schedule asks for new attacks. The updated
    model is then evaluated against newly generated validation attacks.
    Training stops once the adversarial pAUC improved by less than
    ``stop_epsilon`` for ``stop_patience`` rounds.

    Args:
        baseline (GbdtModel): the classifier trained on clean data
        splits (tuple[EnrichedDataset]): the training and validation rows
        plan (FeaturePlan): the feature plan of the rows
        propagator (Propagator): trained estimators and sampling statistics
        config (AdvTrainConfig): the settings
        threads (int): worker threads of the attack searches

    Returns:
        tuple[GbdtModel, list[TraceRecord]]: the model of the round with the
        best adversarial pAUC and the per-round trace

    Raises:
        ValueError: if a split has no positives
    """
    train, val = splits
    if train.plan != plan or val.plan != plan:
        raise ValueError("The splits were not enriched with the given feature plan.")
    train_positives = _positives(train, "training")
    val_positives = _positives(val, "validation")
    n_victims = max(1, int(round(config.adversarial_fraction * len(train_positives))))

    model = baseline
    trace, models = [], []
    best, stalled = -np.inf, 0

    for r in range(1, config.max_adv_rounds + 1):
        rng = make_rng(config.seed, "advtrain", "victims", r)
        victims = np.sort(rng.choice(train_positives, size=n_victims, replace=False))
        threshold = _threshold(model, val, config.alpha)

        search = config.search.replace(seed=derive_seed(config.seed, "advtrain", "train", r))
        results, train_rows = _attack(
            train, victims, model, threshold, propagator, search, threads
        )
        _, val_rows = _attack(val, val_positives, model, threshold, propagator, search, threads)

        augment = config.mode is Mode.AUGMENT
        adv_train = train.with_rows(victims, train_rows, append=augment)
        adv_val = val.with_rows(val_positives, val_rows)

        updated = _boost(model, adv_train, adv_val, config)
        trees_added = updated.n_rounds - model.n_rounds
        model = updated

        # Fresh validation attacks against the updated model
        eval_search = config.search.replace(seed=derive_seed(config.seed, "advtrain", "eval", r))
        eval_threshold = _threshold(model, val, config.alpha)
        _, eval_rows = _attack(
            val, val_positives, model, eval_threshold, propagator, eval_search, threads
        )
        report = evaluate(
            model,
            val,
            val.with_rows(val_positives, eval_rows),
            config.alpha,
            config.search.norm_cap,
            config.normalization,
        )

        record = TraceRecord(
            round=r,
            clean_pauc=report.clean_pauc,
            adversarial_pauc=report.adversarial_pauc,
            success_rate=report.success_rate,
            n_attacked=sum(not res.attack.is_empty for res in results),
            trees_added=trees_added,
        )
        trace.append(record)
        models.append(model)
        logger.info(
            "Adversarial round %d: clean pAUC %.4f, adversarial pAUC %.4f, %d trees added.",
            r,
            record.clean_pauc,
            record.adversarial_pauc,
            trees_added,
        )

        if record.adversarial_pauc > best + config.stop_epsilon:
            stalled = 0
        else:
            stalled += 1
        best = max(best, record.adversarial_pauc)
        if stalled >= config.stop_patience:
            logger.info("Adversarial pAUC converged after %d rounds.", r)
            break

    winner = int(np.argmax([record.adversarial_pauc for record in trace]))
    return models[winner], trace


def trace_frame(trace):
    """The trace as a data frame with one row per round."""
    columns = [field.name for field in dataclasses.fields(TraceRecord)]
    return pd.DataFrame([dataclasses.asdict(record) for record in trace], columns=columns)
