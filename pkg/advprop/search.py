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
Black-box attack search with access to model scores: random search,
stochastic coordinate descent in a greedy and a cost-efficient variant,
and greedy search, all under a cap on the attack norm.
"""
import concurrent.futures
import dataclasses
import enum
import logging

import numpy as np

from advprop.attack_model import (
    DEFAULT_COSTS,
    AttackVector,
    CardAction,
    Slot,
    sample_card_bundle,
    sample_component,
)
from advprop.propagation import propagate
from advprop.utils import MS_PER_MINUTE, ConfigurationError, make_rng

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 10


class Strategy(enum.Enum):
    RANDOM = "random"
    SCD_GREEDY = "scd_greedy"
    SCD_COST_EFFICIENT = "scd_cost_efficient"
    GREEDY = "greedy"


@dataclasses.dataclass(frozen=True)
class SearchConfig:
    """Settings of an attack search.

    Args:
        strategy (Strategy): the search strategy
        norm_cap (float): largest allowed attack norm, in ``[0, 100]``
        budget (int): largest number of score evaluations per victim,
            including the clean row
        random_iters (int): candidates drawn by random search
        bernoulli_p (float): probability of perturbing a slot in random search
        grid_points (int): grid size of the amount and time slots
        card_switches (int): switch bundles sampled per card grid
        allow_temporal (bool): whether the time slot may be perturbed
        seed (int): the seed of the per-victim random generators
    """

    strategy: Strategy = Strategy.GREEDY
    norm_cap: float = 100.0
    budget: int = 1000
    random_iters: int = 500
    bernoulli_p: float = 0.2
    grid_points: int = 16
    card_switches: int = 8
    allow_temporal: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0 <= self.norm_cap <= 100:
            raise ConfigurationError(f"norm_cap has to be in [0, 100], got {self.norm_cap}.")
        if self.budget < 1:
            raise ConfigurationError("budget has to be at least 1.")
        if self.random_iters < 0 or self.grid_points < 2 or self.card_switches < 0:
            raise ConfigurationError(
                "random_iters, grid_points and card_switches have to be non-negative "
                "and grid_points at least 2."
            )
        if not 0 < self.bernoulli_p <= 1:
            raise ConfigurationError("bernoulli_p has to be in (0, 1].")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def slots(self):
        """tuple[Slot]: the slots the search may perturb"""
        return tuple(s for s in Slot if s is not Slot.TIME or self.allow_temporal)


@dataclasses.dataclass(frozen=True)
class AttackResult:
    """Outcome of the search against one victim.

    ``success`` holds iff the clean row was flagged and the best attack
    scores below the threshold. ``exhausted`` is set when the evaluation
    budget ran out before the search converged.
    """

    event_id: int
    attack: AttackVector
    score: float
    clean_score: float
    success: bool
    evaluations: int
    norm: float
    exhausted: bool = False
    row: object = None


class Scorer:
    """Scores full feature vectors with a model restricted to its layout.

    Args:
        model (GbdtModel): the classifier
        plan (FeaturePlan): the plan the feature vectors follow
        threshold (float): the operating threshold
    """

    def __init__(self, model, plan, threshold):
        self.model = model
        self.threshold = float(threshold)
        self.columns = [plan.position[name] for name in model.feature_names]

    def score(self, features):
        return self.model.predict(np.atleast_2d(features)[:, self.columns])


@dataclasses.dataclass(frozen=True)
class Propagator:
    """Attack propagation together with the data component sampling needs.

    Args:
        assignment (EstimatorAssignment): the estimator of every profile
        estimators (Estimators): the trained estimators
        statistics (DatasetStatistics): summaries for component sampling
        costs (CostModel): the cost model
    """

    assignment: object
    estimators: object
    statistics: object
    costs: object = DEFAULT_COSTS

    def __call__(self, row, attack):
        return propagate(row, attack, self.assignment, self.estimators)


class _Evaluator:
    """Counts score evaluations against the budget."""

    def __init__(self, row, model, propagator, budget):
        self.row = row
        self.model = model
        self.propagator = propagator
        self.budget = budget
        self.used = 0
        self.exhausted = False

    @property
    def remaining(self):
        return self.budget - self.used

    def __call__(self, attacks):
        if len(attacks) > self.remaining:
            attacks = attacks[: self.remaining]
            self.exhausted = True
        if not attacks:
            return [], np.array([]), []
        rows = [self.propagator(self.row, attack) for attack in attacks]
        scores = np.asarray(self.model.score(np.stack([r.features for r in rows])), dtype=float)
        self.used += len(attacks)
        return attacks, scores.ravel(), rows


def _result(row, model, evaluator, attack, score, clean_score, best_row, costs):
    threshold = model.threshold
    return AttackResult(
        event_id=row.base.event_id,
        attack=attack,
        score=float(score),
        clean_score=float(clean_score),
        success=bool(clean_score >= threshold and score < threshold),
        evaluations=evaluator.used,
        norm=costs.norm(attack),
        exhausted=evaluator.exhausted,
        row=best_row,
    )


def _clean(row, model, propagator, config):
    evaluator = _Evaluator(row, model, propagator, config.budget)
    _, scores, rows = evaluator([AttackVector()])
    return evaluator, float(scores[0]), rows[0]


def random_search(row, model, propagator, config, rng=None):
    """Random search: every candidate perturbs each slot with probability
    ``bernoulli_p``, the card attributes as a single group.

    Candidates over the norm cap are redrawn up to 10 times and dropped
    afterwards.

    Args:
        row (EnrichedRow): the victim
        model: scorer with ``score(features)`` and ``threshold``
        propagator (Propagator): attack propagation
        config (SearchConfig): the settings
        rng (numpy.random.Generator): random generator, derived from the
            victim and ``config.seed`` if omitted

    Returns:
        AttackResult: the candidate with the lowest score

    Raises:
        ConfigurationError: if ``config`` selects another strategy
    """
    if config.strategy is not Strategy.RANDOM:
        raise ConfigurationError(f"random_search cannot run the {config.strategy.value} strategy.")
    rng = rng or victim_rng(config, row)
    costs = propagator.costs
    evaluator, clean_score, clean_row = _clean(row, model, propagator, config)

    candidates = []
    for _ in range(config.random_iters):
        for _ in range(MAX_RESAMPLES):
            attack = AttackVector()
            for slot in config.slots:
                if rng.uniform() < config.bernoulli_p:
                    value = sample_component(slot, row.base, propagator.statistics, rng, costs)
                    attack = attack.with_slot(slot, value)
            if costs.norm(attack) <= config.norm_cap:
                break
        else:
            continue
        if not attack.is_empty:
            candidates.append(attack)

    best_attack, best_score, best_row = AttackVector(), clean_score, clean_row
    attacks, scores, rows = evaluator(candidates)
    if len(scores) and scores.min() < best_score:
        i = int(np.argmin(scores))
        best_attack, best_score, best_row = attacks[i], scores[i], rows[i]
    return _result(row, model, evaluator, best_attack, best_score, clean_score, best_row, costs)


def slot_grid(slot, row, attack, config, statistics, rng, costs=DEFAULT_COSTS):
    """Values of one slot affordable within the norm cap given the rest of
    ``attack``, excluding the slot's current value.

    Categorical slots enumerate every value, amount and time use
    ``grid_points`` log-spaced values, and the card slot holds a reset plus
    ``card_switches`` sampled switch bundles.
    """
    current = attack.slots().get(slot)
    budget = config.norm_cap - (costs.norm(attack) - costs.slot_cost(slot, current))

    if slot is Slot.NETWORK:
        values = [v for v in statistics.ip_networks if v != row.base.ip_network]
    elif slot is Slot.GEO:
        values = [(round(r.latitude, 6), round(r.longitude, 6)) for r in statistics.regions]
    elif slot is Slot.TIME:
        half = max(1, config.grid_points // 2)
        magnitudes = np.geomspace(MS_PER_MINUTE, costs.max_time_shift_ms, half)
        magnitudes = np.unique(np.round(magnitudes).astype(np.int64))
        values = [int(-m) for m in magnitudes[::-1]] + [int(m) for m in magnitudes]
    elif slot is Slot.AMOUNT:
        scales = np.geomspace(costs.min_amount_scale, costs.max_amount_scale, config.grid_points)
        values = [float(s) for s in scales if s != 1.0]
    else:
        values = [CardAction.RESET]
        if statistics.card_bundles:
            values += [sample_card_bundle(statistics, rng) for _ in range(config.card_switches)]
        values = list(dict.fromkeys(values))

    return [
        v
        for v in values
        if v != current and costs.slot_cost(slot, v) <= budget + 1e-12
    ]


def _choose(strategy, attack, incumbent_score, attacks, scores, costs):
    """Index of the accepted grid value, or ``None``."""
    better = np.flatnonzero(scores < incumbent_score)
    if len(better) == 0:
        return None
    if strategy is Strategy.SCD_COST_EFFICIENT:
        base = costs.norm(attack)
        ratios = []
        for i in better:
            extra = costs.norm(attacks[i]) - base
            gain = incumbent_score - scores[i]
            ratios.append(np.inf if extra <= 0 else gain / extra)
        ratios = np.asarray(ratios)
        top = better[ratios == ratios.max()]
        return int(top[np.argmin(scores[top])])
    return int(better[np.argmin(scores[better])])


def scd_search(row, model, propagator, config, rng=None):
    """Stochastic coordinate descent over the attack slots.

    Each sweep visits the slots in random order and explores a grid of
    values for one slot at a time. The greedy variant accepts the value with
    the lowest score, the cost-efficient variant the value with the largest
    score decrease per unit of added norm. The search stops after a sweep
    without improvement or when the budget runs out.

    Arguments and return value are those of :func:`random_search`.
    """
    if config.strategy not in (Strategy.SCD_GREEDY, Strategy.SCD_COST_EFFICIENT):
        raise ConfigurationError(f"scd_search cannot run the {config.strategy.value} strategy.")
    rng = rng or victim_rng(config, row)
    costs = propagator.costs
    evaluator, clean_score, clean_row = _clean(row, model, propagator, config)
    attack, score, best_row = AttackVector(), clean_score, clean_row

    improved = True
    while improved and not evaluator.exhausted:
        improved = False
        for k in rng.permutation(len(config.slots)):
            slot = config.slots[k]
            grid = slot_grid(slot, row, attack, config, propagator.statistics, rng, costs)
            if not grid:
                continue
            if evaluator.remaining == 0:
                evaluator.exhausted = True
                break
            attacks, scores, rows = evaluator([attack.with_slot(slot, v) for v in grid])
            i = _choose(config.strategy, attack, score, attacks, scores, costs)
            if i is not None:
                attack, score, best_row = attacks[i], scores[i], rows[i]
                improved = True
            if evaluator.exhausted:
                break

    return _result(row, model, evaluator, attack, score, clean_score, best_row, costs)


def greedy_search(row, model, propagator, config, rng=None):
    """Greedy search: every iteration explores the grids of all slots and
    commits the single value with the lowest score.

    Arguments and return value are those of :func:`random_search`.
    """
    if config.strategy is not Strategy.GREEDY:
        raise ConfigurationError(f"greedy_search cannot run the {config.strategy.value} strategy.")
    rng = rng or victim_rng(config, row)
    costs = propagator.costs
    evaluator, clean_score, clean_row = _clean(row, model, propagator, config)
    attack, score, best_row = AttackVector(), clean_score, clean_row

    while not evaluator.exhausted:
        candidates = []
        for slot in config.slots:
            grid = slot_grid(slot, row, attack, config, propagator.statistics, rng, costs)
            candidates += [attack.with_slot(slot, v) for v in grid]
        if not candidates:
            break
        if evaluator.remaining == 0:
            evaluator.exhausted = True
            break
        attacks, scores, rows = evaluator(candidates)
        i = int(np.argmin(scores))
        if scores[i] >= score:
            break
        attack, score, best_row = attacks[i], scores[i], rows[i]
        logger.debug("Greedy step on %d: %s -> %.6f", row.base.event_id, attack.describe(), score)

    return _result(row, model, evaluator, attack, score, clean_score, best_row, costs)


_SEARCHES = {
    Strategy.RANDOM: random_search,
    Strategy.SCD_GREEDY: scd_search,
    Strategy.SCD_COST_EFFICIENT: scd_search,
    Strategy.GREEDY: greedy_search,
}


def victim_rng(config, row):
    """Random generator private to one victim of one search."""
    return make_rng(config.seed, "search", config.strategy.value, row.base.event_id)


def run_search(row, model, propagator, config, rng=None):
    """Runs the search selected by ``config.strategy``."""
    return _SEARCHES[config.strategy](row, model, propagator, config, rng)


def attack_rows(rows, model, propagator, config, threads=1):
    """Attacks every row independently, in parallel across victims.

    Every victim gets its own random generator, so the results do not depend
    on the number of threads.

    Args:
        rows (Sequence[EnrichedRow]): the victims
        model: scorer with ``score(features)`` and ``threshold``
        propagator (Propagator): attack propagation
        config (SearchConfig): the settings
        threads (int): number of worker threads

    Returns:
        list[AttackResult]: the results in victim order
    """
    rows = list(rows)
    if threads <= 1 or len(rows) <= 1:
        results = [run_search(row, model, propagator, config) for row in rows]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: run_search(r, model, propagator, config), rows))

    if results:
        logger.info(
            "Attacked %d victims with %s at norm cap %g: %d successes.",
            len(results),
            config.strategy.value,
            config.norm_cap,
            sum(r.success for r in results),
        )
    return results


def success_rate(results):
    """Fraction of successful attacks.

    Raises:
        ValueError: if there are no results
    """
    results = list(results)
    if not results:
        raise ValueError("The success rate of an empty result list is undefined.")
    return sum(r.success for r in results) / len(results)
