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
Experiment configuration read from a YAML file.

Every section is optional; missing keys take their defaults. Sub-seeds of
the stochastic components are derived from the global ``seed`` unless a
section sets its own.

.. code-block:: yaml

    seed: 7
    output_dir: runs/desk
    generator:
      n_cards: 5000
    splits:
      train_weeks: 10
      val_weeks: 4
      test_weeks: 6
    attack_bench:
      strategies: [random, greedy]
      norm_caps: [7, 30, 49, 65, 82]
      allow_temporal: [false, true]
    adv_train:
      norm_cap: [30, 65]

``attack_bench.allow_temporal``, ``adv_train.allow_temporal`` and
``adv_train.norm_cap`` take a single value or a list; ``adv_train`` expands to
one configuration per combination.
"""
import dataclasses
import os

import yaml
from appdirs import user_data_dir

from advprop.advtrain import AdvTrainConfig, Mode, Schedule
from advprop.attack_model import CostModel
from advprop.evaluation import NORMALIZATIONS
from advprop.feature_engine import default_plan, load_plan
from advprop.learner import TrainParams
from advprop.propagation import EstimatorConfig, EstimatorThresholds
from advprop.search import SearchConfig, Strategy
from advprop.synthdata import GeneratorConfig
from advprop.utils import ConfigurationError, derive_seed, parse_duration

__all__ = ["ConfigurationError", "ExperimentConfig", "load_config"]

SECTIONS = (
    "generator",
    "splits",
    "features",
    "learner",
    "costs",
    "estimators",
    "search",
    "attack_bench",
    "adv_train",
    "evaluate",
)
SCALARS = ("seed", "output_dir", "threads")

NORM_CAP_GRID = (0.0, 7.0, 30.0, 49.0, 65.0, 82.0, 100.0)


def default_output_dir():
    """The user-specific data folder of ``appdirs.user_data_dir``."""
    return user_data_dir("advprop", "Xanadu")


@dataclasses.dataclass(frozen=True)
class SplitConfig:
    train_weeks: int = 10
    val_weeks: int = 4
    test_weeks: int = 6


@dataclasses.dataclass(frozen=True)
class FeaturesConfig:
    plan: str = "default"

    def load(self):
        """Loads the feature plan, ``default`` meaning the built-in one."""
        if self.plan == "default":
            return default_plan()
        if not os.path.exists(self.plan):
            raise ConfigurationError(f"features.plan: the file {self.plan} does not exist.")
        return load_plan(self.plan)


@dataclasses.dataclass(frozen=True)
class AttackBenchConfig:
    strategies: tuple = tuple(s.value for s in Strategy)
    norm_caps: tuple = (7.0, 30.0, 49.0, 65.0, 82.0)
    n_victims: int = 200
    split: str = "test"
    allow_temporal: tuple = (False,)


@dataclasses.dataclass(frozen=True)
class EvaluateConfig:
    norm_caps: tuple = NORM_CAP_GRID
    strategy: str = Strategy.GREEDY.value
    n_victims: int = 0
    alpha: float = 0.01
    normalization: str = "ratio"
    allow_temporal: bool = False


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """The validated experiment configuration.

    ``adv_variants`` holds one adversarial training configuration per
    combination of the ``adv_train`` norm caps and time-shift settings;
    ``adv_train`` is the first of them.
    """

    seed: int
    output_dir: str
    threads: int
    generator: GeneratorConfig
    splits: SplitConfig
    features: FeaturesConfig
    learner: TrainParams
    costs: CostModel
    estimators: EstimatorConfig
    search: SearchConfig
    attack_bench: AttackBenchConfig
    adv_train: AdvTrainConfig
    evaluate: EvaluateConfig
    adv_variants: tuple = ()

    def path(self, filename):
        """Path of a pipeline file inside ``output_dir``."""
        return os.path.join(self.output_dir, filename)


def _coerce(section, key, value, default):
    name = f"{section}.{key}" if section else key
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name} has to be true or false, got {value!r}.")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigurationError(f"{name} has to be an integer, got {value!r}.")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name} has to be a number, got {value!r}.")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigurationError(f"{name} has to be a list, got {value!r}.")
        if default and isinstance(default[0], float):
            return tuple(_coerce(section, key, v, 0.0) for v in value)
        return tuple(str(v) for v in value)
    if isinstance(value, (dict, list)):
        raise ConfigurationError(f"{name} has to be a scalar, got {value!r}.")
    return str(value)


def _values(section, raw, defaults, extra=()):
    """Validates the keys of a section against the defaults mapping."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigurationError(f"The section {section} has to be a mapping.")
    unknown = sorted(set(raw) - set(defaults) - set(extra))
    if unknown:
        raise ConfigurationError(f"Unknown keys in section {section}: {unknown}.")
    return {
        key: _coerce(section, key, raw[key], defaults[key]) for key in raw if key in defaults
    }, {key: raw[key] for key in extra if key in raw}


def _one_or_many(section, key, value, default):
    """A scalar or a non-empty list of scalars as a tuple."""
    values = value if isinstance(value, list) else [value]
    if not values:
        raise ConfigurationError(f"{section}.{key} needs at least one value.")
    values = tuple(_coerce(section, key, v, default) for v in values)
    if len(set(values)) != len(values):
        raise ConfigurationError(f"{section}.{key} lists a value twice.")
    return values


def _pop_listed(document, section, defaults):
    """Copy of a section without the keys of ``defaults``, and the values of
    those keys as tuples."""
    raw = document.get(section)
    listed = {key: (default,) for key, default in defaults.items()}
    if not isinstance(raw, dict):
        return raw, listed
    raw = dict(raw)
    for key, default in defaults.items():
        if key in raw:
            listed[key] = _one_or_many(section, key, raw.pop(key), default)
    return raw, listed


def _defaults(cls):
    instance = cls()
    return {f.name: getattr(instance, f.name) for f in dataclasses.fields(cls)}


def _build(section, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ConfigurationError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigurationError(f"Invalid section {section}: {e}") from e


def _train_params(section, raw, seed):
    defaults = _defaults(TrainParams)
    values, _ = _values(section, raw, defaults)
    values.setdefault("seed", seed)
    return _build(section, TrainParams, **values)


def parse_config(document, base_dir="."):
    """Builds an :class:`ExperimentConfig` from a parsed YAML document.

    Args:
        document (dict): the parsed document, ``None`` for all defaults
        base_dir (str): directory relative paths are resolved against

    Returns:
        ExperimentConfig: the configuration

    Raises:
        ConfigurationError: if a section or key is unknown or a value invalid
    """
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigurationError("The configuration has to be a mapping.")
    unknown = sorted(set(document) - set(SECTIONS) - set(SCALARS))
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {unknown}.")

    seed = _coerce("", "seed", document.get("seed", 0), 0)
    threads = _coerce("", "threads", document.get("threads", 1), 1)
    if threads < 1:
        raise ConfigurationError("threads has to be at least 1.")
    output_dir = document.get("output_dir") or default_output_dir()
    output_dir = os.path.join(base_dir, _coerce("", "output_dir", output_dir, ""))

    values, _ = _values("generator", document.get("generator"), _defaults(GeneratorConfig))
    values.setdefault("seed", derive_seed(seed, "synthdata"))
    generator = _build("generator", GeneratorConfig, **values)

    values, _ = _values("splits", document.get("splits"), _defaults(SplitConfig))
    splits = SplitConfig(**values)
    if min(dataclasses.astuple(splits)) < 0:
        raise ConfigurationError("splits: the number of weeks has to be non-negative.")

    values, _ = _values("features", document.get("features"), _defaults(FeaturesConfig))
    if values.get("plan", "default") != "default":
        values["plan"] = os.path.join(base_dir, values["plan"])
    features = FeaturesConfig(**values)

    learner = _train_params("learner", document.get("learner"), derive_seed(seed, "learner"))

    values, _ = _values("costs", document.get("costs"), _defaults(CostModel))
    costs = _build("costs", CostModel, **values)

    defaults = dict(_defaults(EstimatorThresholds))
    defaults.update(
        bin_width="1h", n_rows=2000, n_perturbations=5, holdout_fraction=0.2, temporal=True
    )
    values, extra = _values("estimators", document.get("estimators"), defaults, extra=("learner",))
    thresholds = _build(
        "estimators",
        EstimatorThresholds,
        **{k: values.pop(k) for k in list(values) if k in _defaults(EstimatorThresholds)},
    )
    try:
        bin_width_ms = parse_duration(values.pop("bin_width", "1h"))
    except ValueError as e:
        raise ConfigurationError(f"estimators.bin_width: {e}") from e
    estimators = _build(
        "estimators",
        EstimatorConfig,
        thresholds=thresholds,
        bin_width_ms=bin_width_ms,
        params=_train_params(
            "estimators.learner",
            extra.get("learner") or {"n_rounds": 100, "max_depth": 5},
            derive_seed(seed, "estimators"),
        ),
        **values,
    )

    search_defaults = {
        "strategy": "greedy",
        "norm_cap": 100.0,
        "budget": 1000,
        "random_iters": 500,
        "bernoulli_p": 0.2,
        "grid_points": 16,
        "card_switches": 8,
        "allow_temporal": True,
    }
    values, _ = _values("search", document.get("search"), search_defaults)
    search_values = dict(search_defaults, **values)
    search = _build("search", SearchConfig, seed=derive_seed(seed, "search"), **search_values)

    raw, listed = _pop_listed(document, "attack_bench", {"allow_temporal": False})
    values, _ = _values("attack_bench", raw, _defaults(AttackBenchConfig))
    attack_bench = AttackBenchConfig(**dict(values, **listed))
    for name in attack_bench.strategies:
        _strategy("attack_bench", name)
    if attack_bench.split not in ("train", "validation", "test"):
        raise ConfigurationError("attack_bench.split has to be train, validation or test.")

    adv_defaults = {
        "adversarial_fraction": 0.05,
        "schedule": "on_convergence",
        "max_adv_rounds": 25,
        "stop_epsilon": 0.002,
        "stop_patience": 3,
        "mode": "replace",
        "boost_rounds": 50,
        "strategy": search.strategy.value,
        "alpha": 0.01,
        "normalization": "ratio",
    }
    raw, listed = _pop_listed(document, "adv_train", {"norm_cap": 65.0, "allow_temporal": True})
    values, extra = _values("adv_train", raw, adv_defaults, extra=("learner",))
    values = dict(adv_defaults, **values)
    strategy = _strategy("adv_train", values.pop("strategy"))
    adv_learner = _train_params(
        "adv_train.learner",
        extra.get("learner") or {"early_stopping_patience": 5},
        derive_seed(seed, "adv_train", "learner"),
    )
    _normalization("adv_train", values["normalization"])
    schedule = Schedule.parse(values.pop("schedule"))
    mode = _mode(values.pop("mode"))
    adv_variants = tuple(
        _build(
            "adv_train",
            AdvTrainConfig,
            schedule=schedule,
            mode=mode,
            search=_build(
                "adv_train",
                search.replace,
                strategy=strategy,
                norm_cap=norm_cap,
                allow_temporal=allow_temporal,
            ),
            params=adv_learner,
            seed=derive_seed(seed, "adv_train"),
            **values,
        )
        for norm_cap in listed["norm_cap"]
        for allow_temporal in listed["allow_temporal"]
    )

    values, _ = _values("evaluate", document.get("evaluate"), _defaults(EvaluateConfig))
    evaluate = EvaluateConfig(**values)
    _strategy("evaluate", evaluate.strategy)
    _normalization("evaluate", evaluate.normalization)
    if not 0 < evaluate.alpha <= 1:
        raise ConfigurationError("evaluate.alpha has to be in (0, 1].")

    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        threads=threads,
        generator=generator,
        splits=splits,
        features=features,
        learner=learner,
        costs=costs,
        estimators=estimators,
        search=search,
        attack_bench=attack_bench,
        adv_train=adv_variants[0],
        evaluate=evaluate,
        adv_variants=adv_variants,
    )


def _strategy(section, name):
    try:
        return Strategy(name)
    except ValueError:
        choices = [s.value for s in Strategy]
        raise ConfigurationError(f"{section}: unknown strategy {name!r}, expected one of {choices}.")


def _mode(name):
    try:
        return Mode(name)
    except ValueError:
        choices = [m.value for m in Mode]
        raise ConfigurationError(f"adv_train.mode has to be one of {choices}, got {name!r}.")


def _normalization(section, name):
    if name not in NORMALIZATIONS:
        raise ConfigurationError(
            f"{section}.normalization has to be one of {list(NORMALIZATIONS)}, got {name!r}."
        )


def load_config(filepath=None):
    """Reads the experiment configuration.

    Relative paths in the file are resolved against the file's directory.

    Args:
        filepath (str): the YAML file, ``None`` for the defaults

    Returns:
        ExperimentConfig: the configuration

    Raises:
        FileNotFoundError: if the file does not exist
        ConfigurationError: if the file cannot be parsed or is invalid
    """
    if filepath is None:
        return parse_config({})
    with open(filepath) as f:
        try:
            document = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Could not parse {filepath}: {e}") from e
    return parse_config(document, os.path.dirname(os.path.abspath(filepath)))
