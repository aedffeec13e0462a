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
Deterministic synthetic card-not-present transaction streams with planted
fraud bursts, and their chronological splits.
"""
import dataclasses
import logging
import math
import warnings

import numpy as np
import pandas as pd

from advprop.utils import (
    MS_PER_DAY,
    MS_PER_HOUR,
    MS_PER_WEEK,
    ConfigurationError,
    make_rng,
    write_csv,
)

logger = logging.getLogger(__name__)

CARD_NETWORKS = ("visa", "mastercard", "amex", "discover")
CVV_VALUES = ("match", "mismatch", "missing")
IP_NETWORKS = tuple(f"net{i:02d}" for i in range(16))
MERCHANT_CATEGORIES = (
    "grocery",
    "restaurants",
    "fashion",
    "pharmacy",
    "travel",
    "electronics",
    "digital",
    "gaming",
)

# Categories that fraud bursts favour
RISKY_CATEGORIES = ("electronics", "digital", "gaming")

# Dense geo clusters: (latitude, longitude) of the city centres
CITY_CENTERS = (
    (38.7223, -9.1393),
    (41.1579, -8.6291),
    (40.4168, -3.7038),
    (48.8566, 2.3522),
    (51.5074, -0.1278),
    (52.5200, 13.4050),
    (45.4642, 9.1900),
    (40.7128, -74.0060),
)
CITY_SPREAD_DEG = 0.25

VOCABULARIES = {
    "card_network": CARD_NETWORKS,
    "cvv_match": CVV_VALUES,
    "ip_network": IP_NETWORKS,
    "merchant_category": MERCHANT_CATEGORIES,
}

TRANSACTION_FIELDS = (
    "event_id",
    "timestamp",
    "amount",
    "card_id",
    "card_network",
    "cvv_match",
    "merchant_id",
    "merchant_category",
    "latitude",
    "longitude",
    "ip_network",
    "label",
)

_INT_FIELDS = ("event_id", "timestamp", "card_id", "merchant_id", "label")
_FLOAT_FIELDS = ("amount", "latitude", "longitude")

# Monday 2021-01-04 00:00:00 UTC
DEFAULT_START_MS = 1_609_718_400_000


@dataclasses.dataclass(frozen=True)
class Transaction:
    """One raw event row of the attacker-controllable space."""

    event_id: int
    timestamp: int
    amount: float
    card_id: int
    card_network: str
    cvv_match: str
    merchant_id: int
    merchant_category: str
    latitude: float
    longitude: float
    ip_network: str
    label: int

    @classmethod
    def from_record(cls, record):
        """Builds a transaction from a mapping (e.g. a data frame row)."""
        return cls(
            event_id=int(record["event_id"]),
            timestamp=int(record["timestamp"]),
            amount=float(record["amount"]),
            card_id=int(record["card_id"]),
            card_network=str(record["card_network"]),
            cvv_match=str(record["cvv_match"]),
            merchant_id=int(record["merchant_id"]),
            merchant_category=str(record["merchant_category"]),
            latitude=float(record["latitude"]),
            longitude=float(record["longitude"]),
            ip_network=str(record["ip_network"]),
            label=int(record["label"]),
        )

    def replace(self, **changes):
        """Returns a copy of the transaction with the given fields changed."""
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class GeneratorConfig:
    """Settings of the synthetic transaction generator.

    Args:
        n_cards (int): number of cards
        n_merchants (int): number of merchants
        weeks (int): length of the horizon in weeks
        legit_rate (float): mean legitimate transactions per card per week
        fraud_card_fraction (float): maximal fraction of compromised cards
        fraud_burst_size (float): mean fraud events per compromised card
        target_fraud_rate (float): targeted share of fraudulent rows
        seed (int): seed of every random draw
        fraud_amount_factor (float): multiplicative shift of the log-normal
            location of fraudulent amounts
        burst_hours (float): length of the time span of a fraud burst
        start_ms (int): timestamp of the start of the horizon
    """

    n_cards: int = 5000
    n_merchants: int = 200
    weeks: int = 20
    legit_rate: float = 2.0
    fraud_card_fraction: float = 0.1
    fraud_burst_size: float = 6.0
    target_fraud_rate: float = 0.012
    seed: int = 0
    fraud_amount_factor: float = 3.0
    burst_hours: float = 6.0
    start_ms: int = DEFAULT_START_MS

    def __post_init__(self):
        for name in ("n_cards", "n_merchants", "weeks"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"generator.{name} has to be at least 1.")
        if self.legit_rate <= 0:
            raise ConfigurationError("generator.legit_rate has to be positive.")
        if not 0 <= self.fraud_card_fraction <= 1:
            raise ConfigurationError("generator.fraud_card_fraction has to be in [0, 1].")
        if self.fraud_burst_size < 1:
            raise ConfigurationError("generator.fraud_burst_size has to be at least 1.")
        if not 0 < self.target_fraud_rate < 0.1:
            raise ConfigurationError("generator.target_fraud_rate has to be in (0, 0.1).")
        if self.fraud_amount_factor <= 0 or self.burst_hours <= 0:
            raise ConfigurationError(
                "generator.fraud_amount_factor and generator.burst_hours have to be positive."
            )

    @property
    def horizon_ms(self):
        """int: length of the generated horizon in milliseconds"""
        return int(self.weeks) * MS_PER_WEEK


@dataclasses.dataclass(frozen=True)
class DatasetSplit:
    """Chronological, contiguous and non-overlapping row ranges of a
    time-sorted dataset.

    ``boundaries`` holds the four timestamps delimiting the half-open periods
    ``[b0, b1)``, ``[b1, b2)`` and ``[b2, b3)``.
    """

    train: slice
    validation: slice
    test: slice
    boundaries: tuple

    def frames(self, dataset):
        """Returns the train, validation and test frames of ``dataset``."""
        return tuple(
            dataset.iloc[part].reset_index(drop=True)
            for part in (self.train, self.validation, self.test)
        )


def _card_profiles(config, rng):
    """Draws the per-card attributes that stay fixed for each card."""
    n = config.n_cards
    network = rng.choice(len(CARD_NETWORKS), size=n, p=[0.5, 0.3, 0.12, 0.08])

    # CVV outcomes are conditional on the card and its network
    p_missing = np.where(network == 2, 0.10, 0.02) * rng.uniform(0.5, 1.5, size=n)
    p_mismatch = rng.uniform(0.0, 0.04, size=n)

    city = rng.integers(0, len(CITY_CENTERS), size=n)
    home_ip = 2 * city + rng.integers(0, 2, size=n)
    amount_loc = rng.normal(3.6, 0.6, size=n)
    return {
        "network": network,
        "p_missing": p_missing,
        "p_mismatch": p_mismatch,
        "city": city,
        "home_ip": home_ip,
        "amount_loc": amount_loc,
    }


def _draw_cvv(rng, p_mismatch, p_missing):
    u = rng.uniform(size=len(p_mismatch))
    return np.where(u < p_mismatch, 1, np.where(u < p_mismatch + p_missing, 2, 0))


def _draw_geo(rng, city):
    centers = np.asarray(CITY_CENTERS)[city]
    jitter = rng.normal(0.0, CITY_SPREAD_DEG, size=(len(city), 2))
    lat = np.clip(centers[:, 0] + jitter[:, 0], -90.0, 90.0)
    lon = np.clip(centers[:, 1] + jitter[:, 1], -180.0, 180.0)
    return np.round(lat, 6), np.round(lon, 6)


def _draw_amounts(rng, loc):
    return np.maximum(np.round(rng.lognormal(loc, 0.6), 2), 0.01)


def compromised_card_count(config, n_legit):
    """Number of cards receiving a fraud burst.

    The count is chosen so that the expected fraud rate equals
    ``target_fraud_rate`` and is capped by ``fraud_card_fraction``.

    Args:
        config (GeneratorConfig): the generator settings
        n_legit (int): number of legitimate rows

    Returns:
        int: the number of compromised cards
    """
    cap = int(math.floor(config.fraud_card_fraction * config.n_cards))
    if cap == 0:
        return 0

    target = config.target_fraud_rate
    wanted = int(round(target * n_legit / ((1.0 - target) * config.fraud_burst_size)))
    wanted = max(wanted, 1)
    if wanted > cap:
        warnings.warn(
            f"Reaching a fraud rate of {target} needs {wanted} compromised cards, but "
            f"fraud_card_fraction allows only {cap}. The realized fraud rate will be lower."
        )
    return min(wanted, cap)


def generate(config):
    """Generates a time-sorted synthetic transaction dataset.

    Legitimate traffic follows per-card homogeneous Poisson arrivals with a
    per-card log-normal amount distribution. Compromised cards receive a burst
    of fraudulent transactions within ``burst_hours`` whose amounts, IP
    networks, geolocations, merchants and CVV outcomes are shifted away from
    the card's habits.

    The output is a pure function of ``config``.

    Args:
        config (GeneratorConfig): the generator settings

    Returns:
        pandas.DataFrame: the transactions, columns in ``TRANSACTION_FIELDS``
        order, sorted by ``(timestamp, event_id)``

    Raises:
        ConfigurationError: if the horizon cannot hold a fraud burst
    """
    span_ms = int(config.burst_hours * MS_PER_HOUR)
    if span_ms >= config.horizon_ms:
        raise ConfigurationError(
            f"A fraud burst of {config.burst_hours} hours does not fit into a horizon "
            f"of {config.weeks} weeks."
        )

    rng_cards = make_rng(config.seed, "synthdata", "cards")
    rng_merchants = make_rng(config.seed, "synthdata", "merchants")
    rng_legit = make_rng(config.seed, "synthdata", "legit")
    rng_fraud = make_rng(config.seed, "synthdata", "fraud")

    cards = _card_profiles(config, rng_cards)

    merchant_category = rng_merchants.integers(0, len(MERCHANT_CATEGORIES), size=config.n_merchants)
    popularity = rng_merchants.lognormal(0.0, 0.8, size=config.n_merchants)
    popularity /= popularity.sum()
    risky = np.isin(
        merchant_category, [MERCHANT_CATEGORIES.index(c) for c in RISKY_CATEGORIES]
    )

    # Legitimate traffic
    counts = rng_legit.poisson(config.legit_rate * config.weeks, size=config.n_cards)
    card = np.repeat(np.arange(config.n_cards), counts)
    n_legit = len(card)
    legit = {
        "offset": rng_legit.integers(0, config.horizon_ms, size=n_legit),
        "amount": _draw_amounts(rng_legit, cards["amount_loc"][card]),
        "card": card,
        "cvv": _draw_cvv(rng_legit, cards["p_mismatch"][card], cards["p_missing"][card]),
        "merchant": rng_legit.choice(config.n_merchants, size=n_legit, p=popularity),
    }
    lat, lon = _draw_geo(rng_legit, cards["city"][card])
    legit["latitude"], legit["longitude"] = lat, lon
    away = rng_legit.uniform(size=n_legit) > 0.85
    legit["ip"] = np.where(
        away, rng_legit.integers(0, len(IP_NETWORKS), size=n_legit), cards["home_ip"][card]
    )
    legit["label"] = np.zeros(n_legit, dtype=np.int64)

    # Fraud bursts
    n_compromised = compromised_card_count(config, n_legit)
    victims = np.sort(rng_fraud.choice(config.n_cards, size=n_compromised, replace=False))
    sizes = 1 + rng_fraud.poisson(config.fraud_burst_size - 1.0, size=n_compromised)
    starts = rng_fraud.integers(0, config.horizon_ms - span_ms, size=n_compromised)
    card = np.repeat(victims, sizes)
    n_fraud = len(card)
    offsets = np.repeat(starts, sizes) + rng_fraud.integers(0, span_ms, size=n_fraud)

    risky_ids = np.flatnonzero(risky)
    use_risky = (rng_fraud.uniform(size=n_fraud) < 0.6) & (len(risky_ids) > 0)
    merchant = rng_fraud.choice(config.n_merchants, size=n_fraud, p=popularity)
    if len(risky_ids) > 0:
        merchant = np.where(use_risky, rng_fraud.choice(risky_ids, size=n_fraud), merchant)

    far_city = (cards["city"][card] + rng_fraud.integers(1, len(CITY_CENTERS), size=n_fraud)) % len(
        CITY_CENTERS
    )
    city = np.where(rng_fraud.uniform(size=n_fraud) < 0.6, far_city, cards["city"][card])
    lat, lon = _draw_geo(rng_fraud, city)

    fraud_ips = len(IP_NETWORKS) - 1 - rng_fraud.integers(0, 3, size=n_fraud)
    ip = np.where(rng_fraud.uniform(size=n_fraud) < 0.7, fraud_ips, cards["home_ip"][card])

    fraud = {
        "offset": offsets,
        "amount": _draw_amounts(
            rng_fraud, cards["amount_loc"][card] + math.log(config.fraud_amount_factor)
        ),
        "card": card,
        "cvv": _draw_cvv(rng_fraud, np.full(n_fraud, 0.35), np.full(n_fraud, 0.10)),
        "merchant": merchant,
        "latitude": lat,
        "longitude": lon,
        "ip": ip,
        "label": np.ones(n_fraud, dtype=np.int64),
    }

    parts = {key: np.concatenate([legit[key], fraud[key]]) for key in legit}
    order = np.argsort(parts["offset"], kind="stable")
    parts = {key: value[order] for key, value in parts.items()}
    card = parts["card"]

    dataset = pd.DataFrame(
        {
            "event_id": np.arange(len(order), dtype=np.int64),
            "timestamp": config.start_ms + parts["offset"].astype(np.int64),
            "amount": parts["amount"].astype(np.float64),
            "card_id": card.astype(np.int64),
            "card_network": np.asarray(CARD_NETWORKS, dtype=object)[cards["network"][card]],
            "cvv_match": np.asarray(CVV_VALUES, dtype=object)[parts["cvv"]],
            "merchant_id": parts["merchant"].astype(np.int64),
            "merchant_category": np.asarray(MERCHANT_CATEGORIES, dtype=object)[
                merchant_category[parts["merchant"]]
            ],
            "latitude": parts["latitude"].astype(np.float64),
            "longitude": parts["longitude"].astype(np.float64),
            "ip_network": np.asarray(IP_NETWORKS, dtype=object)[parts["ip"]],
            "label": parts["label"].astype(np.int64),
        },
        columns=list(TRANSACTION_FIELDS),
    )

    logger.info(
        "Generated %d transactions (%d fraudulent on %d cards, rate %.4f).",
        len(dataset),
        n_fraud,
        n_compromised,
        n_fraud / max(len(dataset), 1),
    )
    return dataset


def _origin(dataset):
    """Start of the dataset's horizon: midnight (UTC) of its first event."""
    return (int(dataset["timestamp"].iloc[0]) // MS_PER_DAY) * MS_PER_DAY


def horizon_weeks(dataset):
    """Number of whole weeks needed to cover the dataset from its origin."""
    if len(dataset) == 0:
        return 0
    covered = int(dataset["timestamp"].iloc[-1]) - _origin(dataset) + 1
    return -(-covered // MS_PER_WEEK)


def split(dataset, train_weeks, val_weeks, test_weeks):
    """Splits a time-sorted dataset chronologically.

    The origin of the split is midnight (UTC) of the day of the first event.
    Rows after the end of the test period are discarded.

    **Example**

    >>> parts = split(dataset, 10, 4, 6)
    >>> train, validation, test = parts.frames(dataset)

    Args:
        dataset (pandas.DataFrame): time-sorted transactions
        train_weeks (int): weeks of training data
        val_weeks (int): weeks of validation data
        test_weeks (int): weeks of test data

    Returns:
        DatasetSplit: the row ranges of the three splits

    Raises:
        ValueError: if the requested weeks exceed the dataset's horizon
    """
    weeks = (int(train_weeks), int(val_weeks), int(test_weeks))
    if min(weeks) < 0:
        raise ValueError(f"Split lengths have to be non-negative, got {weeks}.")

    available = horizon_weeks(dataset)
    if sum(weeks) > available:
        raise ValueError(
            f"The requested splits cover {sum(weeks)} weeks but the dataset spans "
            f"only {available} weeks."
        )

    origin = _origin(dataset)
    boundaries = (
        origin,
        origin + weeks[0] * MS_PER_WEEK,
        origin + (weeks[0] + weeks[1]) * MS_PER_WEEK,
        origin + sum(weeks) * MS_PER_WEEK,
    )
    timestamps = dataset["timestamp"].to_numpy()
    cuts = np.searchsorted(timestamps, boundaries, side="left")
    return DatasetSplit(
        train=slice(int(cuts[0]), int(cuts[1])),
        validation=slice(int(cuts[1]), int(cuts[2])),
        test=slice(int(cuts[2]), int(cuts[3])),
        boundaries=tuple(int(b) for b in boundaries),
    )


def save_dataset(dataset, filepath):
    """Writes a dataset as CSV (header row, ``TRANSACTION_FIELDS`` order,
    integer millisecond timestamps, floats with 6 decimals)."""
    return write_csv(dataset[list(TRANSACTION_FIELDS)], filepath)


def load_dataset(filepath):
    """Reads a dataset written by :func:`save_dataset`.

    Args:
        filepath (str or os.PathLike): the CSV file

    Returns:
        pandas.DataFrame: the transactions sorted by ``(timestamp, event_id)``

    Raises:
        ValueError: if columns are missing or categorical values fall outside
        the declared vocabularies
    """
    frame = pd.read_csv(filepath, dtype={name: str for name in VOCABULARIES})
    missing = [name for name in TRANSACTION_FIELDS if name not in frame.columns]
    if missing:
        raise ValueError(f"The dataset {filepath} misses the columns {missing}.")

    frame = frame[list(TRANSACTION_FIELDS)].copy()
    for name in _INT_FIELDS:
        frame[name] = frame[name].astype(np.int64)
    for name in _FLOAT_FIELDS:
        frame[name] = frame[name].astype(np.float64)
    for name, vocabulary in VOCABULARIES.items():
        unknown = set(frame[name].unique()) - set(vocabulary)
        if unknown:
            raise ValueError(f"Unknown values {sorted(unknown)} in column {name}.")

    return frame.sort_values(["timestamp", "event_id"], kind="mergesort").reset_index(drop=True)
