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
Engineered features computed from raw transactions: row maps, entity-grouped
sliding-window profiles and higher-order transforms.

Feature plans are written in a plain-text format with one feature per line,
``kind name key=value ...``. Lines starting with ``#`` are comments.

.. code-block:: text

    rowmap log_amount fn=log field=amount
    profile sum_amount_card_1h agg=sum key=card_id window=1h field=amount
    higher amount_zscore_card_7d fn=zscore field=amount mean=mean_amount_card_7d std=std_amount_card_7d
"""
import collections
import dataclasses
import enum
import functools
import logging
import math

import numpy as np
import pandas as pd

from advprop.synthdata import (
    CITY_CENTERS,
    TRANSACTION_FIELDS,
    VOCABULARIES,
    Transaction,
    load_dataset,
)
from advprop.utils import (
    MS_PER_DAY,
    MS_PER_HOUR,
    ConfigurationError,
    format_duration,
    parse_duration,
    write_csv,
)

logger = logging.getLogger(__name__)

GROUP_KEYS = ("card_id", "merchant_id")
AGGREGATIONS = ("count", "sum", "mean", "stddev", "max")
NUMERIC_FIELDS = ("amount", "latitude", "longitude")
PROFILE_FIELDS = ("amount",)

# Layout of the last axis of window statistics
STAT_COUNT, STAT_TOTAL, STAT_M2, STAT_MAX = range(4)
N_STATS = 4

ROWMAP_FUNCTIONS = {
    "identity": ("field",),
    "log": ("field",),
    "hour_of_day": (),
    "day_of_week": (),
    "geo_cluster": (),
    "code": ("field",),
    "onehot": ("field", "value"),
}

HIGHER_ORDER_FUNCTIONS = {
    "zscore": ("field", "mean", "std"),
    "ratio": ("field", "base"),
}

DEFAULT_PLAN = """\
# Row maps
rowmap log_amount fn=log field=amount
rowmap hour_of_day fn=hour_of_day
rowmap geo_cluster fn=geo_cluster
rowmap card_network_code fn=code field=card_network
rowmap cvv_match_code fn=code field=cvv_match
rowmap ip_network_code fn=code field=ip_network
rowmap merchant_category_code fn=code field=merchant_category

# Card profiles
profile count_card_1h agg=count key=card_id window=1h
profile sum_amount_card_1h agg=sum key=card_id window=1h field=amount
profile mean_amount_card_1h agg=mean key=card_id window=1h field=amount
profile std_amount_card_1h agg=stddev key=card_id window=1h field=amount
profile count_card_24h agg=count key=card_id window=24h
profile sum_amount_card_24h agg=sum key=card_id window=24h field=amount
profile mean_amount_card_24h agg=mean key=card_id window=24h field=amount
profile std_amount_card_24h agg=stddev key=card_id window=24h field=amount
profile count_card_7d agg=count key=card_id window=7d
profile sum_amount_card_7d agg=sum key=card_id window=7d field=amount
profile mean_amount_card_7d agg=mean key=card_id window=7d field=amount
profile std_amount_card_7d agg=stddev key=card_id window=7d field=amount

# Merchant profiles
profile count_merchant_24h agg=count key=merchant_id window=24h
profile sum_amount_merchant_24h agg=sum key=merchant_id window=24h field=amount
profile count_merchant_30d agg=count key=merchant_id window=30d
profile sum_amount_merchant_30d agg=sum key=merchant_id window=30d field=amount

# Higher order
higher amount_zscore_card_7d fn=zscore field=amount mean=mean_amount_card_7d std=std_amount_card_7d
higher amount_ratio_card_24h fn=ratio field=amount base=mean_amount_card_24h offset=1
"""


class FeatureKind(enum.Enum):
    """The three classes of input transformations."""

    ROW_MAP = "rowmap"
    PROFILE = "profile"
    HIGHER_ORDER = "higher"


@dataclasses.dataclass(frozen=True)
class FeatureSpec:
    """Declaration of a single engineered feature.

    Only the attributes relevant to the feature's ``kind`` are set.
    """

    kind: FeatureKind
    name: str
    function: str = None
    field: str = None
    value: str = None
    aggregation: str = None
    group_key: str = None
    window_ms: int = None
    inputs: tuple = ()
    offset: float = 0.0

    @property
    def basis(self):
        """tuple: the ``(group_key, window_ms, value_field)`` whose window
        statistics a profile is derived from"""
        if self.kind is not FeatureKind.PROFILE:
            return None
        return (self.group_key, self.window_ms, self.field or PROFILE_FIELDS[0])

    def to_line(self):
        """Formats the spec as a line of the plain-text plan format."""
        parts = [self.kind.value, self.name]
        if self.kind is FeatureKind.PROFILE:
            parts += [
                f"agg={self.aggregation}",
                f"key={self.group_key}",
                f"window={format_duration(self.window_ms)}",
            ]
            if self.aggregation != "count":
                parts.append(f"field={self.field}")
            return " ".join(parts)

        parts.append(f"fn={self.function}")
        if self.field is not None:
            parts.append(f"field={self.field}")
        if self.value is not None:
            parts.append(f"value={self.value}")
        if self.kind is FeatureKind.HIGHER_ORDER:
            labels = HIGHER_ORDER_FUNCTIONS[self.function][1:]
            parts += [f"{label}={ref}" for label, ref in zip(labels, self.inputs)]
            if self.offset:
                parts.append(f"offset={self.offset!r}")
        return " ".join(parts)


@dataclasses.dataclass(frozen=True)
class WindowStats:
    """Aggregates of the value field over one entity's trailing window."""

    count: int
    total: float
    m2: float
    maximum: float

    @classmethod
    def of(cls, values):
        """Computes the statistics of a non-empty sequence of values."""
        values = np.asarray(values, dtype=np.float64)
        total = float(values.sum())
        mean = total / len(values)
        m2 = float(np.sum((values - mean) ** 2))
        return cls(len(values), total, m2, float(values.max()))

    def as_array(self):
        return np.array([self.count, self.total, self.m2, self.maximum], dtype=np.float64)


def aggregate(aggregation, stats):
    """Derives profile values from window statistics.

    Args:
        aggregation (str): one of ``AGGREGATIONS``
        stats (array[float]): statistics with the layout ``(..., N_STATS)``

    Returns:
        array[float]: the profile values
    """
    stats = np.asarray(stats, dtype=np.float64)
    count = stats[..., STAT_COUNT]
    if aggregation == "count":
        return count
    if aggregation == "sum":
        return stats[..., STAT_TOTAL]
    if aggregation == "mean":
        return stats[..., STAT_TOTAL] / count
    if aggregation == "stddev":
        return np.sqrt(np.maximum(stats[..., STAT_M2], 0.0) / count)
    if aggregation == "max":
        return stats[..., STAT_MAX]
    raise ValueError(f"Unknown aggregation {aggregation}.")


class FeaturePlan:
    """An ordered list of feature declarations.

    Args:
        specs (Sequence[FeatureSpec]): the features in output order

    Raises:
        ConfigurationError: if names repeat, reference unknown fields or
        reference features that are declared later
    """

    def __init__(self, specs):
        self.specs = tuple(specs)
        self._check()

        self.names = tuple(spec.name for spec in self.specs)
        self.position = {name: i for i, name in enumerate(self.names)}

        bases = []
        for spec in self.specs:
            if spec.kind is FeatureKind.PROFILE and spec.basis not in bases:
                bases.append(spec.basis)
        self.bases = tuple(bases)
        self.basis_position = {basis: b for b, basis in enumerate(self.bases)}

    def _check(self):
        seen = set()
        for spec in self.specs:
            if spec.name in seen:
                raise ConfigurationError(f"The feature {spec.name} is declared twice.")
            if spec.name in TRANSACTION_FIELDS:
                raise ConfigurationError(
                    f"The feature name {spec.name} clashes with a transaction field."
                )
            if spec.kind is FeatureKind.HIGHER_ORDER:
                if spec.field not in NUMERIC_FIELDS and spec.field not in seen:
                    raise ConfigurationError(
                        f"The higher-order feature {spec.name} references {spec.field}, "
                        "which is neither a numeric field nor an earlier feature."
                    )
                for ref in spec.inputs:
                    if ref not in seen:
                        raise ConfigurationError(
                            f"The higher-order feature {spec.name} references {ref}, "
                            "which is not declared earlier in the plan."
                        )
            seen.add(spec.name)

    def __len__(self):
        return len(self.specs)

    def __eq__(self, other):
        return isinstance(other, FeaturePlan) and self.specs == other.specs

    def __hash__(self):
        return hash(self.specs)

    def profiles(self):
        """list[FeatureSpec]: the profile features in plan order"""
        return [spec for spec in self.specs if spec.kind is FeatureKind.PROFILE]

    def card_bases(self):
        """list[int]: positions of the bases grouped by card"""
        return [b for b, basis in enumerate(self.bases) if basis[0] == "card_id"]

    def row_map_values(self, columns):
        """Evaluates the row maps on columns of raw fields.

        Args:
            columns (Mapping[str, array]): raw transaction fields

        Returns:
            dict[str, array[float]]: row map values keyed by feature name
        """
        return {
            spec.name: _row_map(spec, columns)
            for spec in self.specs
            if spec.kind is FeatureKind.ROW_MAP
        }

    def profile_values(self, stats):
        """Derives every profile from window statistics of shape ``(n, bases, N_STATS)``."""
        return {
            spec.name: aggregate(spec.aggregation, stats[:, self.basis_position[spec.basis]])
            for spec in self.profiles()
        }

    def apply_higher_order(self, features, columns):
        """Recomputes the higher-order columns of ``features`` in place, in
        plan order."""
        for i, spec in enumerate(self.specs):
            if spec.kind is not FeatureKind.HIGHER_ORDER:
                continue
            if spec.field in self.position:
                x = features[:, self.position[spec.field]]
            else:
                x = np.asarray(columns[spec.field], dtype=np.float64)
            refs = [features[:, self.position[ref]] for ref in spec.inputs]
            features[:, i] = _higher_order(spec, x, refs)
        return features

    def assemble(self, columns, stats):
        """Builds feature rows from raw columns and window statistics.

        Args:
            columns (Mapping[str, array]): raw transaction fields of ``n`` rows
            stats (array[float]): statistics of shape ``(n, bases, N_STATS)``

        Returns:
            array[float]: the feature matrix of shape ``(n, len(plan))``
        """
        n = len(stats)
        features = np.zeros((n, len(self.specs)), dtype=np.float64)
        values = self.row_map_values(columns)
        values.update(self.profile_values(stats))
        for name, column in values.items():
            features[:, self.position[name]] = column
        return self.apply_higher_order(features, columns)


def _row_map(spec, columns):
    fn = spec.function
    if fn == "identity":
        return np.asarray(columns[spec.field], dtype=np.float64)
    if fn == "log":
        return np.log(np.asarray(columns[spec.field], dtype=np.float64))
    if fn == "hour_of_day":
        return ((np.asarray(columns["timestamp"], dtype=np.int64) // MS_PER_HOUR) % 24).astype(
            np.float64
        )
    if fn == "day_of_week":
        # 1970-01-01 was a Thursday; Monday is 0
        days = np.asarray(columns["timestamp"], dtype=np.int64) // MS_PER_DAY
        return ((days + 3) % 7).astype(np.float64)
    if fn == "geo_cluster":
        return geo_cluster(columns["latitude"], columns["longitude"]).astype(np.float64)
    if fn == "code":
        lookup = {v: i for i, v in enumerate(VOCABULARIES[spec.field])}
        return np.array([lookup[v] for v in columns[spec.field]], dtype=np.float64)
    if fn == "onehot":
        return (np.asarray(columns[spec.field], dtype=object) == spec.value).astype(np.float64)
    raise ValueError(f"Unknown row map {fn}.")


def _higher_order(spec, x, refs):
    if spec.function == "zscore":
        mean, std = refs
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (x - mean) / safe, 0.0)
    if spec.function == "ratio":
        (base,) = refs
        denominator = base + spec.offset
        safe = np.where(denominator != 0, denominator, 1.0)
        return np.where(denominator != 0, x / safe, 0.0)
    raise ValueError(f"Unknown higher-order function {spec.function}.")


def geo_cluster(latitude, longitude):
    """Index of the nearest dense geo cluster for each coordinate pair."""
    centers = np.asarray(CITY_CENTERS)
    lat = np.atleast_1d(np.asarray(latitude, dtype=np.float64))
    lon = np.atleast_1d(np.asarray(longitude, dtype=np.float64))
    distance = (lat[:, None] - centers[None, :, 0]) ** 2 + (lon[:, None] - centers[None, :, 1]) ** 2
    return np.argmin(distance, axis=1)


def _parse_line(line, lineno):
    tokens = line.split()
    if len(tokens) < 2:
        raise ConfigurationError(f"Plan line {lineno}: expected 'kind name key=value ...'.")

    try:
        kind = FeatureKind(tokens[0])
    except ValueError:
        raise ConfigurationError(f"Plan line {lineno}: unknown feature kind {tokens[0]!r}.")

    name = tokens[1]
    if not name.isidentifier():
        raise ConfigurationError(f"Plan line {lineno}: {name!r} is not a valid feature name.")

    params = {}
    for token in tokens[2:]:
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise ConfigurationError(f"Plan line {lineno}: malformed parameter {token!r}.")
        params[key] = value

    def pop(key, default=None):
        value = params.pop(key, default)
        if value is None:
            raise ConfigurationError(f"Plan line {lineno}: {name} requires {key}=...")
        return value

    if kind is FeatureKind.PROFILE:
        aggregation = pop("agg")
        if aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"Plan line {lineno}: unknown aggregation {aggregation!r}.")
        group_key = pop("key")
        if group_key not in GROUP_KEYS:
            raise ConfigurationError(f"Plan line {lineno}: unknown group key {group_key!r}.")
        try:
            window_ms = parse_duration(pop("window"))
        except ValueError as e:
            raise ConfigurationError(f"Plan line {lineno}: {e}")
        field = pop("field", PROFILE_FIELDS[0])
        if field not in PROFILE_FIELDS:
            raise ConfigurationError(f"Plan line {lineno}: unknown value field {field!r}.")
        spec = FeatureSpec(
            kind, name, aggregation=aggregation, group_key=group_key, window_ms=window_ms, field=field
        )

    elif kind is FeatureKind.ROW_MAP:
        function = pop("fn")
        if function not in ROWMAP_FUNCTIONS:
            raise ConfigurationError(f"Plan line {lineno}: unknown row map {function!r}.")
        required = ROWMAP_FUNCTIONS[function]
        field = pop("field") if "field" in required else None
        value = pop("value") if "value" in required else None
        if function in ("identity", "log") and field not in NUMERIC_FIELDS:
            raise ConfigurationError(f"Plan line {lineno}: unknown numeric field {field!r}.")
        if function in ("code", "onehot") and field not in VOCABULARIES:
            raise ConfigurationError(f"Plan line {lineno}: unknown categorical field {field!r}.")
        if function == "onehot" and value not in VOCABULARIES[field]:
            raise ConfigurationError(
                f"Plan line {lineno}: {value!r} is not in the vocabulary of {field}."
            )
        spec = FeatureSpec(kind, name, function=function, field=field, value=value)

    else:
        function = pop("fn")
        if function not in HIGHER_ORDER_FUNCTIONS:
            raise ConfigurationError(
                f"Plan line {lineno}: unknown higher-order function {function!r}."
            )
        field, *labels = HIGHER_ORDER_FUNCTIONS[function]
        try:
            offset = float(params.pop("offset", 0.0))
        except ValueError:
            raise ConfigurationError(f"Plan line {lineno}: offset has to be a number.")
        spec = FeatureSpec(
            kind,
            name,
            function=function,
            field=pop(field),
            inputs=tuple(pop(label) for label in labels),
            offset=offset,
        )

    if params:
        raise ConfigurationError(
            f"Plan line {lineno}: unexpected parameters {sorted(params)} for {name}."
        )
    return spec


def parse_plan(text):
    """Parses a feature plan from its plain-text form.

    Args:
        text (str): the plan

    Returns:
        FeaturePlan: the parsed plan

    Raises:
        ConfigurationError: if a line cannot be parsed or the plan is inconsistent
    """
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            specs.append(_parse_line(line, lineno))
    if not specs:
        raise ConfigurationError("The feature plan declares no features.")
    return FeaturePlan(specs)


def format_plan(plan):
    """Formats a plan in the plain-text plan format."""
    return "".join(spec.to_line() + "\n" for spec in plan.specs)


def load_plan(filepath):
    """Reads a feature plan file."""
    with open(filepath) as f:
        return parse_plan(f.read())


@functools.lru_cache()
def default_plan():
    """The default desk-scale feature plan."""
    return parse_plan(DEFAULT_PLAN)


@dataclasses.dataclass
class EnrichedRow:
    """A transaction together with its engineered features.

    ``stats`` holds the window statistics of every basis of the plan, with
    NaN rows for bases whose profiles were estimated rather than computed.
    """

    base: Transaction
    features: np.ndarray
    stats: np.ndarray

    def copy(self):
        return EnrichedRow(self.base, self.features.copy(), self.stats.copy())


def transaction_columns(transactions):
    """Column mapping of a list of transactions, as accepted by
    :meth:`FeaturePlan.assemble`."""
    return {
        name: np.array([getattr(t, name) for t in transactions], dtype=object)
        if name in VOCABULARIES
        else np.array([getattr(t, name) for t in transactions])
        for name in TRANSACTION_FIELDS
    }


def _frame_columns(frame):
    return {name: frame[name].to_numpy() for name in TRANSACTION_FIELDS}


class _Window:
    """Trailing window of one entity for one basis.

    The sum of squared deviations is updated with Welford's rules on every
    insertion and expiry and recomputed from the buffer once the number of
    expiries since the last recomputation exceeds the window size, which
    keeps pushes amortized O(1).
    """

    __slots__ = ("buffer", "total", "mean", "m2", "expired", "peaks")

    def __init__(self):
        self.buffer = collections.deque()
        self.total = 0.0
        self.mean = 0.0
        self.m2 = 0.0
        self.expired = 0
        self.peaks = collections.deque()

    def _expire(self, value):
        self.total -= value
        n = len(self.buffer)
        if n == 0:
            self.total = self.mean = self.m2 = 0.0
            self.expired = 0
            return
        mean = self.mean + (self.mean - value) / n
        self.m2 -= (value - self.mean) * (value - mean)
        self.mean = mean
        self.expired += 1

    def _refresh(self):
        values = [v for _, v in self.buffer]
        self.mean = math.fsum(values) / len(values)
        self.m2 = math.fsum((v - self.mean) ** 2 for v in values)
        self.expired = 0

    def push(self, timestamp, value, window_ms, track_max):
        cutoff = timestamp - window_ms
        while self.buffer and self.buffer[0][0] <= cutoff:
            self._expire(self.buffer.popleft()[1])
        self.buffer.append((timestamp, value))
        self.total += value
        delta = value - self.mean
        self.mean += delta / len(self.buffer)
        self.m2 += delta * (value - self.mean)
        if self.expired > len(self.buffer):
            self._refresh()

        if track_max:
            while self.peaks and self.peaks[0][0] <= cutoff:
                self.peaks.popleft()
            while self.peaks and self.peaks[-1][1] <= value:
                self.peaks.pop()
            self.peaks.append((timestamp, value))

    def stats(self, track_m2, track_max):
        count = len(self.buffer)
        m2 = max(self.m2, 0.0) if track_m2 and count > 1 else 0.0
        maximum = self.peaks[0][1] if track_max else 0.0
        return count, self.total, m2, maximum


def _check_sorted(frame):
    timestamps = frame["timestamp"].to_numpy(dtype=np.int64)
    event_ids = frame["event_id"].to_numpy(dtype=np.int64)
    later = np.diff(timestamps)
    if np.any(later < 0) or np.any((later == 0) & (np.diff(event_ids) <= 0)):
        raise ValueError("The dataset has to be sorted by (timestamp, event_id).")


class ProfileIndex:
    """Per-entity sorted views of a dataset used to recompute the window
    statistics of a single modified row without a full pass.

    Args:
        frame (pandas.DataFrame): time-sorted transactions
        plan (FeaturePlan): the plan whose bases are indexed
    """

    def __init__(self, frame, plan):
        self.plan = plan
        event_ids = frame["event_id"].to_numpy(dtype=np.int64)
        self._order = np.argsort(event_ids, kind="stable")
        self._sorted_ids = event_ids[self._order]
        self._frame = frame
        self.max_card_id = int(frame["card_id"].max()) if len(frame) else -1

        self._groups = {}
        for key, _, field in plan.bases:
            if (key, field) in self._groups:
                continue
            entities = frame[key].to_numpy(dtype=np.int64)
            order = np.lexsort((event_ids, frame["timestamp"].to_numpy(dtype=np.int64), entities))
            entities = entities[order]
            starts = np.flatnonzero(np.r_[True, entities[1:] != entities[:-1]])
            ends = np.r_[starts[1:], len(entities)]
            timestamps = frame["timestamp"].to_numpy(dtype=np.int64)[order]
            values = frame[field].to_numpy(dtype=np.float64)[order]
            ids = event_ids[order]
            self._groups[(key, field)] = {
                int(entities[s]): (timestamps[s:e], ids[s:e], values[s:e])
                for s, e in zip(starts, ends)
            }

    def position(self, event_id):
        """Row position of an event in the indexed frame.

        Raises:
            ValueError: if the event id is unknown
        """
        i = np.searchsorted(self._sorted_ids, event_id)
        if i == len(self._sorted_ids) or self._sorted_ids[i] != event_id:
            raise ValueError(f"Unknown event id {event_id}.")
        return int(self._order[i])

    def transaction(self, event_id):
        """The stored transaction with the given event id."""
        return Transaction.from_record(self._frame.iloc[self.position(event_id)])

    def max_size(self, key):
        """Largest number of events of a single entity grouped by ``key``."""
        sizes = [
            len(group[0])
            for (group_key, _), groups in self._groups.items()
            if group_key == key
            for group in groups.values()
        ]
        return max(sizes, default=0)

    def window_values(self, basis, transaction):
        """Values in the trailing window of ``transaction`` for ``basis``,
        with the stored copy of the row replaced by ``transaction`` itself."""
        key, window_ms, field = basis
        own = float(getattr(transaction, field))
        group = self._groups[(key, field)].get(int(getattr(transaction, key)))
        if group is None:
            return np.array([own])

        timestamps, ids, values = group
        t, event_id = transaction.timestamp, transaction.event_id
        lo = np.searchsorted(timestamps, t - window_ms, side="right")
        tie = np.searchsorted(timestamps, t, side="left")
        end = np.searchsorted(timestamps, t, side="right")
        hi = tie + np.searchsorted(ids[tie:end], event_id, side="left")

        members = values[lo:hi][ids[lo:hi] != event_id]
        return np.append(members, own)

    def window_stats(self, basis, transaction):
        """:class:`WindowStats` of ``transaction`` for ``basis``."""
        return WindowStats.of(self.window_values(basis, transaction))

    def stats(self, transaction):
        """Window statistics of every basis, shape ``(bases, N_STATS)``."""
        stats = np.zeros((len(self.plan.bases), N_STATS), dtype=np.float64)
        for b, basis in enumerate(self.plan.bases):
            stats[b] = self.window_stats(basis, transaction).as_array()
        return stats


class EnrichedDataset:
    """Raw transactions together with their engineered features and window
    statistics.

    Args:
        frame (pandas.DataFrame): the raw transactions
        features (array[float]): feature matrix, one row per transaction
        stats (array[float]): window statistics of shape ``(n, bases, N_STATS)``
        plan (FeaturePlan): the plan the features were computed with
        index (ProfileIndex): index over the full history the rows belong to
    """

    def __init__(self, frame, features, stats, plan, index=None):
        self.frame = frame.reset_index(drop=True)
        self.features = features
        self.stats = stats
        self.plan = plan
        self._index = index

    def __len__(self):
        return len(self.frame)

    @property
    def names(self):
        return self.plan.names

    @property
    def labels(self):
        return self.frame["label"].to_numpy(dtype=np.int64)

    @property
    def profile_index(self):
        """ProfileIndex: index over the history of these rows, built on first use"""
        if self._index is None:
            self._index = ProfileIndex(self.frame, self.plan)
        return self._index

    def matrix(self, columns=None):
        """Feature matrix restricted to the named columns."""
        if columns is None:
            return self.features
        return self.features[:, [self.plan.position[name] for name in columns]]

    def row(self, i):
        """The :class:`EnrichedRow` at position ``i``."""
        return EnrichedRow(
            Transaction.from_record(self.frame.iloc[i]),
            self.features[i].copy(),
            self.stats[i].copy(),
        )

    def positives(self):
        """Row positions of the fraudulent transactions."""
        return np.flatnonzero(self.labels == 1)

    def take(self, rows):
        """Subset of the rows, keeping the history index of the full dataset."""
        if isinstance(rows, slice):
            rows = np.arange(len(self))[rows]
        rows = np.asarray(rows, dtype=np.int64)
        return EnrichedDataset(
            self.frame.iloc[rows],
            self.features[rows],
            self.stats[rows],
            self.plan,
            index=self.profile_index,
        )

    def with_rows(self, positions, rows, append=False):
        """Copy of the dataset with enriched rows replaced or appended.

        Args:
            positions (Sequence[int]): row positions to replace
            rows (Sequence[EnrichedRow]): the new rows
            append (bool): append the new rows instead of replacing

        Returns:
            EnrichedDataset: the modified copy
        """
        rows = list(rows)
        if not rows:
            return EnrichedDataset(
                self.frame.copy(), self.features.copy(), self.stats.copy(), self.plan, self._index
            )

        new_frame = pd.DataFrame(
            [dataclasses.asdict(r.base) for r in rows], columns=list(TRANSACTION_FIELDS)
        )
        new_features = np.stack([r.features for r in rows])
        new_stats = np.stack([r.stats for r in rows])

        if append:
            frame = pd.concat([self.frame, new_frame], ignore_index=True)
            features = np.vstack([self.features, new_features])
            stats = np.concatenate([self.stats, new_stats])
        else:
            positions = np.asarray(positions, dtype=np.int64)
            frame = self.frame.copy()
            frame.iloc[positions, :] = new_frame.to_numpy()
            frame = frame.astype(self.frame.dtypes.to_dict())
            features = self.features.copy()
            features[positions] = new_features
            stats = self.stats.copy()
            stats[positions] = new_stats
        return EnrichedDataset(frame, features, stats, self.plan, self._index)


def compute_features(dataset, plan):
    """Computes the engineered features of every transaction in one
    streaming pass.

    Profiles aggregate all rows of the same entity with timestamps in
    ``(t - window, t]`` that precede the row in ``(timestamp, event_id)``
    order, including the row itself.

    **Example**

    >>> enriched = compute_features(dataset, default_plan())
    >>> enriched.matrix(["count_card_24h"])[:3]
    array([[1.], [1.], [2.]])

    Args:
        dataset (pandas.DataFrame): transactions sorted by ``(timestamp, event_id)``
        plan (FeaturePlan): the features to compute

    Returns:
        EnrichedDataset: the enriched transactions

    Raises:
        ValueError: if the dataset is not sorted
    """
    _check_sorted(dataset)
    n = len(dataset)
    n_bases = len(plan.bases)
    stats = np.zeros((n, n_bases, N_STATS), dtype=np.float64)

    needs = []
    for basis in plan.bases:
        aggregations = {s.aggregation for s in plan.profiles() if s.basis == basis}
        needs.append(("stddev" in aggregations, "max" in aggregations))

    timestamps = dataset["timestamp"].to_numpy(dtype=np.int64).tolist()
    keys = {key: dataset[key].to_numpy(dtype=np.int64).tolist() for key in GROUP_KEYS}
    values = {f: dataset[f].to_numpy(dtype=np.float64).tolist() for f in PROFILE_FIELDS}
    windows = [collections.defaultdict(_Window) for _ in plan.bases]

    for i in range(n):
        t = timestamps[i]
        for b, (key, window_ms, field) in enumerate(plan.bases):
            track_m2, track_max = needs[b]
            state = windows[b][keys[key][i]]
            state.push(t, values[field][i], window_ms, track_max)
            stats[i, b] = state.stats(track_m2, track_max)

    features = plan.assemble(_frame_columns(dataset), stats)
    logger.info("Computed %d features for %d transactions.", len(plan), n)
    return EnrichedDataset(dataset, features, stats, plan)


def recompute_row(dataset, plan, modified_row, index=None):
    """Computes the enriched row the full pipeline would produce for a single
    modified transaction.

    The modified transaction replaces the stored one with the same event id.
    Effects of the modification on the features of other rows are ignored.

    Args:
        dataset (pandas.DataFrame or EnrichedDataset): the full history
        plan (FeaturePlan): the feature plan
        modified_row (Transaction): the modified transaction
        index (ProfileIndex): a prebuilt index over ``dataset``

    Returns:
        EnrichedRow: the recomputed row

    Raises:
        ValueError: if the event id is not part of the dataset
    """
    if index is None:
        if isinstance(dataset, EnrichedDataset):
            index = dataset.profile_index
        else:
            index = ProfileIndex(dataset, plan)
    index.position(modified_row.event_id)

    stats = index.stats(modified_row)
    features = plan.assemble(transaction_columns([modified_row]), stats[None])[0]
    return EnrichedRow(modified_row, features, stats)


def save_enriched(enriched, filepath):
    """Writes the raw columns followed by the feature columns as CSV."""
    frame = enriched.frame[list(TRANSACTION_FIELDS)].copy()
    features = pd.DataFrame(enriched.features, columns=list(enriched.names))
    return write_csv(pd.concat([frame, features], axis=1), filepath)


def load_enriched(filepath, plan):
    """Reads an enriched dataset written by :func:`save_enriched`.

    The window statistics are not persisted, so the features are recomputed
    from the raw columns and checked against the stored ones.

    Raises:
        ValueError: if the stored features do not belong to ``plan``
    """
    stored = pd.read_csv(filepath, usecols=lambda c: c not in TRANSACTION_FIELDS)
    if tuple(stored.columns) != plan.names:
        raise ValueError(
            f"The features stored in {filepath} do not match the feature plan: "
            f"{list(stored.columns)} != {list(plan.names)}."
        )

    enriched = compute_features(load_dataset(filepath), plan)
    if not np.allclose(stored.to_numpy(dtype=np.float64), enriched.features, rtol=1e-6, atol=1e-5):
        raise ValueError(f"The features stored in {filepath} are stale; rerun featurize.")
    return enriched
