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
The perturbation space on raw transactions and the cost model used to
measure how hard an attack is for a fraudster to realize.
"""
import collections
import dataclasses
import enum
import math

import numpy as np

from advprop.feature_engine import geo_cluster
from advprop.synthdata import CITY_CENTERS, CVV_VALUES
from advprop.utils import MS_PER_MINUTE, MS_PER_WEEK


class Slot(enum.Enum):
    """The perturbable components of an attack, in propagation order."""

    NETWORK = "network"
    GEO = "geo"
    TIME = "time"
    AMOUNT = "amount"
    CARD = "card"


class CardAction(enum.Enum):
    NONE = "none"
    RESET = "reset"
    SWITCH = "switch"


@dataclasses.dataclass(frozen=True)
class CardBundle:
    """Attributes that come with a card and change together on a switch."""

    card_network: str
    cvv_match: str


@dataclasses.dataclass(frozen=True)
class CostModel:
    """Per-perturbation costs. The maxima sum to 100 with a card switch.

    Args:
        network_cost (float): cost of changing the IP network
        geo_cost (float): cost of moving the geolocation
        temporal_max (float): cost of a time shift of ``max_time_shift_ms``
        amount_max (float): cost of scaling the amount to either range endpoint
        card_reset_cost (float): cost of using a fresh card
        card_switch_extra (float): additional cost of also changing the card's
            attribute bundle
        min_amount_scale (float): smallest allowed amount scale
        max_amount_scale (float): largest allowed amount scale
        max_time_shift_ms (int): largest allowed absolute time shift
    """

    network_cost: float = 3.0
    geo_cost: float = 4.0
    temporal_max: float = 18.0
    amount_max: float = 26.0
    card_reset_cost: float = 33.0
    card_switch_extra: float = 16.0
    min_amount_scale: float = 0.02
    max_amount_scale: float = 5.0
    max_time_shift_ms: int = MS_PER_WEEK

    def __post_init__(self):
        for field in dataclasses.fields(self):
            if getattr(self, field.name) < 0:
                raise ValueError(f"The cost parameter {field.name} has to be non-negative.")
        if not 0 < self.min_amount_scale < 1 < self.max_amount_scale:
            raise ValueError("The amount scale range has to contain 1 in its interior.")
        if self.max_time_shift_ms < MS_PER_MINUTE:
            raise ValueError("max_time_shift_ms has to be at least one minute.")

    @property
    def c_temporal(self):
        return self.temporal_max / math.log(self.max_time_shift_ms + 1)

    @property
    def c_amount_up(self):
        return self.amount_max / math.log(self.max_amount_scale)

    @property
    def c_amount_down(self):
        return self.amount_max / math.log(1.0 / self.min_amount_scale)

    @property
    def card_switch_cost(self):
        return self.card_reset_cost + self.card_switch_extra

    @property
    def max_norm(self):
        """float: norm of the attack with every slot at its maximum"""
        return (
            self.network_cost
            + self.geo_cost
            + self.temporal_max
            + self.amount_max
            + self.card_switch_cost
        )

    def amount_cost(self, scale):
        """Cost of multiplying the amount by ``scale``.

        Raises:
            ValueError: if ``scale`` is outside the allowed range
        """
        if not self.min_amount_scale <= scale <= self.max_amount_scale:
            raise ValueError(
                f"Amount scale {scale} outside [{self.min_amount_scale}, {self.max_amount_scale}]."
            )
        if scale > 1:
            return min(self.c_amount_up * math.log(scale), self.amount_max)
        return min(self.c_amount_down * math.log(1.0 / scale), self.amount_max)

    def temporal_cost(self, delta_ms):
        """Cost of shifting the timestamp by ``delta_ms`` milliseconds.

        Raises:
            ValueError: if the shift exceeds ``max_time_shift_ms``
        """
        if abs(delta_ms) > self.max_time_shift_ms:
            raise ValueError(
                f"Time shift of {delta_ms} ms exceeds the maximum of {self.max_time_shift_ms} ms."
            )
        return min(self.c_temporal * math.log(abs(delta_ms) + 1), self.temporal_max)

    def slot_cost(self, slot, value):
        """Cost of a single slot set to ``value``; ``None`` costs nothing."""
        if value is None or value is CardAction.NONE:
            return 0.0
        if slot is Slot.NETWORK:
            return self.network_cost
        if slot is Slot.GEO:
            return self.geo_cost
        if slot is Slot.TIME:
            return self.temporal_cost(value)
        if slot is Slot.AMOUNT:
            return self.amount_cost(value)
        if value is CardAction.RESET:
            return self.card_reset_cost
        return self.card_switch_cost

    def norm(self, attack):
        """Sum of the costs of the present slots of ``attack``."""
        return sum(self.slot_cost(slot, value) for slot, value in attack.slots().items())


DEFAULT_COSTS = CostModel()


@dataclasses.dataclass(frozen=True)
class AttackVector:
    """A composite perturbation of one transaction.

    Absent slots are ``None``. The card slot is either a reset, which only
    replaces the card identifier, or a switch to another card's attribute
    bundle, which implies a reset.

    **Example**

    >>> attack = AttackVector(network_change="net03", amount_scale=0.5)
    >>> round(attack_norm(attack), 4)
    7.6068
    """

    network_change: str = None
    geo_change: tuple = None
    time_shift_ms: int = None
    amount_scale: float = None
    card_action: CardAction = CardAction.NONE
    card_bundle: CardBundle = None

    def __post_init__(self):
        if self.amount_scale is not None and self.amount_scale == 1:
            raise ValueError("A present amount scale has to differ from 1.")
        if self.time_shift_ms is not None and self.time_shift_ms == 0:
            raise ValueError("A present time shift has to differ from 0.")
        if self.geo_change is not None:
            lat, lon = self.geo_change
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                raise ValueError(f"Invalid geolocation {self.geo_change}.")
        if (self.card_action is CardAction.SWITCH) != (self.card_bundle is not None):
            raise ValueError("A card bundle is given if and only if the card is switched.")

    def slots(self):
        """dict: the present slots and their values, in propagation order"""
        card = None
        if self.card_action is CardAction.RESET:
            card = CardAction.RESET
        elif self.card_action is CardAction.SWITCH:
            card = self.card_bundle
        values = {
            Slot.NETWORK: self.network_change,
            Slot.GEO: self.geo_change,
            Slot.TIME: self.time_shift_ms,
            Slot.AMOUNT: self.amount_scale,
            Slot.CARD: card,
        }
        return {slot: value for slot, value in values.items() if value is not None}

    @property
    def is_empty(self):
        return not self.slots()

    def with_slot(self, slot, value):
        """Copy of the attack with one slot set (``None`` removes it).

        The card slot takes :attr:`CardAction.RESET` or a :class:`CardBundle`.
        """
        if slot is Slot.NETWORK:
            return dataclasses.replace(self, network_change=value)
        if slot is Slot.GEO:
            return dataclasses.replace(self, geo_change=value)
        if slot is Slot.TIME:
            return dataclasses.replace(self, time_shift_ms=None if value is None else int(value))
        if slot is Slot.AMOUNT:
            return dataclasses.replace(self, amount_scale=value)
        if value is None or value is CardAction.NONE:
            return dataclasses.replace(self, card_action=CardAction.NONE, card_bundle=None)
        if value is CardAction.RESET:
            return dataclasses.replace(self, card_action=CardAction.RESET, card_bundle=None)
        return dataclasses.replace(self, card_action=CardAction.SWITCH, card_bundle=value)

    def describe(self):
        """Short text form used in logs and CSV outputs."""
        parts = []
        for slot, value in self.slots().items():
            if isinstance(value, CardBundle):
                value = f"switch({value.card_network},{value.cvv_match})"
            elif value is CardAction.RESET:
                value = "reset"
            elif slot is Slot.GEO:
                value = f"({value[0]:.4f},{value[1]:.4f})"
            elif slot is Slot.AMOUNT:
                value = f"{value:.4f}"
            parts.append(f"{slot.value}={value}")
        return " ".join(parts) or "none"


def amount_cost(scale, costs=DEFAULT_COSTS):
    """Cost of scaling the amount by ``scale``.

    **Example**

    >>> amount_cost(5.0)
    26.0
    >>> round(amount_cost(2.0), 2)
    11.2

    Args:
        scale (float): the scale factor in ``[0.02, 5]``
        costs (CostModel): the cost model

    Returns:
        float: the cost in ``[0, 26]``

    Raises:
        ValueError: if ``scale`` is outside the allowed range
    """
    return costs.amount_cost(scale)


def temporal_cost(delta_ms, costs=DEFAULT_COSTS):
    """Cost of a signed time shift in milliseconds, symmetric in the sign.

    Raises:
        ValueError: if the shift is larger than one week
    """
    return costs.temporal_cost(delta_ms)


def attack_norm(attack, costs=DEFAULT_COSTS):
    """Norm of an attack: the sum of its component costs, in ``[0, 100]``
    for the default cost model."""
    return costs.norm(attack)


def apply_attack(transaction, attack, fresh_card_id):
    """Applies an attack to a raw transaction.

    Args:
        transaction (Transaction): the clean transaction
        attack (AttackVector): the perturbation
        fresh_card_id (int): card identifier used by resets and switches

    Returns:
        Transaction: the perturbed transaction with the same event id and label
    """
    changes = {}
    if attack.network_change is not None:
        changes["ip_network"] = attack.network_change
    if attack.geo_change is not None:
        changes["latitude"], changes["longitude"] = attack.geo_change
    if attack.time_shift_ms is not None:
        changes["timestamp"] = transaction.timestamp + attack.time_shift_ms
    if attack.amount_scale is not None:
        changes["amount"] = transaction.amount * attack.amount_scale
    if attack.card_action is not CardAction.NONE:
        changes["card_id"] = int(fresh_card_id)
    if attack.card_bundle is not None:
        changes["card_network"] = attack.card_bundle.card_network
        changes["cvv_match"] = attack.card_bundle.cvv_match
    return transaction.replace(**changes)


@dataclasses.dataclass(frozen=True)
class GeoRegion:
    """A dense geo cluster: mean and standard deviation of its coordinates."""

    latitude: float
    longitude: float
    lat_std: float
    lon_std: float
    size: int


@dataclasses.dataclass(frozen=True)
class DatasetStatistics:
    """Dataset summaries that component sampling draws from.

    Args:
        ip_networks (tuple[str]): observed IP networks
        card_bundles (tuple[CardBundle]): one bundle per observed card
        regions (tuple[GeoRegion]): geo clusters with sufficient density
        fresh_card_id (int): a card identifier absent from the dataset
    """

    ip_networks: tuple
    card_bundles: tuple
    regions: tuple
    fresh_card_id: int

    @classmethod
    def from_frame(cls, frame, min_region_share=0.01):
        """Summarizes a transaction frame.

        Args:
            frame (pandas.DataFrame): the transactions
            min_region_share (float): smallest share of rows a geo cluster
                needs to count as dense

        Returns:
            DatasetStatistics: the summaries
        """
        ip_networks = tuple(sorted(frame["ip_network"].unique()))

        bundles = []
        grouped = frame.groupby("card_id", sort=True)
        for (_, network), (_, cvv) in zip(
            grouped["card_network"].first().items(), grouped["cvv_match"].agg(_mode).items()
        ):
            bundles.append(CardBundle(network, cvv))

        lat = frame["latitude"].to_numpy(dtype=np.float64)
        lon = frame["longitude"].to_numpy(dtype=np.float64)
        clusters = geo_cluster(lat, lon) if len(frame) else np.array([], dtype=np.int64)
        regions = []
        for c in range(len(CITY_CENTERS)):
            members = clusters == c
            size = int(members.sum())
            if size >= 2 and size >= min_region_share * len(frame):
                regions.append(
                    GeoRegion(
                        float(lat[members].mean()),
                        float(lon[members].mean()),
                        float(lat[members].std()),
                        float(lon[members].std()),
                        size,
                    )
                )

        fresh = int(frame["card_id"].max()) + 1 if len(frame) else 0
        return cls(ip_networks, tuple(bundles), tuple(regions), fresh)


def _mode(values):
    counts = collections.Counter(values)
    # Ties resolve to the vocabulary order
    return max(CVV_VALUES, key=lambda v: (counts.get(v, 0), -CVV_VALUES.index(v)))


def sample_amount_scale(rng, costs=DEFAULT_COSTS):
    """Log-uniform amount scale on the cost model's range, never exactly 1."""
    while True:
        scale = float(
            np.exp(rng.uniform(math.log(costs.min_amount_scale), math.log(costs.max_amount_scale)))
        )
        if scale != 1.0:
            return scale


def sample_time_shift(rng, costs=DEFAULT_COSTS):
    """Signed time shift with uniform sign and log-uniform magnitude between
    one minute and ``costs.max_time_shift_ms``."""
    magnitude = np.exp(rng.uniform(math.log(MS_PER_MINUTE), math.log(costs.max_time_shift_ms)))
    magnitude = int(min(max(round(magnitude), MS_PER_MINUTE), costs.max_time_shift_ms))
    sign = 1 if rng.uniform() < 0.5 else -1
    return sign * magnitude


def sample_card_bundle(statistics, rng):
    """Bundle of a uniformly drawn observed card.

    Raises:
        ValueError: if no cards were observed
    """
    if not statistics.card_bundles:
        raise ValueError("No card bundles to sample from.")
    return statistics.card_bundles[rng.integers(len(statistics.card_bundles))]


def sample_component(slot, transaction, statistics, rng, costs=DEFAULT_COSTS):
    """Draws a random value for one slot of an attack on ``transaction``.

    * network: uniform over the observed networks except the current one
    * geo: uniform over the dense regions, then Gaussian jitter
    * time: uniform sign, log-uniform magnitude in [1 minute, 1 week]
    * amount: log-uniform scale on [0.02, 5]
    * card: a reset or a switch to an observed card's bundle, equally likely

    Args:
        slot (Slot): the slot to sample
        transaction (Transaction): the clean transaction
        statistics (DatasetStatistics): the dataset summaries
        rng (numpy.random.Generator): the random generator
        costs (CostModel): provides the amount and time ranges

    Returns:
        the slot value, as accepted by :meth:`AttackVector.with_slot`

    Raises:
        ValueError: if there is nothing to sample from
    """
    if slot is Slot.NETWORK:
        choices = [v for v in statistics.ip_networks if v != transaction.ip_network]
        if not choices:
            raise ValueError("The IP network vocabulary has no value to switch to.")
        return choices[rng.integers(len(choices))]

    if slot is Slot.GEO:
        if not statistics.regions:
            raise ValueError("There are no dense geo regions to move to.")
        region = statistics.regions[rng.integers(len(statistics.regions))]
        lat = float(np.clip(rng.normal(region.latitude, region.lat_std), -90.0, 90.0))
        lon = float(np.clip(rng.normal(region.longitude, region.lon_std), -180.0, 180.0))
        return (round(lat, 6), round(lon, 6))

    if slot is Slot.TIME:
        return sample_time_shift(rng, costs)

    if slot is Slot.AMOUNT:
        return sample_amount_scale(rng, costs)

    if rng.uniform() < 0.5:
        return CardAction.RESET
    return sample_card_bundle(statistics, rng)
