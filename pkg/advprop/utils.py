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
"""This module contains utility functions shared by the advprop pipeline
stages: deterministic seed derivation, duration parsing and CSV writing.
"""
import hashlib
import re

import numpy as np

MS_PER_MINUTE = 60_000
MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000
MS_PER_WEEK = 604_800_000

_DURATION_UNITS = {
    "ms": 1,
    "s": 1000,
    "m": MS_PER_MINUTE,
    "min": MS_PER_MINUTE,
    "h": MS_PER_HOUR,
    "d": MS_PER_DAY,
    "w": MS_PER_WEEK,
}

_DURATION_RE = re.compile(r"^\s*(\d+)\s*([a-z]+)\s*$")

CSV_FLOAT_FORMAT = "%.6f"


def derive_seed(seed, *names):
    """Derives a 64-bit sub-seed for a named stochastic component.

    The derivation hashes the global seed together with the component names,
    so it does not depend on the interpreter's hash randomization and two
    components never share a random stream by accident.

    **Example**

    >>> derive_seed(7, "synthdata") == derive_seed(7, "synthdata")
    True
    >>> derive_seed(7, "search", 3) == derive_seed(7, "search", 4)
    False

    Args:
        seed (int): the global seed
        *names: component names (anything with a stable ``str``)

    Returns:
        int: the derived seed in ``[0, 2**64)``
    """
    key = "/".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, *names):
    """Creates a ``numpy.random.Generator`` seeded with ``derive_seed(seed, *names)``."""
    return np.random.default_rng(derive_seed(seed, *names))


def parse_duration(text):
    """Parses a duration such as ``"1h"``, ``"24h"``, ``"7d"`` or ``"30d"``
    into milliseconds.

    Integers are accepted as already being milliseconds.

    Args:
        text (str or int): the duration to parse

    Returns:
        int: the duration in milliseconds

    Raises:
        ValueError: if the duration cannot be parsed or is not positive
    """
    if isinstance(text, (int, np.integer)):
        value = int(text)
    else:
        match = _DURATION_RE.match(str(text).lower())
        if match is None or match.group(2) not in _DURATION_UNITS:
            raise ValueError(f"Could not parse the duration {text!r}.")
        value = int(match.group(1)) * _DURATION_UNITS[match.group(2)]

    if value <= 0:
        raise ValueError(f"Durations have to be positive, got {text!r}.")
    return value


def format_duration(ms):
    """Formats milliseconds using the largest unit that divides them exactly."""
    for unit in ("d", "h", "m", "s"):
        size = _DURATION_UNITS[unit]
        if ms % size == 0:
            return f"{ms // size}{unit}"
    return f"{ms}ms"


def write_csv(frame, filepath):
    """Writes a data frame as CSV with a fixed float format.

    Floats are written with 6 decimal places and ``\\n`` line endings so that
    reruns with the same inputs produce byte-identical files.

    Args:
        frame (pandas.DataFrame): the frame to write
        filepath (str or os.PathLike): the destination

    Returns:
        str: the path written to
    """
    frame.to_csv(filepath, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return str(filepath)


class ConfigurationError(ValueError):
    """Raised for invalid experiment configurations, generator settings,
    feature plans and search parameters."""
