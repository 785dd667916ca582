"""Synthetic assisted-living dataset: per-user profiles plus time-stamped readings.

Every user draws from an independent substream keyed by ``(seed, user_id)``, so a
user's entries do not depend on how many other users are generated or in which
order.
"""

from __future__ import annotations

from calendar import timegm
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import EmptySplit, RangeError, SerializationOverflow
from .records import (
    DISEASES,
    MARITAL_STATUSES,
    MAX_LEN,
    OCCUPATIONS,
    AttributeSchema,
    RecordEntry,
    serialize_entry,
)

FIRST_NAMES = (
    "john", "mary", "peter", "anna", "james", "maria", "thomas", "helen",
    "george", "rose", "frank", "edith", "walter", "agnes", "henry", "clara",
    "arthur", "ida", "karl", "emma", "paul", "lena", "otto", "grace",
)
SURNAMES = (
    "smith", "brown", "taylor", "wilson", "evans", "walker", "wright", "green",
    "huber", "bauer", "wagner", "mayer", "gruber", "moser", "martin", "bernard",
    "dubois", "petit", "jones", "white", "hall", "clark", "fischer", "weber",
)
STREETS = (
    "oak", "mill", "church", "park", "high", "station",
    "green", "king", "queen", "bridge", "school", "lake",
)
# city -> three-digit area code; phone numbers are 0<area>-<six digits>
CITIES = {
    "graz": "316", "wien": "122", "linz": "732", "metz": "387",
    "leeds": "113", "york": "190", "bath": "225", "derby": "133",
}

STATIC_KEYS = (
    "name", "age", "gender", "height", "weight", "address",
    "phone", "occupation", "marital", "disease",
)


@dataclass(frozen=True)
class ValueRanges:
    """Sampling ranges; integer bounds are inclusive."""

    age: tuple[int, int] = (60, 95)
    height: tuple[int, int] = (145, 195)
    weight: tuple[int, int] = (45, 120)
    systolic: tuple[int, int] = (90, 180)
    diastolic: tuple[int, int] = (60, 110)
    glucose: tuple[int, int] = (70, 250)
    pedometer: tuple[int, int] = (0, 9999)
    temperature: tuple[int, int] = (17, 27)
    energy_wh: tuple[int, int] = (0, 5000)
    house_number: tuple[int, int] = (1, 99)
    start_year: int = 2017
    step_seconds: tuple[int, int] = (300, 7200)
    first_names: tuple[str, ...] = FIRST_NAMES
    surnames: tuple[str, ...] = SURNAMES
    streets: tuple[str, ...] = STREETS
    cities: tuple[str, ...] = tuple(CITIES)
    occupations: tuple[str, ...] = OCCUPATIONS
    marital: tuple[str, ...] = MARITAL_STATUSES
    diseases: tuple[str, ...] = DISEASES

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], int):
                if value[0] > value[1]:
                    raise ValueError(f"{name}: empty range {value}")
        for name in ("first_names", "surnames", "streets", "cities",
                     "occupations", "marital", "diseases"):
            if not getattr(self, name):
                raise ValueError(f"{name}: empty choice list")
        lo, hi = self.step_seconds
        if lo < 60 or lo // 60 > hi // 60:
            raise ValueError("step_seconds must admit at least one whole minute >= 60")


@dataclass(frozen=True)
class SimulationConfig:
    n_users: int = 10000
    entries_per_user: int = 100
    seed: int = 0
    value_ranges: ValueRanges = field(default_factory=ValueRanges)
    max_len: int = MAX_LEN

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.entries_per_user < 1:
            raise ValueError("n_users and entries_per_user must be >= 1")
        self.value_ranges.validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _user_rng(seed: int, user_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(user_id,)))


def _randint(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _choice(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def sample_profile(rng: np.random.Generator, vr: ValueRanges) -> dict[str, Any]:
    """Static attributes for one user."""
    city = _choice(rng, vr.cities)
    area = CITIES.get(city, "100")
    return {
        "name": f"{_choice(rng, vr.first_names)}-{_choice(rng, vr.surnames)}",
        "age": _randint(rng, vr.age),
        "gender": _choice(rng, ("m", "f")),
        "height": _randint(rng, vr.height),
        "weight": _randint(rng, vr.weight),
        "address": f"{_randint(rng, vr.house_number)}-{_choice(rng, vr.streets)}-{city}",
        "phone": f"0{area}-{int(rng.integers(0, 1_000_000)):06d}",
        "occupation": _choice(rng, vr.occupations),
        "marital": _choice(rng, vr.marital),
        "disease": _choice(rng, vr.diseases),
    }


def _year_bounds(year: int) -> tuple[int, int]:
    return timegm((year, 1, 1, 0, 0, 0)), timegm((year + 1, 1, 1, 0, 0, 0))


def simulate_user(config: SimulationConfig, schema: AttributeSchema, user_id: int) -> list[RecordEntry]:
    vr = config.value_ranges
    rng = _user_rng(config.seed, user_id)
    profile = sample_profile(rng, vr)
    n = config.entries_per_user
    year_start, year_end = _year_bounds(vr.start_year)
    # whole minutes so the minute-resolution rendering round-trips
    start = year_start + 60 * int(rng.integers(0, (year_end - year_start) // 60))
    step_lo, step_hi = -(-vr.step_seconds[0] // 60), vr.step_seconds[1] // 60
    offsets = np.concatenate([[0], np.cumsum(rng.integers(step_lo, step_hi + 1, size=n - 1))])
    timestamps = start + 60 * offsets

    def draw(bounds: tuple[int, int]) -> np.ndarray:
        return rng.integers(bounds[0], bounds[1] + 1, size=n)

    systolic, diastolic = draw(vr.systolic), draw(vr.diastolic)
    glucose, pedometer = draw(vr.glucose), draw(vr.pedometer)
    temperature, energy = draw(vr.temperature), draw(vr.energy_wh)
    switches = rng.integers(0, 2, size=(4, n)).astype(bool)
    order = schema.keys
    entries = []
    for k in range(n):
        values = dict(profile)
        values.update({
            "timestamp": int(timestamps[k]),
            "blood_pressure": (int(systolic[k]), int(diastolic[k])),
            "glucose": int(glucose[k]),
            "pedometer": int(pedometer[k]),
            "presence": bool(switches[0, k]),
            "temperature": int(temperature[k]),
            "light": bool(switches[1, k]),
            "window": bool(switches[2, k]),
            "door": bool(switches[3, k]),
            "energy": int(energy[k]),
        })
        entry = RecordEntry(user_id, tuple(values[key] for key in order))
        try:
            serialize_entry(entry, schema, config.max_len)
        except SerializationOverflow as exc:
            raise RangeError(f"user {user_id} entry {k}: {exc}") from None
        entries.append(entry)
    return entries


def simulate_dataset(config: SimulationConfig, schema: AttributeSchema) -> list[RecordEntry]:
    dataset: list[RecordEntry] = []
    for user_id in range(config.n_users):
        dataset.extend(simulate_user(config, schema, user_id))
    return dataset


def split_train_test(
    dataset: Sequence[RecordEntry],
    train_fraction: float,
    seed: int,
) -> tuple[list[RecordEntry], list[RecordEntry]]:
    """User-disjoint split; entry order within each side follows ``dataset``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    users = sorted({e.user_id for e in dataset})
    n_train = int(round(train_fraction * len(users)))
    if n_train == 0 or n_train == len(users):
        raise EmptySplit(f"{len(users)} users at fraction {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(len(users))
    train_users = {users[i] for i in order[:n_train]}
    train = [e for e in dataset if e.user_id in train_users]
    test = [e for e in dataset if e.user_id not in train_users]
    return train, test
