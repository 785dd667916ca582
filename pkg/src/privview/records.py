"""Record schema, text serialization, character vocabulary and padded id sequences.

An entry is rendered as its 20 attribute values joined by ``|``. Only the 40
printable symbols of :data:`ALPHABET` may appear, so multi-word values are
hyphenated and timestamps use ``yyyy-mm-dd/hh-mm``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    DatasetFormatError,
    FieldCountMismatch,
    MalformedSequence,
    SerializationOverflow,
    UnrepresentableCharacter,
    ValueParseError,
)

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789|*-/"
SEPARATOR = "|"
MAX_LEN = 160
DATASET_HEADER = "privview-dataset v1"

PERSONAL, MEDICAL, SENSOR = "personal", "medical", "sensor"

_TIMESTAMP_FORMAT = "%Y-%m-%d/%H-%M"
_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}/\d{2}-\d{2}$")
_INT_RE = re.compile(r"^(0|[1-9]\d*)$")


@dataclass(frozen=True)
class Attribute:
    """One column of the schema.

    ``domain`` is one of ``text`` (matched by ``pattern``), ``enum`` (one of
    ``choices``), ``int`` (decimal in ``[low, high]``), ``bp`` (systolic/diastolic
    pair), ``timestamp`` (whole minutes since the epoch, UTC) or ``switch``
    (on/off).
    """

    name: str
    key: str
    kind: str
    domain: str
    unit: str = ""
    choices: tuple[str, ...] = ()
    low: int | None = None
    high: int | None = None
    pattern: str | None = None

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "key": self.key,
            "kind": self.kind,
            "domain": self.domain,
            "unit": self.unit,
            "choices": list(self.choices),
            "low": self.low,
            "high": self.high,
            "pattern": self.pattern,
        }

    def render(self, value: Any) -> str:
        """Render a typed value into alphabet text (case-folded)."""
        d = self.domain
        if d == "int":
            return str(int(value))
        if d == "bp":
            systolic, diastolic = value
            return f"{int(systolic)}/{int(diastolic)}"
        if d == "timestamp":
            return datetime.fromtimestamp(int(value), tz=timezone.utc).strftime(_TIMESTAMP_FORMAT)
        if d == "switch":
            return "on" if value else "off"
        return str(value).lower()

    def parse(self, text: str) -> Any:
        """Inverse of :meth:`render`; raises ValueParseError outside the domain."""
        d = self.domain
        try:
            if d == "int":
                if not _INT_RE.match(text):
                    raise ValueError(text)
                value: Any = int(text)
                if (self.low is not None and value < self.low) or (
                    self.high is not None and value > self.high
                ):
                    raise ValueError(f"{value} outside [{self.low}, {self.high}]")
                return value
            if d == "bp":
                systolic, diastolic = text.split("/")
                if not (_INT_RE.match(systolic) and _INT_RE.match(diastolic)):
                    raise ValueError(text)
                return (int(systolic), int(diastolic))
            if d == "timestamp":
                if not _TIMESTAMP_RE.match(text):
                    raise ValueError(text)
                dt = datetime.strptime(text, _TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)
                return int(dt.timestamp())
            if d == "switch":
                if text not in ("on", "off"):
                    raise ValueError(text)
                return text == "on"
            if d == "enum":
                if text not in self.choices:
                    raise ValueError(text)
                return text
            if self.pattern is not None and not re.fullmatch(self.pattern, text):
                raise ValueError(text)
            return text
        except ValueError as exc:
            raise ValueParseError(f"{self.name}: cannot parse {text!r} ({exc})") from None


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        keys = [a.key for a in self.attributes]
        names = [a.name for a in self.attributes]
        if len(set(keys)) != len(keys) or len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")

    def __len__(self) -> int:
        return len(self.attributes)

    def __iter__(self):
        return iter(self.attributes)

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(a.key for a in self.attributes)

    def index(self, key: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.key == key or a.name == key:
                return i
        raise KeyError(key)

    def attribute(self, key: str) -> Attribute:
        return self.attributes[self.index(key)]

    def fingerprint(self) -> str:
        payload = json.dumps([a.describe() for a in self.attributes], sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


OCCUPATIONS = (
    "nurse", "carer", "doctor",
    "engineer", "mechanic", "electrician",
    "clerk", "cook", "driver", "teacher",
    "farmer", "artist",
    "pensioner",
)
MARITAL_STATUSES = ("single", "married", "widowed", "divorced")
DISEASES = (
    "alzheimer", "lewy-body", "parkinson", "stroke",
    "angina", "arrhythmia", "heart-failure", "diabetes",
    "copd", "asthma", "arthritis", "osteoporosis",
)


def default_schema() -> AttributeSchema:
    """The 20 attributes in access-table row order."""
    return AttributeSchema((
        Attribute("Name", "name", PERSONAL, "text", pattern=r"[a-z]+(-[a-z]+)+"),
        Attribute("Age", "age", PERSONAL, "int", unit="years", low=0, high=130),
        Attribute("Gender", "gender", PERSONAL, "enum", choices=("m", "f")),
        Attribute("Height", "height", PERSONAL, "int", unit="cm", low=50, high=250),
        Attribute("Weight", "weight", PERSONAL, "int", unit="kg", low=20, high=300),
        Attribute("Address", "address", PERSONAL, "text", pattern=r"[1-9]\d*-[a-z]+-[a-z]+"),
        Attribute("Phone Number", "phone", PERSONAL, "text", pattern=r"0\d{3}-\d{6}"),
        Attribute("Occupation", "occupation", PERSONAL, "enum", choices=OCCUPATIONS),
        Attribute("Marital Status", "marital", PERSONAL, "enum", choices=MARITAL_STATUSES),
        Attribute("Timestamp", "timestamp", SENSOR, "timestamp", unit="s"),
        Attribute("Blood Pressure", "blood_pressure", MEDICAL, "bp", unit="mmHg"),
        Attribute("Glucose level", "glucose", MEDICAL, "int", unit="mg/dL", low=0, high=1000),
        Attribute("Disease", "disease", MEDICAL, "enum", choices=DISEASES),
        Attribute("Wearable Pedometer", "pedometer", SENSOR, "int", unit="steps", low=0, high=99999),
        Attribute("Presence Sensor", "presence", SENSOR, "switch"),
        Attribute("Temperature Sensor", "temperature", SENSOR, "int", unit="C", low=0, high=50),
        Attribute("Light Sensor", "light", SENSOR, "switch"),
        Attribute("Window Sensor", "window", SENSOR, "switch"),
        Attribute("External Door Sensor", "door", SENSOR, "switch"),
        Attribute("Energy Consumption", "energy", SENSOR, "int", unit="Wh", low=0, high=99999),
    ))


@dataclass(frozen=True)
class RecordEntry:
    user_id: int
    values: tuple[Any, ...]

    def get(self, schema: AttributeSchema, key: str) -> Any:
        return self.values[schema.index(key)]


@dataclass(frozen=True)
class Vocabulary:
    symbols: str = ALPHABET
    pad_id: int = 40
    eos_id: int = 41
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be distinct")
        n = len(self.symbols)
        if {self.pad_id, self.eos_id} != {n, n + 1}:
            raise ValueError("pad and eos must be the two ids after the printable range")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        """Total number of ids (printable symbols plus pad and eos)."""
        return len(self.symbols) + 2

    def id_of(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise UnrepresentableCharacter(f"symbol {ch!r} is not in the vocabulary") from None

    def check_text(self, text: str) -> None:
        for ch in text:
            if ch not in self._index:
                raise UnrepresentableCharacter(f"symbol {ch!r} is not in the vocabulary")


DEFAULT_VOCAB = Vocabulary()


@dataclass(frozen=True)
class CharSequence:
    """Symbol ids: content, one eos, then pad up to ``max_len + 1`` slots."""

    ids: tuple[int, ...]
    length: int

    @property
    def max_len(self) -> int:
        return len(self.ids) - 1


def serialize_entry(
    entry: RecordEntry,
    schema: AttributeSchema,
    max_len: int = MAX_LEN,
    vocab: Vocabulary = DEFAULT_VOCAB,
) -> str:
    if len(entry.values) != len(schema):
        raise FieldCountMismatch(f"entry has {len(entry.values)} values, schema has {len(schema)}")
    text = SEPARATOR.join(a.render(v) for a, v in zip(schema, entry.values))
    vocab.check_text(text)
    if len(text) > max_len:
        raise SerializationOverflow(f"entry renders to {len(text)} chars, limit is {max_len}")
    return text


def split_fields(text: str, schema: AttributeSchema) -> list[str]:
    fields = text.split(SEPARATOR)
    if len(fields) != len(schema):
        raise FieldCountMismatch(f"expected {len(schema)} fields, found {len(fields)}")
    return fields


def deserialize_entry(text: str, schema: AttributeSchema, user_id: int = 0) -> RecordEntry:
    fields = split_fields(text, schema)
    return RecordEntry(user_id, tuple(a.parse(f) for a, f in zip(schema, fields)))


def encode_chars(text: str, vocab: Vocabulary = DEFAULT_VOCAB, max_len: int = MAX_LEN) -> CharSequence:
    if len(text) > max_len:
        raise SerializationOverflow(f"text has {len(text)} chars, limit is {max_len}")
    ids = [vocab.id_of(ch) for ch in text]
    ids.append(vocab.eos_id)
    length = len(ids)
    ids.extend([vocab.pad_id] * (max_len + 1 - length))
    return CharSequence(tuple(ids), length)


def decode_chars(seq: CharSequence, vocab: Vocabulary = DEFAULT_VOCAB) -> str:
    ids = seq.ids
    try:
        eos_at = ids.index(vocab.eos_id)
    except ValueError:
        raise MalformedSequence("sequence has no eos") from None
    if eos_at + 1 != seq.length:
        raise MalformedSequence(f"length {seq.length} disagrees with eos at {eos_at}")
    if any(i != vocab.pad_id for i in ids[eos_at + 1:]):
        raise MalformedSequence("non-pad id after eos")
    head = ids[:eos_at]
    if any(i >= len(vocab.symbols) or i < 0 for i in head):
        raise MalformedSequence("reserved id before eos")
    return "".join(vocab.symbols[i] for i in head)


def stack_sequences(seqs: Sequence[CharSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Batch ``seqs`` into ``(ids[B, T], lengths[B])`` trimmed to the longest length."""
    lengths = np.array([s.length for s in seqs], dtype=np.int64)
    width = int(lengths.max()) if len(seqs) else 0
    ids = np.array([s.ids[:width] for s in seqs], dtype=np.int64).reshape(len(seqs), width)
    return ids, lengths


def write_dataset(
    path: str | Path,
    rows: Iterable[tuple[int, str]],
    schema: AttributeSchema,
    view: str | None = None,
) -> None:
    """Write ``(user_id, text)`` rows under the versioned header (LF newlines)."""
    lines = [DATASET_HEADER, _fingerprint_line(schema, view)]
    lines.extend(f"{uid}\t{text}" for uid, text in rows)
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_dataset(
    path: str | Path,
    schema: AttributeSchema,
    view: str | None = None,
) -> list[tuple[int, str]]:
    raw = Path(path).read_bytes().decode("ascii")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or lines[0] != DATASET_HEADER:
        raise DatasetFormatError(f"{path}: missing {DATASET_HEADER!r} header")
    if lines[1] != _fingerprint_line(schema, view):
        raise DatasetFormatError(f"{path}: schema fingerprint line does not match")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        uid, sep, text = line.partition("\t")
        if not sep or not _INT_RE.match(uid):
            raise DatasetFormatError(f"{path}:{lineno}: expected '<user_id>\\t<entry>'")
        rows.append((int(uid), text))
    return rows


def write_entries(path: str | Path, entries: Iterable[RecordEntry], schema: AttributeSchema,
                  max_len: int = MAX_LEN) -> None:
    write_dataset(path, ((e.user_id, serialize_entry(e, schema, max_len)) for e in entries), schema)


def read_entries(path: str | Path, schema: AttributeSchema) -> list[RecordEntry]:
    return [deserialize_entry(text, schema, uid) for uid, text in read_dataset(path, schema)]


def _fingerprint_line(schema: AttributeSchema, view: str | None) -> str:
    line = f"schema {schema.fingerprint()}"
    return line if view is None else f"{line} view {view}"
