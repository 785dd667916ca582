"""Per-receiver privacy operations: disclose, generalize or delete each attribute.

The output of :func:`apply_view` is the ground truth a view decoder is trained
to reproduce, so everything here is deterministic and keeps the 20-field frame
(a deleted value becomes ``*`` in its slot).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import MissingGeneralization, PolicyConfigError, SerializationOverflow, ValueParseError
from .records import (
    DEFAULT_VOCAB,
    MAX_LEN,
    SEPARATOR,
    AttributeSchema,
    RecordEntry,
    Vocabulary,
    default_schema,
    split_fields,
)

DELETED = "*"


class PrivacyOperation(str, Enum):
    DISCLOSE = "F"
    GENERALIZE = "G"
    DELETE = "D"


class ReceiverView(str, Enum):
    FAMILY_MEMBER = "family_member"
    DOCTOR = "doctor"
    CAREGIVER = "caregiver"
    RESEARCHER = "researcher"

    @classmethod
    def parse(cls, text: str) -> "ReceiverView":
        norm = text.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"family": "family_member", "familymember": "family_member",
                   "care_giver": "caregiver"}
        norm = aliases.get(norm, norm)
        try:
            return cls(norm)
        except ValueError:
            raise ValueError(f"unknown receiver view {text!r}") from None


VIEWS = tuple(ReceiverView)

# Rows in schema order; columns family member, doctor, caregiver, researcher.
_TABLE = """
name            F F F D
age             F F G G
gender          F F F F
height          F F G G
weight          F F G G
address         F G F G
phone           F F F D
occupation      F G G G
marital         F G G G
timestamp       F F F F
blood_pressure  G F F G
glucose         G F F G
disease         F F F G
pedometer       F F F F
presence        F D F F
temperature     F F F G
light           F D D F
window          F D F D
door            F D F D
energy          G D D G
"""


@dataclass(frozen=True)
class AccessMatrix:
    ops: Mapping[tuple[ReceiverView, str], PrivacyOperation]

    def op(self, view: ReceiverView, key: str) -> PrivacyOperation:
        return self.ops[(view, key)]

    def column(self, view: ReceiverView, schema: AttributeSchema) -> list[PrivacyOperation]:
        return [self.ops[(view, key)] for key in schema.keys]

    def check_total(self, schema: AttributeSchema) -> None:
        missing = [(v.value, k) for v in VIEWS for k in schema.keys if (v, k) not in self.ops]
        if missing:
            raise PolicyConfigError(f"access matrix lacks entries for {missing}")

    def to_dict(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {}
        for (view, key), op in self.ops.items():
            out.setdefault(view.value, {})[key] = op.value
        return out

    @classmethod
    def uniform(cls, op: PrivacyOperation, schema: AttributeSchema | None = None) -> "AccessMatrix":
        schema = schema or default_schema()
        return cls({(v, k): op for v in VIEWS for k in schema.keys})


def default_access_matrix() -> AccessMatrix:
    ops = {}
    for row in _TABLE.strip().splitlines():
        key, *cells = row.split()
        for view, cell in zip(VIEWS, cells):
            ops[(view, key)] = PrivacyOperation(cell)
    return AccessMatrix(ops)


# --- generalization rules -------------------------------------------------

_BAND_RE = re.compile(r"^(\d+)-(\d+)$")


@dataclass(frozen=True)
class BandRule:
    """Integer -> ``lo-hi`` band of fixed width."""

    width: int

    def __call__(self, value: Any) -> str:
        if isinstance(value, str):
            m = _BAND_RE.match(value)
            if m and self._is_band(int(m.group(1)), int(m.group(2))):
                return value
            raise ValueParseError(f"{value!r} is not a width-{self.width} band")
        lo = (int(value) // self.width) * self.width
        return f"{lo}-{lo + self.width - 1}"

    def _is_band(self, lo: int, hi: int) -> bool:
        return lo % self.width == 0 and hi == lo + self.width - 1

    def is_token(self, text: str) -> bool:
        m = _BAND_RE.match(text)
        return bool(m) and self._is_band(int(m.group(1)), int(m.group(2)))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "band", "width": self.width}


@dataclass(frozen=True)
class LevelRule:
    """Integer -> low / normal / high by two thresholds (``low`` if below the first)."""

    thresholds: tuple[int, int]
    labels: tuple[str, str, str] = ("low", "normal", "high")

    def __call__(self, value: Any) -> str:
        if isinstance(value, str):
            if value in self.labels:
                return value
            raise ValueParseError(f"{value!r} is not one of {self.labels}")
        low, high = self.thresholds
        if value < low:
            return self.labels[0]
        return self.labels[1] if value < high else self.labels[2]

    def is_token(self, text: str) -> bool:
        return text in self.labels

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "levels", "thresholds": list(self.thresholds), "labels": list(self.labels)}


@dataclass(frozen=True)
class PressureRule:
    """Systolic/diastolic pair -> low / normal / high; high takes precedence."""

    low: tuple[int, int] = (90, 60)
    high: tuple[int, int] = (140, 90)
    labels: tuple[str, str, str] = ("low", "normal", "high")

    def __call__(self, value: Any) -> str:
        if isinstance(value, str):
            if value in self.labels:
                return value
            raise ValueParseError(f"{value!r} is not one of {self.labels}")
        systolic, diastolic = value
        if systolic >= self.high[0] or diastolic >= self.high[1]:
            return self.labels[2]
        if systolic < self.low[0] or diastolic < self.low[1]:
            return self.labels[0]
        return self.labels[1]

    def is_token(self, text: str) -> bool:
        return text in self.labels

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "pressure", "low": list(self.low), "high": list(self.high),
                "labels": list(self.labels)}


@dataclass(frozen=True)
class LookupRule:
    """Categorical value -> parent category."""

    table: tuple[tuple[str, str], ...]

    def __call__(self, value: Any) -> str:
        mapping = dict(self.table)
        if value in mapping:
            return mapping[value]
        if value in mapping.values():
            return value
        raise ValueParseError(f"{value!r} has no parent category")

    def is_token(self, text: str) -> bool:
        return text in dict(self.table).values()

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "lookup", "table": dict(self.table)}


@dataclass(frozen=True)
class CityRule:
    """``<number>-<street>-<city>`` -> ``<city>``."""

    def __call__(self, value: Any) -> str:
        text = str(value)
        if re.fullmatch(r"[a-z]+", text):
            return text
        parts = text.split("-")
        if len(parts) < 2 or not parts[-1].isalpha():
            raise ValueParseError(f"{value!r} is not an address")
        return parts[-1]

    def is_token(self, text: str) -> bool:
        return bool(re.fullmatch(r"[a-z]+", text))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "city"}


@dataclass(frozen=True)
class HourRule:
    """Epoch seconds -> the same timestamp truncated to the hour."""

    def __call__(self, value: Any) -> str:
        if isinstance(value, str):
            try:
                dt = datetime.strptime(value, "%Y-%m-%d/%H-%M")
            except ValueError:
                raise ValueParseError(f"{value!r} is not a timestamp") from None
            if dt.minute:
                raise ValueParseError(f"{value!r} is not hour-aligned")
            return value
        dt = datetime.fromtimestamp(int(value) - int(value) % 3600, tz=timezone.utc)
        return dt.strftime("%Y-%m-%d/%H-%M")

    def is_token(self, text: str) -> bool:
        try:
            self(text)
        except ValueParseError:
            return False
        return True

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "hour"}


def rule_from_dict(spec: Mapping[str, Any]):
    kind = spec.get("kind")
    try:
        if kind == "band":
            return BandRule(int(spec["width"]))
        if kind == "levels":
            return LevelRule(tuple(spec["thresholds"]), tuple(spec.get("labels", ("low", "normal", "high"))))
        if kind == "pressure":
            return PressureRule(tuple(spec.get("low", (90, 60))), tuple(spec.get("high", (140, 90))),
                                tuple(spec.get("labels", ("low", "normal", "high"))))
        if kind == "lookup":
            return LookupRule(tuple(sorted(dict(spec["table"]).items())))
        if kind == "city":
            return CityRule()
        if kind == "hour":
            return HourRule()
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyConfigError(f"bad generalization rule {dict(spec)!r}: {exc}") from None
    raise PolicyConfigError(f"unknown generalization rule kind {kind!r}")


OCCUPATION_SECTORS = {
    "nurse": "care", "carer": "care", "doctor": "care",
    "engineer": "technical", "mechanic": "technical", "electrician": "technical",
    "clerk": "service", "cook": "service", "driver": "service", "teacher": "service",
    "farmer": "other", "artist": "other",
    "pensioner": "retired",
}
MARITAL_PARENTS = {
    "single": "never-married",
    "married": "ever-married", "widowed": "ever-married", "divorced": "ever-married",
}
DISEASE_PARENTS = {
    "alzheimer": "dementia", "lewy-body": "dementia",
    "parkinson": "neurological", "stroke": "neurological",
    "angina": "heart-disease", "arrhythmia": "heart-disease", "heart-failure": "heart-disease",
    "diabetes": "metabolic",
    "copd": "respiratory", "asthma": "respiratory",
    "arthritis": "musculoskeletal", "osteoporosis": "musculoskeletal",
}


@dataclass(frozen=True)
class GeneralizationMap:
    rules: Mapping[str, Any]

    def __contains__(self, key: str) -> bool:
        return key in self.rules

    def __call__(self, key: str, value: Any) -> str:
        try:
            rule = self.rules[key]
        except KeyError:
            raise MissingGeneralization(f"no generalization defined for {key!r}") from None
        return rule(value)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {key: rule.to_dict() for key, rule in self.rules.items()}


def default_generalization_map() -> GeneralizationMap:
    def lookup(table: Mapping[str, str]) -> LookupRule:
        return LookupRule(tuple(sorted(table.items())))

    return GeneralizationMap({
        "age": BandRule(10),
        "height": BandRule(10),
        "weight": BandRule(10),
        "address": CityRule(),
        "occupation": lookup(OCCUPATION_SECTORS),
        "marital": lookup(MARITAL_PARENTS),
        "timestamp": HourRule(),
        "blood_pressure": PressureRule(),
        "glucose": LevelRule((70, 140)),
        "disease": lookup(DISEASE_PARENTS),
        "temperature": BandRule(2),
        "energy": BandRule(500),
    })


# --- applying operations --------------------------------------------------

def apply_operation(value: Any, op: PrivacyOperation, gmap: GeneralizationMap, attribute) -> str:
    """Render one attribute value as seen by a receiver.

    ``value`` may be a typed domain value or, for fields of an already
    transformed view, the token that operation produced earlier.
    """
    if op is PrivacyOperation.DELETE:
        return DELETED
    if op is PrivacyOperation.GENERALIZE:
        return gmap(attribute.key, value)
    return attribute.render(value)


def apply_view(
    entry: RecordEntry,
    view: ReceiverView,
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    max_len: int = MAX_LEN,
    vocab: Vocabulary = DEFAULT_VOCAB,
) -> str:
    schema = schema or default_schema()
    ops = matrix.column(view, schema)
    text = SEPARATOR.join(
        apply_operation(value, op, gmap, attr) for value, op, attr in zip(entry.values, ops, schema)
    )
    vocab.check_text(text)
    if len(text) > max_len:
        raise SerializationOverflow(f"view text has {len(text)} chars, limit is {max_len}")
    return text


def parse_view(
    text: str,
    view: ReceiverView,
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
) -> list[Any]:
    """Parse view text into per-field values in the view's extended domain.

    Disclosed fields come back typed, generalized fields as their token and
    deleted fields as ``*``.
    """
    schema = schema or default_schema()
    out = []
    for field, op, attr in zip(split_fields(text, schema), matrix.column(view, schema), schema):
        if op is PrivacyOperation.DELETE:
            if field != DELETED:
                raise ValueParseError(f"{attr.name}: expected {DELETED!r}, found {field!r}")
            out.append(DELETED)
        elif op is PrivacyOperation.GENERALIZE:
            if attr.key not in gmap or not gmap.rules[attr.key].is_token(field):
                raise ValueParseError(f"{attr.name}: {field!r} is not a generalized token")
            out.append(field)
        else:
            out.append(attr.parse(field))
    return out


def reapply_view(
    text: str,
    view: ReceiverView,
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
) -> str:
    """Apply the view's operations to text that is already in that view."""
    schema = schema or default_schema()
    values = parse_view(text, view, matrix, gmap, schema)
    ops = matrix.column(view, schema)
    return SEPARATOR.join(apply_operation(v, op, gmap, a) for v, op, a in zip(values, ops, schema))


# --- config files ---------------------------------------------------------

def load_policy(path: str | Path | None) -> tuple[AccessMatrix, GeneralizationMap]:
    """Defaults overlaid with a JSON file ``{"access": {...}, "generalization": {...}}``.

    ``access`` maps view -> attribute key -> ``F``/``G``/``D``; ``generalization``
    maps attribute key -> rule spec (see :meth:`GeneralizationMap.to_dict`).
    """
    matrix, gmap = default_access_matrix(), default_generalization_map()
    if path is None:
        return matrix, gmap
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PolicyConfigError(f"{path}: {exc}") from None
    schema = default_schema()
    ops = dict(matrix.ops)
    for view_name, row in cfg.get("access", {}).items():
        view = ReceiverView.parse(view_name)
        for key, cell in row.items():
            if key not in schema.keys:
                raise PolicyConfigError(f"unknown attribute {key!r}")
            try:
                ops[(view, key)] = PrivacyOperation(cell)
            except ValueError:
                raise PolicyConfigError(f"bad operation {cell!r} for {view_name}/{key}") from None
    rules = dict(gmap.rules)
    for key, spec in cfg.get("generalization", {}).items():
        if key not in schema.keys:
            raise PolicyConfigError(f"unknown attribute {key!r}")
        rules[key] = rule_from_dict(spec)
    return AccessMatrix(ops), GeneralizationMap(rules)


def dump_policy(matrix: AccessMatrix, gmap: GeneralizationMap) -> str:
    return json.dumps({"access": matrix.to_dict(), "generalization": gmap.to_dict()},
                      indent=2, sort_keys=True)
