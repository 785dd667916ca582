"""Held-out evaluation of view decoders against the policy oracle.

Character error per entry is the Levenshtein distance between the greedy
decoding and the oracle view text. Position-wise mismatches after padding to a
common length are reported alongside.
"""

from __future__ import annotations

import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein

from . import seqnet
from .errors import MissingDecoder
from .policy import VIEWS, AccessMatrix, GeneralizationMap, ReceiverView, apply_view
from .records import (
    ALPHABET,
    MAX_LEN,
    SEPARATOR,
    AttributeSchema,
    RecordEntry,
    decode_chars,
    default_schema,
    encode_chars,
    serialize_entry,
    stack_sequences,
)

STRUCTURAL = "structural"
CHUNK = 256


def char_error(predicted: str, target: str) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    return Levenshtein.distance(predicted, target)


def padded_mismatch(predicted: str, target: str) -> int:
    """Positions that differ once both strings are padded to the same length."""
    width = max(len(predicted), len(target))
    a, b = predicted.ljust(width, "\0"), target.ljust(width, "\0")
    return sum(x != y for x, y in zip(a, b))


def attribute_breakdown(predicted: str, target: str, schema: AttributeSchema | None = None) -> dict[str, int]:
    """Field-aligned edit distance per attribute key.

    A prediction whose field count differs from the target's is not aligned;
    it adds one to the ``structural`` bucket instead.
    """
    schema = schema or default_schema()
    counts = {key: 0 for key in schema.keys}
    counts[STRUCTURAL] = 0
    pf, tf = predicted.split(SEPARATOR), target.split(SEPARATOR)
    if len(pf) != len(schema) or len(tf) != len(schema):
        counts[STRUCTURAL] = 1
        return counts
    for key, p, t in zip(schema.keys, pf, tf):
        counts[key] = char_error(p, t)
    return counts


def encode_entries(model, entries: Sequence[RecordEntry], schema: AttributeSchema,
                   max_len: int = MAX_LEN) -> list[seqnet.EncodedVector]:
    """Encoder states for ``entries`` in fixed-size chunks of ``(layers, chunk, H)``."""
    seqs = [encode_chars(serialize_entry(e, schema, max_len), max_len=max_len) for e in entries]
    chunks = []
    for start in range(0, len(seqs), CHUNK):
        ids, lengths = stack_sequences(seqs[start:start + CHUNK])
        state, _ = seqnet.encode_batch(model.encoder, ids, lengths)
        chunks.append(state)
    return chunks


def decode_states(model, view: ReceiverView, chunks: Sequence[seqnet.EncodedVector],
                  max_len: int = MAX_LEN) -> list[seqnet.Decoded]:
    if view not in model.decoders:
        raise MissingDecoder(f"no decoder for view {view.value}")
    out: list[seqnet.Decoded] = []
    for state in chunks:
        out.extend(seqnet.greedy_decode_batch(model.decoders[view], state, max_len))
    return out


def predict_texts(model, view: ReceiverView, chunks, max_len: int = MAX_LEN) -> list[str]:
    return [decode_chars(d.seq) for d in decode_states(model, view, chunks, max_len)]


@dataclass
class ViewEvaluation:
    view: ReceiverView
    predictions: list[str]
    targets: list[str]
    distances: list[int]
    mismatches: list[int]
    truncated: int = 0

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances)) if self.distances else 0.0


def _score(view: ReceiverView, predictions: list[str], targets: list[str], truncated: int = 0) -> ViewEvaluation:
    return ViewEvaluation(
        view, predictions, targets,
        [char_error(p, t) for p, t in zip(predictions, targets)],
        [padded_mismatch(p, t) for p, t in zip(predictions, targets)],
        truncated,
    )


def view_targets(entries, view, matrix, gmap, schema, max_len=MAX_LEN) -> list[str]:
    return [apply_view(e, view, matrix, gmap, schema, max_len) for e in entries]


def evaluate_view(
    model,
    view: ReceiverView,
    entries: Sequence[RecordEntry],
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    max_len: int = MAX_LEN,
) -> ViewEvaluation:
    schema = schema or default_schema()
    if view not in model.decoders:
        raise MissingDecoder(f"no decoder for view {view.value}")
    chunks = encode_entries(model, entries, schema, max_len)
    decoded = decode_states(model, view, chunks, max_len)
    preds = [decode_chars(d.seq) for d in decoded]
    return _score(view, preds, view_targets(entries, view, matrix, gmap, schema, max_len),
                  sum(d.truncated for d in decoded))


def mismatch_experiment(
    model,
    entries: Sequence[RecordEntry],
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    max_len: int = MAX_LEN,
    views: Sequence[ReceiverView] | None = None,
) -> dict[tuple[ReceiverView, ReceiverView], float]:
    """Mean char error of decoding with decoder ``d`` against view ``v``'s targets, keyed ``(v, d)``."""
    report = evaluate(model, entries, matrix, gmap, schema, max_len, views)
    return report.mismatch


def random_text_baseline(targets: Sequence[str], seed: int = 0, length: int = MAX_LEN,
                         samples: int = 1) -> float:
    """Mean distance between uniform random strings of ``length`` symbols and ``targets``."""
    rng = np.random.default_rng(seed)
    symbols = np.array(list(ALPHABET))
    total = []
    for t in targets:
        for _ in range(samples):
            total.append(char_error("".join(rng.choice(symbols, size=length)), t))
    return float(np.mean(total))


@dataclass
class EvalReport:
    views: tuple[ReceiverView, ...]
    per_view: dict[ReceiverView, ViewEvaluation]
    attribute_errors: dict[ReceiverView, dict[str, int]]
    mismatch: dict[tuple[ReceiverView, ReceiverView], float]
    mean_target_length: dict[ReceiverView, float] = field(default_factory=dict)

    def summary(self, view: ReceiverView) -> dict[str, Any]:
        ev = self.per_view[view]
        d = ev.distances
        return {
            "view": view.value,
            "entries": len(d),
            "mean_char_error": float(np.mean(d)),
            "median_char_error": float(statistics.median(d)),
            "mean_padded_mismatch": float(np.mean(ev.mismatches)),
            "exact_match_rate": float(np.mean([x == 0 for x in d])),
            "mean_target_length": self.mean_target_length[view],
            "truncated": ev.truncated,
        }

    def top_error_attribute(self, view: ReceiverView | None = None) -> str:
        totals: Counter = Counter()
        for v, counts in self.attribute_errors.items():
            if view is None or v == view:
                totals.update({k: c for k, c in counts.items() if k != STRUCTURAL})
        if not totals or max(totals.values()) == 0:
            return "none"
        best = max(totals.values())
        return next(k for k in totals if totals[k] == best)

    def records(self) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = [{"record": "view", **self.summary(v)} for v in self.views]
        for v in self.views:
            out.append({"record": "attributes", "view": v.value, "errors": self.attribute_errors[v]})
        for (target, dec), value in sorted(self.mismatch.items(), key=lambda kv: (
                VIEWS.index(kv[0][0]), VIEWS.index(kv[0][1]))):
            out.append({"record": "mismatch", "target_view": target.value, "decoder": dec.value,
                        "mean_char_error": value})
        top = self.top_error_attribute()
        out.append({"record": "top_error_attribute", "attribute": top, "is_timestamp": top == "timestamp"})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def to_text(self) -> str:
        lines = ["view            entries  mean_err  median  padded  exact  tgt_len  truncated"]
        for v in self.views:
            s = self.summary(v)
            lines.append(
                f"{v.value:<15} {s['entries']:>7}  {s['mean_char_error']:>8.3f}  {s['median_char_error']:>6.1f}"
                f"  {s['mean_padded_mismatch']:>6.2f}  {s['exact_match_rate']:>5.3f}  {s['mean_target_length']:>7.1f}"
                f"  {s['truncated']:>9}")
        lines.append("")
        lines.append("mismatch matrix (rows: target view, columns: decoder used; mean char error)")
        lines.append(" " * 15 + "".join(f"{d.value:>15}" for d in self.views))
        for t in self.views:
            lines.append(f"{t.value:<15}" + "".join(f"{self.mismatch[(t, d)]:>15.3f}" for d in self.views))
        lines.append("")
        lines.append("per-attribute errors (field-aligned edit distance, summed over entries)")
        keys = list(next(iter(self.attribute_errors.values())).keys()) if self.attribute_errors else []
        lines.append(f"{'attribute':<15}" + "".join(f"{v.value:>15}" for v in self.views))
        for k in keys:
            lines.append(f"{k:<15}" + "".join(f"{self.attribute_errors[v][k]:>15}" for v in self.views))
        top = self.top_error_attribute()
        lines.append("")
        lines.append(f"top error attribute: {top} (timestamp: {'yes' if top == 'timestamp' else 'no'})")
        return "\n".join(lines) + "\n"


def evaluate(
    model,
    entries: Sequence[RecordEntry],
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    max_len: int = MAX_LEN,
    views: Sequence[ReceiverView] | None = None,
) -> EvalReport:
    """Full report: per-view scores, attribute breakdown and the mismatch matrix.

    Inputs are encoded once; each decoder's outputs are scored against every
    view's targets, so the mismatch diagonal equals the matched scores.
    """
    schema = schema or default_schema()
    views = tuple(views) if views else model.views
    for v in views:
        if v not in model.decoders:
            raise MissingDecoder(f"no decoder for view {v.value}")
    chunks = encode_entries(model, entries, schema, max_len)
    decoded = {d: decode_states(model, d, chunks, max_len) for d in views}
    preds = {d: [decode_chars(x.seq) for x in decoded[d]] for d in views}
    targets = {v: view_targets(entries, v, matrix, gmap, schema, max_len) for v in views}
    per_view: dict[ReceiverView, ViewEvaluation] = {}
    mismatch: dict[tuple[ReceiverView, ReceiverView], float] = {}
    for v in views:
        for d in views:
            if d == v:
                ev = _score(v, preds[d], targets[v], sum(x.truncated for x in decoded[d]))
                per_view[v] = ev
                mismatch[(v, d)] = ev.mean_distance
            else:
                mismatch[(v, d)] = float(np.mean([char_error(p, t) for p, t in zip(preds[d], targets[v])]))
    attribute_errors = {}
    for v in views:
        totals: Counter = Counter({k: 0 for k in (*schema.keys, STRUCTURAL)})
        for p, t in zip(preds[v], targets[v]):
            totals.update(attribute_breakdown(p, t, schema))
        attribute_errors[v] = {k: int(totals[k]) for k in (*schema.keys, STRUCTURAL)}
    mean_len = {v: float(np.mean([len(t) for t in targets[v]])) for v in views}
    return EvalReport(views, per_view, attribute_errors, mismatch, mean_len)
