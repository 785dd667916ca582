from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import levenshtein_bruteforce
from privview.errors import MissingDecoder
from privview.evaluation import (
    STRUCTURAL,
    attribute_breakdown,
    char_error,
    evaluate,
    evaluate_view,
    mismatch_experiment,
    padded_mismatch,
    random_text_baseline,
)
from privview.policy import ReceiverView, apply_view, default_access_matrix, default_generalization_map
from privview.records import default_schema
from privview.simulator import SimulationConfig, simulate_dataset
from privview.training import TrainConfig, init_decoder_set

SCHEMA = default_schema()
MATRIX = default_access_matrix()
GMAP = default_generalization_map()
R, C, D = ReceiverView.RESEARCHER, ReceiverView.CAREGIVER, ReceiverView.DOCTOR

short = st.text(alphabet="abc|", max_size=8)


@pytest.fixture(scope="module")
def data():
    return simulate_dataset(SimulationConfig(n_users=10, entries_per_user=2, seed=5), SCHEMA)


@pytest.fixture(scope="module")
def untrained():
    return init_decoder_set(TrainConfig(hidden_dim=16, seed=0, views=(R, C)))


def test_char_error_examples():
    assert char_error("kitten", "sitting") == 3
    assert char_error("flaw", "lawn") == 2
    assert char_error("abc", "abc") == 0
    assert char_error("", "abcd") == 4
    assert char_error("abcd", "") == 4


@given(short, short)
@settings(max_examples=300)
def test_char_error_matches_bruteforce(a, b):
    assert char_error(a, b) == levenshtein_bruteforce(a, b)


@given(short, short, short)
@settings(max_examples=300)
def test_char_error_is_a_metric(a, b, c):
    assert char_error(a, b) == char_error(b, a)
    assert (char_error(a, b) == 0) == (a == b)
    assert char_error(a, c) <= char_error(a, b) + char_error(b, c)


def test_char_error_long_random_strings():
    rng = random.Random(0)
    for _ in range(5):
        a = "".join(rng.choice("ab|1") for _ in range(rng.randint(0, 40)))
        b = "".join(rng.choice("ab|1") for _ in range(rng.randint(0, 40)))
        assert char_error(a, b) == levenshtein_bruteforce(a, b)


def test_padded_mismatch():
    assert padded_mismatch("abc", "abd") == 1
    assert padded_mismatch("abc", "a") == 2
    assert padded_mismatch("", "") == 0


def _target(data, view=C):
    return apply_view(data[0], view, MATRIX, GMAP, SCHEMA)


def test_breakdown_timestamp_only(data):
    t = _target(data)
    fields = t.split("|")
    i = SCHEMA.index("timestamp")
    fields[i] = fields[i][:-1] + ("0" if fields[i][-1] != "0" else "1")
    counts = attribute_breakdown("|".join(fields), t, SCHEMA)
    assert counts["timestamp"] == 1
    assert sum(counts.values()) == 1


def test_breakdown_structural_and_identical(data):
    t = _target(data)
    counts = attribute_breakdown("|".join(t.split("|")[:19]), t, SCHEMA)
    assert counts[STRUCTURAL] == 1 and sum(counts.values()) == 1
    assert sum(attribute_breakdown(t, t, SCHEMA).values()) == 0


def test_evaluate_view_lengths_and_determinism(data, untrained):
    a = evaluate_view(untrained, R, data, MATRIX, GMAP, SCHEMA)
    b = evaluate_view(untrained, R, data, MATRIX, GMAP, SCHEMA)
    assert len(a.distances) == len(data)
    assert a.distances == b.distances and a.predictions == b.predictions
    assert all(d >= 0 for d in a.distances)


def test_missing_decoder(data, untrained):
    with pytest.raises(MissingDecoder):
        evaluate_view(untrained, D, data, MATRIX, GMAP, SCHEMA)
    with pytest.raises(MissingDecoder):
        evaluate(untrained, data, MATRIX, GMAP, SCHEMA, views=(R, D))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_untrained_decoder_near_random_baseline(seed):
    entries = simulate_dataset(SimulationConfig(n_users=20, entries_per_user=2, seed=1), SCHEMA)
    model = init_decoder_set(TrainConfig(hidden_dim=32, seed=seed, views=(R,)))
    ev = evaluate_view(model, R, entries, MATRIX, GMAP, SCHEMA)
    baseline = random_text_baseline(ev.targets, seed=seed)
    assert abs(ev.mean_distance - baseline) <= 0.2 * baseline


def test_report_invariants(data, untrained):
    report = evaluate(untrained, data, MATRIX, GMAP, SCHEMA)
    assert report.views == (C, R)
    for v in report.views:
        s = report.summary(v)
        assert report.mismatch[(v, v)] == s["mean_char_error"]
        assert 0.0 <= s["exact_match_rate"] <= 1.0
        assert s["entries"] == len(data)
    assert mismatch_experiment(untrained, data, MATRIX, GMAP, SCHEMA) == report.mismatch
    assert report.top_error_attribute() in (*SCHEMA.keys, "none")
    lines = [json.loads(x) for x in report.to_jsonl().splitlines()]
    assert {x["record"] for x in lines} == {"view", "attributes", "mismatch", "top_error_attribute"}
    text = report.to_text()
    assert "mismatch matrix" in text and "top error attribute" in text


def test_top_error_attribute_counts():
    from privview.evaluation import EvalReport

    errs = {k: 0 for k in (*SCHEMA.keys, STRUCTURAL)}
    errs["timestamp"] = 5
    errs["phone"] = 2
    errs[STRUCTURAL] = 9
    report = EvalReport((R,), {}, {R: errs}, {})
    assert report.top_error_attribute() == "timestamp"
