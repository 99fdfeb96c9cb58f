import math
import random

import pytest

from modelmerge.corpus import Vocabulary, read_corpus
from modelmerge.merging import build_trivial_model
from modelmerge.model import (END, START, CountModel, ModelError, probabilities, read_model,
                              validate, write_model)

from conftest import abac_state, random_corpus


def loop_model():
    """Two-state model of (a(b|c))+ trained on {ab, ac, abac}."""
    m = CountModel(vocab_size=3)
    a, bc = m.new_state(), m.new_state()
    m.add_transition(START, a, 3)
    m.add_transition(a, bc, 4)
    m.add_transition(bc, END, 3)
    m.add_transition(bc, a, 1)
    m.add_emission(a, 0, 4)
    m.add_emission(bc, 1, 2)
    m.add_emission(bc, 2, 2)
    return m, a, bc


def random_model(rng, n_merges=5):
    corpus = random_corpus(rng, rng.randint(2, 8), 4, 3)
    model, paths = build_trivial_model(corpus)
    for _ in range(n_merges):
        states = model.states
        if len(states) < 2:
            break
        a, b = rng.sample(states, 2)
        model.merge(a, b)
    return model


def test_trivial_model_is_valid(abac):
    model, _ = build_trivial_model(abac[1])
    assert validate(model) == []


def test_row_sum_defect_reported():
    m, a, bc = loop_model()
    m.trans[bc][END] += 1
    m.incoming[END][bc] += 1
    problems = validate(m)
    assert len(problems) == 1 and f"state {bc}" in problems[0]


def test_transition_into_start_reported():
    m, a, bc = loop_model()
    m.trans[bc][START] = 1
    m.incoming[START][bc] = 1
    m.trans[bc][END] -= 1
    m.incoming[END][bc] -= 1
    problems = validate(m)
    assert len(problems) == 1 and "incoming" in problems[0]


def test_first_merge_probabilities(abac):
    model, _ = build_trivial_model(abac[1])
    m = model.merge(abac_state(1), abac_state(3))
    view = probabilities(model)
    assert math.exp(view.log_trans[m][abac_state(2)]) == pytest.approx(0.5, abs=1e-15)
    assert math.exp(view.log_trans[m][abac_state(4)]) == pytest.approx(0.5, abs=1e-15)
    assert math.exp(view.log_trans[START][m]) == pytest.approx(2 / 3, abs=1e-15)
    assert math.exp(view.log_trans[START][abac_state(5)]) == pytest.approx(1 / 3, abs=1e-15)


def test_loop_model_probabilities():
    m, a, bc = loop_model()
    view = probabilities(m)
    assert view.emit_prob(bc, 1) == pytest.approx(0.5)
    assert view.emit_prob(bc, 2) == pytest.approx(0.5)
    assert view.trans_prob(bc, END) == pytest.approx(0.75)
    assert view.trans_prob(bc, a) == pytest.approx(0.25)
    assert view.trans_prob(a, bc) == 1.0
    assert view.emit_prob(a, 0) == 1.0


def test_rows_sum_to_one_on_random_models():
    rng = random.Random(11)
    for _ in range(30):
        view = probabilities(random_model(rng))
        for q, row in view.log_trans.items():
            assert abs(sum(math.exp(v) for v in row.values()) - 1) < 1e-12
        for q, row in view.log_emit.items():
            assert abs(sum(math.exp(v) for v in row.values()) - 1) < 1e-12


def test_zero_visits_with_counts_is_inconsistent():
    m, a, bc = loop_model()
    m.trans[a] = {}
    with pytest.raises(ModelError):
        probabilities(m)


def test_loop_model_file_layout():
    m, _, _ = loop_model()
    vocab = read_corpus("a b c\n")[0]
    text = write_model(m, vocab)
    lines = text.splitlines()
    assert lines[0] == "MM1 states=2 vocab=3"
    assert sum(l.startswith("T ") for l in lines) == 4
    assert sum(l.startswith("M ") for l in lines) == 3
    assert "T S 2 3" in lines and "T 3 E 3" in lines
    again, v2 = read_model(text)
    assert again == m and v2.words == vocab.words


def test_round_trip_random_models():
    rng = random.Random(5)
    vocab = read_corpus("a b c\n")[0]
    for _ in range(40):
        m = random_model(rng, rng.randint(0, 8))
        m.vocab_size = 3
        again, _ = read_model(write_model(m, vocab))
        assert again == m
        assert again.visits == {q: v for q, v in m.visits.items()}
        assert write_model(again, vocab) == write_model(m, vocab)


def test_start_only_model_rejected():
    vocab = Vocabulary()
    vocab.intern("a")
    assert validate(CountModel(vocab_size=1))
    with pytest.raises(ModelError):
        read_model("MM1 states=0 vocab=1\nV 0 a\n")


@pytest.mark.parametrize("text,line", [
    ("MM1 states=1 vocab=1\nV 0 a\nX 1 2\n", "line 3"),
    ("MM1 states=1 vocab=1\nV 0 a\nT S 2 x\n", "line 3"),
    ("MM1 states=1 vocab=1\nV 0 a\nT S 2 1\nT 2 E 1\nM 2 5 1\n", "line 5"),
    ("nonsense\n", "line 1"),
])
def test_malformed_lines(text, line):
    with pytest.raises(ModelError, match=line):
        read_model(text)


def test_balance_violation_lists_problems():
    text = "MM1 states=1 vocab=1\nV 0 a\nT S 2 1\nT 2 E 2\nM 2 0 1\n"
    with pytest.raises(ModelError) as exc:
        read_model(text)
    assert exc.value.violations


def test_merge_conserves_counts():
    rng = random.Random(2)
    for _ in range(30):
        corpus = random_corpus(rng, 6, 5, 3)
        model, _ = build_trivial_model(corpus)
        before = (model.total_emissions(), sum(sum(r.values()) for r in model.trans.values()),
                  sum(v for q, v in model.visits.items() if q != START))
        for _ in range(4):
            if model.n_states < 2:
                break
            model.merge(*rng.sample(model.states, 2))
            after = (model.total_emissions(), sum(sum(r.values()) for r in model.trans.values()),
                     sum(v for q, v in model.visits.items() if q != START))
            assert after == before == (corpus.total_tokens, corpus.total_tokens + corpus.total_utterances,
                                       corpus.total_tokens)
            assert validate(model) == []
