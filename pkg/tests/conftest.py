import itertools
import math
import random
from collections import Counter

import pytest

from modelmerge.corpus import Corpus, read_corpus
from modelmerge.model import END, START

ABAC_TEXT = "a b\na c\na b a c\n"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def abac():
    return read_corpus(ABAC_TEXT)


def abac_state(n):
    """Trivial-model id of the state of the n-th token (1..8) of the {ab, ac, abac} corpus."""
    return n + 1


def random_corpus(rng: random.Random, n_utt: int, max_len: int, alphabet: int,
                  max_tokens: int | None = None) -> Corpus:
    seqs = []
    total = 0
    for _ in range(n_utt):
        k = rng.randint(1, max_len)
        if max_tokens is not None and total + k > max_tokens:
            break
        seqs.append(tuple(rng.randrange(alphabet) for _ in range(k)))
        total += k
    if not seqs:
        seqs.append((0,))
    return Corpus.from_sequences(seqs)


def distinct_corpus(rng: random.Random, u: int, alphabet: int = 3, max_len: int = 4) -> Corpus:
    seen = set()
    while len(seen) < u:
        k = rng.randint(1, max_len)
        seen.add(tuple(rng.randrange(alphabet) for _ in range(k)))
    return Corpus([(s, 1) for s in sorted(seen)])


def oracle_loglik(sequences, labeled_paths) -> float:
    """Viterbi-count log-likelihood recomputed from scratch with Counters."""
    trans, emit = Counter(), Counter()
    for (seq, mult), path in zip(sequences, labeled_paths):
        prev = "S"
        for q, tok in zip(path, seq):
            trans[prev, q] += mult
            emit[q, tok] += mult
            prev = q
        trans[prev, "E"] += mult
    total = 0.0
    for table in (trans, emit):
        rows = Counter()
        for (q, _), c in table.items():
            rows[q] += c
        total += sum(c * math.log(c / rows[q]) for (q, _), c in table.items())
    return total


def brute_force_paths(view, seq):
    """Every state path with nonzero probability and its probability."""
    states = view.states
    for path in itertools.product(states, repeat=len(seq)):
        p = view.trans_prob(START, path[0])
        for i, (q, tok) in enumerate(zip(path, seq)):
            if i:
                p *= view.trans_prob(path[i - 1], q)
            p *= view.emit_prob(q, tok)
            if p == 0:
                break
        p *= view.trans_prob(path[-1], END)
        if p > 0:
            yield list(path), p
