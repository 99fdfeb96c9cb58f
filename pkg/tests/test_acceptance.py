"""Acceptance suite.

Each test records one ``criterion N: PASS|FAIL`` line; the lines are printed
together in the terminal summary.  ``python tests/test_acceptance.py`` runs
just this file.
"""

import contextlib
import itertools
import math
import random
import sys
import time

import pytest

from modelmerge.constraints import ConstraintKind, ConstraintPartition, ConstraintSchedule, candidate_count, partition
from modelmerge.corpus import read_corpus
from modelmerge.experiment import RunConfig, cmd_merge, cmd_synth, evaluate
from modelmerge.inference import CompiledView, evaluate_corpus, forward, viterbi
from modelmerge.merging import (MergeTrace, StopCriterion, build_trivial_model, corpus_loglik,
                                premerge_affixes, run_merging)
from modelmerge.model import probabilities
from modelmerge.ngram import build_bigram, smooth_view

from conftest import ACCEPTANCE_LINES, ABAC_TEXT, brute_force_paths, distinct_corpus, oracle_loglik, random_corpus
from test_inference import random_small_model

LN = math.log


@contextlib.contextmanager
def criterion(n, title):
    t0 = time.perf_counter()
    status = "FAIL"
    detail = ""
    try:
        yield
        status = "PASS"
    except BaseException as exc:
        detail = f" ({type(exc).__name__}: {str(exc).splitlines()[0][:160] if str(exc) else ''})"
        raise
    finally:
        ACCEPTANCE_LINES.append(f"criterion {n}: {status} - {title} [{time.perf_counter() - t0:.1f}s]{detail}")


def test_1_abac_pipeline():
    with criterion(1, "abac corpus pipeline"):
        t0 = time.perf_counter()
        vocab, corpus = read_corpus(ABAC_TEXT)
        model, paths = build_trivial_model(corpus)
        assert abs(corpus_loglik(model, paths) - LN(1 / 27)) < 1e-10
        premerge_affixes(model, paths)
        assert abs(corpus_loglik(model, paths) - LN(1 / 27)) < 1e-10

        uni = model.copy()
        trace = run_merging(uni, paths, ConstraintSchedule.parse("unigram"), StopCriterion("max_merges", 1000))
        assert trace.stop_reason == "constraint_exhausted"
        assert uni.n_states == 3 and abs(uni.loglik() - LN(1 / 64)) < 1e-10

        model, paths = build_trivial_model(corpus)
        run_merging(model, paths, ConstraintSchedule.parse("none"), StopCriterion("target_states", 2))
        assert model.n_states == 2 and abs(corpus_loglik(model, paths) - LN(27 / 4096)) < 1e-10
        assert time.perf_counter() - t0 < 1.0


def test_2_trivial_model_law():
    with criterion(2, "trivial model assigns 1/u^u"):
        rng = random.Random(2)
        for u in range(2, 9):
            for _ in range(5):
                corpus = distinct_corpus(rng, u, alphabet=3, max_len=5)
                model, paths = build_trivial_model(corpus)
                assert abs(corpus_loglik(model, paths) + u * LN(u)) < 1e-10


def test_3_monotonicity():
    with criterion(3, "per-merge delta <= 1e-9 and train LP non-decreasing"):
        rng = random.Random(3)
        kinds = ["none", "unigram", "bigram"]
        failures = []
        for run in range(100):
            corpus = random_corpus(rng, rng.randint(3, 50), rng.randint(1, 8), rng.randint(2, 6), max_tokens=200)
            stages = [f"{k}:{rng.randint(1, 40)}" for k in rng.sample(kinds, rng.randint(0, 2))]
            schedule = ",".join(stages + [rng.choice(kinds)])
            model, paths = build_trivial_model(corpus)
            trace = MergeTrace()
            if rng.random() < 0.5:
                premerge_affixes(model, paths, trace)
            run_merging(model, paths, ConstraintSchedule.parse(schedule), StopCriterion("max_merges", 10 ** 6),
                        trace=trace)
            lps = [trace.initial_train_lp] + [r.train_lp for r in trace.records]
            bad_delta = [r for r in trace.records if r.delta > 1e-9]
            bad_lp = [i for i, (a, b) in enumerate(zip(lps, lps[1:])) if b < a - 1e-9]
            if bad_delta or bad_lp:
                worst = max((r.delta for r in bad_delta), default=0.0)
                failures.append((run, schedule, len(bad_delta), bad_delta[0].states if bad_delta else None, worst))
        assert not failures, (f"{len(failures)}/100 runs with a positive delta; first (run, schedule, count, "
                              f"states at first, max delta): {failures[0]}")


def test_4_delta_oracle():
    with criterion(4, "incremental delta equals copy-merge-recompute"):
        t0 = time.perf_counter()
        rng = random.Random(4)
        checked = 0
        for run in range(12):
            corpus = random_corpus(rng, 8, 5, rng.randint(2, 4), max_tokens=30)
            assert corpus.total_tokens <= 30
            model, paths = build_trivial_model(corpus)
            kind = ["none", "unigram", "bigram"][run % 3]

            def check(search):
                nonlocal checked
                base = corpus_loglik(model, paths)
                for a, b in search.allowed_pairs():
                    trial = model.copy()
                    trial.merge(a, b)
                    relabeled = [[trial.find(q) for q in path] for path in paths.paths]
                    expected = oracle_loglik(paths.sequences, relabeled) - base
                    assert abs(model.delta_merge(a, b) - expected) < 1e-9
                    assert abs(search.cached(a, b) - expected) < 1e-9
                    checked += 1

            run_merging(model, paths, ConstraintSchedule.parse(kind), StopCriterion("max_merges", 10 ** 6),
                        on_step=check)
        assert checked > 1000
        assert time.perf_counter() - t0 < 60


def test_5_bigram_equivalence():
    with criterion(5, "unigram exhaustion equals the bigram model"):
        rng = random.Random(5)
        for _ in range(25):
            train = random_corpus(rng, rng.randint(5, 40), 6, rng.randint(2, 6))
            vocab_size = 1 + max(t for seq, _ in train for t in seq)
            test = random_corpus(rng, 15, 6, vocab_size)
            model, paths = build_trivial_model(train, vocab_size)
            premerge_affixes(model, paths)
            trace = run_merging(model, paths, ConstraintSchedule.parse("unigram"), StopCriterion("max_merges", 10 ** 6))
            assert trace.stop_reason == "constraint_exhausted"
            bigram, _ = build_bigram(train, vocab_size)
            for corpus in (train, test):
                for view_of in (probabilities, lambda m: smooth_view(m, 0.1)):
                    a = evaluate_corpus(view_of(model), corpus, "forward").log_perplexity
                    b = evaluate_corpus(view_of(bigram), corpus, "forward").log_perplexity
                    assert a == b or abs(a - b) < 1e-9


def test_6_candidate_counts():
    with criterion(6, "candidate-count formulas"):
        rng = random.Random(6)
        for _ in range(200):
            n = rng.randint(2, 60)
            labels = [rng.randrange(rng.randint(1, n)) for _ in range(n)]
            classes = [[q for q, lab in enumerate(labels) if lab == c] for c in sorted(set(labels))]
            part = ConstraintPartition(classes)
            enumerated = len(list(part.pairs()))
            assert enumerated == part.candidate_count == sum(len(c) * (len(c) - 1) // 2 for c in classes)
            assert candidate_count(map(len, classes)) == enumerated
        for n in range(2, 80, 2):
            for k in range(1, n + 1):
                if n % k == 0:
                    assert candidate_count([n // k] * k) == n * (n // k - 1) // 2
            assert candidate_count([2] * (n // 2)) == n // 2
        # also on partitions induced by a real model
        corpus = random_corpus(rng, 30, 5, 4)
        model, _ = build_trivial_model(corpus)
        for kind in ("unigram", "bigram", "none"):
            part = partition(model, ConstraintKind(kind))
            assert len(list(part.pairs())) == part.candidate_count


def test_7_forward_viterbi_enumeration():
    with criterion(7, "forward/Viterbi equal exhaustive sum/max"):
        rng = random.Random(7)
        for _ in range(30):
            view = probabilities(random_small_model(rng, rng.randint(1, 5), alphabet=2))
            compiled = CompiledView(view)
            for k in range(1, 7):
                for seq in rng.sample(list(itertools.product(range(2), repeat=k)), min(6, 2 ** k)):
                    found = list(brute_force_paths(view, seq))
                    fwd, vit = forward(compiled, seq).log_prob, viterbi(compiled, seq).log_prob
                    assert vit <= fwd + 1e-12
                    if not found:
                        assert fwd == vit == -math.inf
                        continue
                    assert abs(fwd - LN(sum(p for _, p in found))) < 1e-12
                    assert abs(vit - LN(max(p for _, p in found))) < 1e-12


def test_8_synthetic_experiment(tmp_path):
    with criterion(8, "synthetic held-out experiment against the bigram baseline"):
        t0 = time.perf_counter()
        files = cmd_synth(12, 30, 800, seed=0, output_dir=tmp_path, test_utterances=200)
        common = dict(train_path=str(files["train"]), test_path=str(files["test"]), schedule="unigram,none",
                      stop="held_out_minimum:1000", mode="viterbi", oov_policy="floor", smoothing_alpha=0.1,
                      log_every=10)
        trivial = cmd_merge(RunConfig(**common, start="trivial", output_dir=str(tmp_path / "trivial")))
        bigram_start = cmd_merge(RunConfig(**common, start="bigram", output_dir=str(tmp_path / "bigram")))
        vocab, train = read_corpus(files["train"].read_bytes())
        _, test = read_corpus(files["test"].read_bytes(), vocab)
        baseline, _ = build_bigram(train, len(vocab))
        base_lp = evaluate(baseline, test, "viterbi", "floor", 0.1).log_perplexity
        merged_lp = trivial.reports["test"].log_perplexity
        ACCEPTANCE_LINES.append(f"  criterion 8 detail: bigram states={baseline.n_states} test LP={base_lp:.5f}; merged: states="
              f"{trivial.model.n_states} test LP={merged_lp:.5f}; bigram-start: states="
              f"{bigram_start.model.n_states} test LP={bigram_start.reports['test'].log_perplexity:.5f}")
        assert trivial.model.n_states < baseline.n_states
        assert merged_lp <= base_lp
        assert abs(bigram_start.reports["test"].log_perplexity - merged_lp) <= 0.05
        assert time.perf_counter() - t0 < 600


def test_9_premerge_zero_delta():
    with criterion(9, "premerges leave the likelihood unchanged"):
        rng = random.Random(9)
        corpora = [read_corpus(ABAC_TEXT)[1]] + [random_corpus(rng, rng.randint(5, 80), 7, rng.randint(2, 5))
                                                  for _ in range(40)]
        total = 0
        for corpus in corpora:
            model, paths = build_trivial_model(corpus)
            trace = MergeTrace()
            premerge_affixes(model, paths, trace)
            assert all(abs(r.delta) < 1e-12 for r in trace.records)
            before = oracle_loglik(paths.sequences, [[q for q in path] for path in paths.paths])
            after = oracle_loglik(paths.sequences, [[model.find(q) for q in path] for path in paths.paths])
            assert abs(after - before) < 1e-9
            total += trace.premerges
        assert total > 0


def test_10_determinism(tmp_path):
    with criterion(10, "identical configs give byte-identical outputs"):
        files = cmd_synth(8, 15, 200, seed=10, output_dir=tmp_path, test_utterances=50)
        outputs = []
        for run in ("a", "b"):
            cmd_merge(RunConfig(train_path=str(files["train"]), test_path=str(files["test"]),
                                stop="held_out_minimum:200", smoothing_alpha=0.1, log_every=5,
                                output_dir=str(tmp_path / run)))
            outputs.append({n: (tmp_path / run / n).read_bytes() for n in ("trace.csv", "merged.model")})
        assert outputs[0] == outputs[1]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
