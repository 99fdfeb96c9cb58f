"""
Merging a three-sentence corpus
===============================

Start from the model that memorises {ab, ac, abac}, then merge states until
two remain and watch the corpus probability fall.
"""

import math

from modelmerge import read_corpus
from modelmerge.constraints import ConstraintSchedule
from modelmerge.merging import MergeTrace, StopCriterion, build_trivial_model, premerge_affixes, run_merging
from modelmerge.ngram import build_bigram

vocab, corpus = read_corpus("a b\na c\na b a c\n")

# one state chain per sentence; each sentence gets probability 1/3
model, paths = build_trivial_model(corpus)
print("trivial:", model.n_states, "states, P(S) =", math.exp(model.loglik()))

# shared beginnings and endings collapse without any loss
trace = MergeTrace()
premerge_affixes(model, paths, trace)
print("after premerging:", model.n_states, "states, P(S) =", math.exp(model.loglik()))

# greedy merging, always picking the pair that loses least
run_merging(model, paths, ConstraintSchedule.parse("none"), StopCriterion("target_states", 2), trace=trace)
print("two states: P(S) =", math.exp(model.loglik()), "=", 27 / 4096)
for rec in trace.records:
    print(f"  merge {rec.merge}: {rec.q1}+{rec.q2} -> {rec.merged}  delta={rec.delta:+.4f}  states={rec.states}")

# the a-state always moves to the b/c-state, which ends or loops back
for q in model.states:
    words = sorted(vocab.lookup(t) for t in model.emitted_tokens(q))
    print(q, words, dict(model.trans[q]))

# the word bigram model sits between the two
bigram, _ = build_bigram(corpus)
print("bigram: P(S) =", math.exp(bigram.loglik()), "=", 1 / 64)
