"""
Constraint cascades
===================

Merging under the unigram constraint only joins states that emit the same
words.  Run to exhaustion it lands on the word bigram model whatever order
the merges happen in.  Relaxing the constraint afterwards continues from
there.
"""

import random

from modelmerge.constraints import ConstraintKind, ConstraintSchedule, partition
from modelmerge.corpus import Corpus
from modelmerge.merging import StopCriterion, build_trivial_model, premerge_affixes, run_merging
from modelmerge.ngram import build_bigram

rng = random.Random(0)
sentences = [tuple(rng.randrange(6) for _ in range(rng.randint(2, 7))) for _ in range(150)]
corpus = Corpus.from_sequences(sentences)

model, paths = build_trivial_model(corpus)
premerge_affixes(model, paths)

# how much each constraint shrinks the candidate set
n = model.n_states
print(f"{n} states, {n * (n - 1) // 2} unconstrained pairs")
for kind in ("bigram", "unigram"):
    print(f"  {kind}: {partition(model, ConstraintKind(kind)).candidate_count} pairs")

steps = []
trace = run_merging(model, paths, ConstraintSchedule.parse("bigram,unigram"), StopCriterion("max_merges", 10 ** 6),
                    on_step=lambda search: steps.append(search.candidate_count))
print("stopped:", trace.stop_reason, "with", model.n_states, "states")

bigram, _ = build_bigram(corpus)
print("exhausted model loglik", model.loglik())
print("bigram model loglik   ", bigram.loglik())

# now lift the constraint and keep going
trace = run_merging(model, paths, ConstraintSchedule.parse("none"), StopCriterion("target_states", 3), trace=trace)
print("unconstrained down to", model.n_states, "states, loglik", model.loglik())
