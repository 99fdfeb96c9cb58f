"""Markov model induction by greedy state merging.

Start from the model that reproduces a training corpus exactly (or from a
word bigram model), repeatedly merge the pair of states whose merge costs
the least training likelihood, and track perplexity on held-out data.
"""

from .constraints import ConstraintKind, ConstraintPartition, ConstraintSchedule, advance, partition, signature
from .corpus import AmbiguityLexicon, Corpus, Vocabulary, read_corpus, read_lexicon, write_corpus
from .inference import EvaluationReport, Mode, OOVPolicy, evaluate_corpus, forward, viterbi
from .merging import (MergeCandidate, MergeTrace, StopCriterion, apply_merge, build_trivial_model,
                      corpus_loglik, delta_loglik, premerge_affixes, reviterbi, run_merging)
from .model import END, START, CountModel, ProbabilityView, StoredPaths, probabilities, read_model, validate, write_model
from .ngram import BigramConfig, build_bigram, smooth_view

__version__ = "0.1.0"
