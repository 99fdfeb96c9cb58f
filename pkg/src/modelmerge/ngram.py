"""Word bigram models: one state per word type."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import Corpus
from .model import FIRST_PROPER, START, CountModel, ProbabilityView, StoredPaths


@dataclass(frozen=True)
class BigramConfig:
    smoothing_alpha: float = 0.0
    apply_to: str = "evaluation_only"

    def __post_init__(self):
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be >= 0")
        if self.apply_to not in ("evaluation_only", "model"):
            raise ValueError(f"bad apply_to {self.apply_to!r}")


def build_bigram(corpus: Corpus, vocab_size: int | None = None) -> tuple[CountModel, StoredPaths]:
    """Bigram model whose state for token t has id ``FIRST_PROPER + t``."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    model = CountModel(vocab_size=vocab_size or 0)
    paths = []
    for seq, mult in corpus:
        path = [FIRST_PROPER + t for t in seq]
        for q in path:
            model.ensure_state(q)
        model.add_path(path, seq, mult)
        paths.append(path)
    return model, StoredPaths(list(corpus.utterances), paths)


def smooth_view(model: CountModel, config: BigramConfig | float) -> ProbabilityView:
    """Additive smoothing of transitions and emissions.

    Transition rows of proper states spread ``alpha`` over all proper states
    plus the end state; the start row over proper states only; emission rows
    over the model vocabulary.
    """
    alpha = config.smoothing_alpha if isinstance(config, BigramConfig) else float(config)
    if alpha <= 0:
        raise ValueError("smooth_view needs alpha > 0; use probabilities() for ML estimates")
    states = model.states
    n_targets = len(states) + 1
    n_vocab = model.vocab_size
    log_trans: dict[int, dict[int, float]] = {}
    log_emit: dict[int, dict[int, float]] = {}
    trans_floor: dict[int, float] = {}
    emit_floor: dict[int, float] = {}
    for q in [START, *states]:
        row = model.trans[q]
        domain = len(states) if q == START else n_targets
        denom = sum(row.values()) + alpha * domain
        log_trans[q] = {s: math.log((c + alpha) / denom) for s, c in row.items() if c > 0}
        trans_floor[q] = alpha / denom
    for q in states:
        row = model.emit[q]
        denom = sum(row.values()) + alpha * n_vocab
        log_emit[q] = {t: math.log((c + alpha) / denom) for t, c in row.items() if c > 0}
        emit_floor[q] = alpha / denom
    return ProbabilityView(log_trans, log_emit, n_vocab, trans_floor, emit_floor)


