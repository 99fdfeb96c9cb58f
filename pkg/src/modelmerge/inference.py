"""Scoring output sequences: forward (all paths), Viterbi (best path) and
perplexity reports.

Both algorithms run over a :class:`CompiledView`, a dense indexing of the
live states with sparse transition storage. A smoothed view adds a
per-row floor probability for every unlisted target; the algorithms handle
that floor as a rank-one term so the cost stays proportional to the number
of observed transitions plus the number of states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus
from .model import END, START, CountModel, ProbabilityView, probabilities

LN10 = math.log(10.0)
OOV_FLOOR = 1e-6


class OOVPolicy(str, Enum):
    STRICT = "strict"
    FLOOR = "floor"


class Mode(str, Enum):
    FORWARD = "forward"
    VITERBI = "viterbi"


@dataclass
class SequenceScore:
    log_prob: float
    length_k: int


@dataclass
class ViterbiResult:
    log_prob: float
    path: list[int]


@dataclass
class EvaluationReport:
    total_log10_prob: float
    token_count: int
    oov_tokens: int = 0
    mode: str = Mode.VITERBI.value
    oov_policy: str = OOVPolicy.STRICT.value
    zero_prob_utterances: int = 0

    @property
    def log_perplexity(self) -> float:
        return -self.total_log10_prob / self.token_count

    @property
    def perplexity(self) -> float:
        lp = self.log_perplexity
        return math.inf if lp == math.inf else 10.0 ** lp

    @property
    def infinite(self) -> bool:
        return math.isinf(self.total_log10_prob)


class CompiledView:
    """Array form of a :class:`ProbabilityView` used by the DP routines."""

    def __init__(self, view: ProbabilityView):
        self.view = view
        self.state_ids = np.array(view.states, dtype=np.int64)
        self.index = {int(q): i for i, q in enumerate(self.state_ids)}
        k = len(self.state_ids)
        self.k = k

        start = np.zeros(k)
        for q, lp in view.log_trans.get(START, {}).items():
            if q in self.index:
                start[self.index[q]] = math.exp(lp)
        start_floor = view.trans_floor.get(START, 0.0)
        if start_floor:
            start = np.where(start > 0, start, start_floor)
        self.start = start

        rows, cols, vals = [], [], []
        end = np.zeros(k)
        floor = np.zeros(k)
        for i, q in enumerate(self.state_ids):
            q = int(q)
            floor[i] = view.trans_floor.get(q, 0.0)
            for q2, lp in view.log_trans.get(q, {}).items():
                if q2 == END:
                    end[i] = math.exp(lp)
                elif q2 in self.index:
                    rows.append(i)
                    cols.append(self.index[q2])
                    vals.append(math.exp(lp))
        self.end = np.where(end > 0, end, floor)
        self.floor = floor
        # stored probabilities already include the floor for listed cells
        self.trans = sparse.csr_matrix(
            (np.array(vals, dtype=float), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
            shape=(k, k))
        self.trans.sum_duplicates()
        # the sparse part holds only the excess over the floor
        excess = self.trans.copy()
        excess.data = excess.data - np.repeat(floor, np.diff(excess.indptr))
        self.excess = excess
        coo = self.trans.tocoo()
        order = np.lexsort((coo.row, coo.col))
        self._v_rows = coo.row[order]
        self._v_cols = coo.col[order]
        with np.errstate(divide="ignore"):
            self._v_logp = np.log(coo.data[order])
        self._v_starts = np.searchsorted(self._v_cols, np.arange(k))
        self._v_has = np.zeros(k, dtype=bool)
        self._v_has[np.unique(self._v_cols)] = True
        with np.errstate(divide="ignore"):
            self.log_start = np.log(self.start)
            self.log_end = np.log(self.end)
            self.log_floor = np.log(floor)

        self.vocab_size = view.vocab_size
        emit_floor = np.array([view.emit_floor.get(int(q), 0.0) for q in self.state_ids]) if k else np.zeros(0)
        self.emit_floor = emit_floor
        self._emit_cols: dict[int, np.ndarray] = {}
        by_token: dict[int, list[tuple[int, float]]] = {}
        for i, q in enumerate(self.state_ids):
            for t, lp in view.log_emit.get(int(q), {}).items():
                by_token.setdefault(t, []).append((i, math.exp(lp)))
        self._by_token = by_token
        self.known_tokens = set(by_token)

    def is_oov(self, token: int) -> bool:
        if self.emit_floor.any() and 0 <= token < self.vocab_size:
            return False
        return token not in self.known_tokens

    def emission(self, token: int, oov_policy: OOVPolicy) -> np.ndarray:
        col = self._emit_cols.get(token)
        if col is not None:
            return col
        if self.is_oov(token):
            if oov_policy == OOVPolicy.FLOOR:
                col = np.full(self.k, OOV_FLOOR)
            else:
                col = np.zeros(self.k)
        else:
            col = self.emit_floor.copy() if 0 <= token < self.vocab_size else np.zeros(self.k)
            for i, p in self._by_token.get(token, ()):
                col[i] = p
        self._emit_cols[token] = col
        return col

    # dynamic programming ---------------------------------------------------

    def forward(self, seq: Sequence[int], oov_policy: OOVPolicy = OOVPolicy.STRICT) -> float:
        if self.k == 0 or not seq:
            return -math.inf
        alpha = self.start * self.emission(seq[0], oov_policy)
        logp = 0.0
        for tok in seq[1:]:
            c = alpha.sum()
            if c <= 0:
                return -math.inf
            logp += math.log(c)
            alpha = alpha / c
            nxt = self.excess.T @ alpha
            nxt += float(alpha @ self.floor)
            alpha = nxt * self.emission(tok, oov_policy)
        fin = float(alpha @ self.end)
        if fin <= 0:
            return -math.inf
        return logp + math.log(fin)

    def viterbi(self, seq: Sequence[int], oov_policy: OOVPolicy = OOVPolicy.STRICT) -> tuple[float, list[int]]:
        if self.k == 0 or not seq:
            return -math.inf, []
        with np.errstate(divide="ignore"):
            delta = self.log_start + np.log(self.emission(seq[0], oov_policy))
            backs = []
            for tok in seq[1:]:
                best, arg = self._maxplus(delta)
                delta = best + np.log(self.emission(tok, oov_policy))
                backs.append(arg)
            final = delta + self.log_end
        last = int(np.argmax(final))
        score = float(final[last])
        if score == -math.inf:
            return -math.inf, []
        path = [last]
        for arg in reversed(backs):
            path.append(int(arg[path[-1]]))
        path.reverse()
        return score, [int(self.state_ids[i]) for i in path]

    def _maxplus(self, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """For each target j: max_i delta[i] + log p(j|i) and the smallest argmax."""
        k = self.k
        best = np.full(k, -np.inf)
        arg = np.zeros(k, dtype=np.int64)
        if len(self._v_cols):
            vals = delta[self._v_rows] + self._v_logp
            starts = self._v_starts[self._v_has]
            segmax = np.maximum.reduceat(vals, starts)
            cols = self._v_cols[starts]
            seglen = np.diff(np.append(starts, len(vals)))
            hit = vals == np.repeat(segmax, seglen)
            pos = np.where(hit, np.arange(len(vals)), len(vals))
            first = np.minimum.reduceat(pos, starts)
            best[cols] = segmax
            arg[cols] = self._v_rows[first]
        if self.floor.any():
            u = delta + self.log_floor
            i_u = int(np.argmax(u))
            u_max = u[i_u]
            better = u_max > best
            tie = (u_max == best) & (i_u < arg)
            take = better | tie
            best = np.where(take, u_max, best)
            arg = np.where(take, i_u, arg)
        return best, arg


def _compiled(model_or_view) -> CompiledView:
    if isinstance(model_or_view, CompiledView):
        return model_or_view
    if isinstance(model_or_view, CountModel):
        model_or_view = probabilities(model_or_view)
    return CompiledView(model_or_view)


def forward(model, sequence: Sequence[int], oov_policy: OOVPolicy | str = OOVPolicy.STRICT) -> SequenceScore:
    """log P(sequence) summed over all state paths."""
    cv = _compiled(model)
    return SequenceScore(cv.forward(list(sequence), OOVPolicy(oov_policy)), len(sequence))


def viterbi(model, sequence: Sequence[int], oov_policy: OOVPolicy | str = OOVPolicy.STRICT) -> ViterbiResult:
    """Best state path; ties go to the smallest predecessor state id."""
    cv = _compiled(model)
    lp, path = cv.viterbi(list(sequence), OOVPolicy(oov_policy))
    return ViterbiResult(lp, path)


def evaluate_corpus(model, corpus: Corpus, mode: Mode | str = Mode.VITERBI,
                    oov_policy: OOVPolicy | str = OOVPolicy.STRICT) -> EvaluationReport:
    """Total base-10 log probability and log perplexity of a corpus.

    ``model`` may be a CountModel, a ProbabilityView (e.g. a smoothed one)
    or an already compiled view. End transitions contribute to the
    probability but not to the token count.
    """
    if len(corpus) == 0:
        raise ValueError("cannot evaluate an empty corpus")
    cv = _compiled(model)
    mode, oov_policy = Mode(mode), OOVPolicy(oov_policy)
    total = 0.0
    oov = 0
    zero = 0
    for seq, mult in corpus:
        oov += mult * sum(1 for t in seq if cv.is_oov(t))
        if mode == Mode.FORWARD:
            lp = cv.forward(seq, oov_policy)
        else:
            lp, _ = cv.viterbi(seq, oov_policy)
        if lp == -math.inf:
            zero += mult
        total += mult * lp / LN10
    return EvaluationReport(total, corpus.total_tokens, oov, mode.value, oov_policy.value, zero)
