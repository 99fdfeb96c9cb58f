"""Greedy state merging under the Viterbi-count likelihood.

Every training utterance keeps the state path it was built with, relabeled
through the merge history, so the corpus likelihood is a function of the
counts alone and the effect of a merge can be computed from the rows it
touches (see :meth:`CountModel.delta_merge`).
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

from .constraints import ConstraintKind, ConstraintSchedule, signature
from .corpus import Corpus, Vocabulary
from .inference import LN10, Mode, OOVPolicy, evaluate_corpus
from .model import END, START, CountModel, ModelError, StoredPaths, probabilities
from .ngram import smooth_view

logger = logging.getLogger(__name__)

TIE_DIGITS = 10
DELTA_TOL = 1e-9
PREMERGE_TOL = 1e-9


@dataclass(frozen=True)
class MergeCandidate:
    pair: tuple[int, int]
    delta_loglik: float


@dataclass(frozen=True)
class StopCriterion:
    """One of ``train_lp_threshold``, ``target_states``, ``max_merges`` or
    ``held_out_minimum`` (value = patience in merges)."""

    variant: str
    value: float = 0

    VARIANTS = ("train_lp_threshold", "target_states", "max_merges", "held_out_minimum")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown stop criterion {self.variant!r}")

    @classmethod
    def parse(cls, text: str) -> "StopCriterion":
        name, _, value = text.partition(":")
        name = name.strip()
        if not value.strip():
            if name == "held_out_minimum":
                return cls(name, 1000)
            raise ValueError(f"stop criterion {name!r} needs a value")
        num = float(value) if name == "train_lp_threshold" else int(value)
        return cls(name, num)

    def __str__(self):
        return f"{self.variant}:{self.value:g}"


@dataclass
class MergeRecord:
    merge: int
    states: int
    train_lp: float
    test_lp: float | None
    delta: float
    q1: int
    q2: int
    merged: int


@dataclass
class MergeTrace:
    records: list[MergeRecord] = field(default_factory=list)
    stop_reason: str | None = None
    premerges: int = 0
    initial_train_lp: float | None = None
    initial_test_lp: float | None = None
    best_model: CountModel | None = None
    best_merge: int = 0
    best_test_lp: float | None = None

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["merge,states,train_lp,test_lp,delta,q1,q2"]
        for r in self.records:
            test = "" if r.test_lp is None else repr(r.test_lp)
            lines.append(f"{r.merge},{r.states},{r.train_lp!r},{test},{r.delta!r},{r.q1},{r.q2}")
        return "\n".join(lines) + "\n"


# trivial model and affix premerging -------------------------------------------

def build_trivial_model(corpus: Corpus, vocab_size: int | None = None) -> tuple[CountModel, StoredPaths]:
    """One state chain per distinct utterance, each state emitting its token."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    model = CountModel(vocab_size=vocab_size or 0)
    paths = []
    for seq, mult in corpus:
        path = [model.new_state() for _ in seq]
        model.add_path(path, seq, mult)
        paths.append(path)
    return model, StoredPaths(list(corpus.utterances), paths)


def corpus_loglik(model: CountModel, paths: StoredPaths | None = None) -> float:
    """Viterbi-count log-likelihood (natural log) of the training corpus."""
    if paths is not None and paths.recount(model) != model:
        raise ModelError("model counts disagree with stored paths")
    return model.loglik()


def delta_loglik(model: CountModel, q1: int, q2: int) -> float:
    return model.delta_merge(q1, q2)


def apply_merge(model: CountModel, paths: StoredPaths | None, q1: int, q2: int) -> int:
    """Merge in place; stored paths follow lazily through ``merged_into``."""
    return model.merge(q1, q2)


def _train_lp(loglik: float, n_tokens: int) -> float:
    return -loglik / (LN10 * n_tokens)


def _record(trace: MergeTrace | None, model: CountModel, loglik: float, n_tokens: int,
            delta: float, q1: int, q2: int, m: int, test_lp: float | None = None) -> None:
    if trace is None:
        return
    trace.records.append(MergeRecord(len(trace.records) + 1, model.n_states,
                                     _train_lp(loglik, n_tokens), test_lp, delta, q1, q2, m))


def premerge_affixes(model: CountModel, paths: StoredPaths, trace: MergeTrace | None = None) -> int:
    """Merge states with identical utterance prefixes, then states with
    identical deterministic continuations to the end.

    Neither kind changes the corpus likelihood. Returns the merge count.
    """
    n_tokens = model.total_emissions()
    loglik = model.loglik()
    done = 0

    def merge(a, b):
        nonlocal done, loglik
        d = model.delta_merge(a, b)
        if abs(d) > PREMERGE_TOL:
            logger.warning("skipping premerge %d,%d with delta %g", a, b, d)
            return a
        m = model.merge(a, b)
        loglik += d
        done += 1
        _record(trace, model, loglik, n_tokens, d, min(a, b), max(a, b), m)
        return m

    # prefixes, one depth at a time so parents are merged first
    seqs = [seq for seq, _ in paths.sequences]
    depth = 0
    while True:
        groups: dict[tuple[int, int], list[int]] = {}
        active = False
        for seq, path in zip(seqs, paths.paths):
            if len(seq) <= depth:
                continue
            active = True
            parent = START if depth == 0 else model.find(path[depth - 1])
            groups.setdefault((parent, seq[depth]), []).append(model.find(path[depth]))
        if not active:
            break
        for key in sorted(groups):
            members = sorted(set(groups[key]))
            rep = members[0]
            for other in members[1:]:
                rep = merge(rep, model.find(other))
        depth += 1

    # suffixes: states whose only continuation is a fixed token string
    key_of: dict[int, int] = {}
    interned: dict[tuple[int, int], int] = {}
    levels: list[dict[int, list[int]]] = []
    frontier = [END]
    level_of = {END: 0}
    while frontier:
        layer: dict[int, list[int]] = {}
        nxt = []
        for s in frontier:
            for r in sorted(model.incoming[s]):
                if r == START or r in key_of:
                    continue
                if len(model.trans[r]) != 1 or len(model.emit[r]) != 1:
                    continue
                tok = next(iter(model.emit[r]))
                k = interned.setdefault((tok, -1 if s == END else key_of[s]), len(interned))
                key_of[r] = k
                layer.setdefault(k, []).append(r)
                nxt.append(r)
        if layer:
            levels.append(layer)
        frontier = nxt
    for layer in levels:
        for k in sorted(layer):
            members = sorted({model.find(q) for q in layer[k]})
            rep = members[0]
            for other in members[1:]:
                rep = merge(rep, model.find(other))
    if trace is not None:
        trace.premerges += done
    return done


# candidate search ---------------------------------------------------------

class CandidateSearch:
    """Maintains deltas of all allowed pairs and yields the best one.

    After a merge of a and b into m, a pair's delta can only change if it
    contains m, or both members are predecessors of m, or both are
    successors of m; only those pairs are recomputed.
    """

    def __init__(self, model: CountModel, kind: ConstraintKind, vocab: Vocabulary | None = None):
        self.model = model
        self.kind = kind
        self.vocab = vocab
        self.key_of: dict[int, object] = {}
        self.members: dict[object, set[int]] = {}
        self.delta: dict[tuple[int, int], float] = {}
        self.heap: list[tuple[float, int, int]] = []
        for q in model.states:
            self._assign(q)
        for cls in self.members.values():
            ordered = sorted(cls)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    self._compute(a, b)

    def _assign(self, q: int) -> None:
        k = signature(self.model, q, self.kind, self.vocab)
        self.key_of[q] = k
        self.members.setdefault(k, set()).add(q)

    def _unassign(self, q: int) -> None:
        k = self.key_of.pop(q)
        cls = self.members[k]
        cls.discard(q)
        if not cls:
            del self.members[k]

    def _compute(self, a: int, b: int) -> None:
        if a > b:
            a, b = b, a
        d = self.model.delta_merge(a, b)
        self.delta[(a, b)] = d
        heapq.heappush(self.heap, (-round(d, TIE_DIGITS), a, b))

    @property
    def candidate_count(self) -> int:
        return sum(len(c) * (len(c) - 1) // 2 for c in self.members.values())

    def allowed_pairs(self):
        for cls in self.members.values():
            ordered = sorted(cls)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    yield a, b

    def cached(self, a: int, b: int) -> float:
        return self.delta[(min(a, b), max(a, b))]

    def _valid(self, key: float, a: int, b: int) -> bool:
        if a not in self.key_of or b not in self.key_of:
            return False
        if self.key_of[a] != self.key_of[b]:
            return False
        d = self.delta.get((a, b))
        return d is not None and -round(d, TIE_DIGITS) == key

    def best(self) -> MergeCandidate | None:
        heap = self.heap
        while heap:
            key, a, b = heap[0]
            if self._valid(key, a, b):
                return MergeCandidate((a, b), self.delta[(a, b)])
            heapq.heappop(heap)
        return None

    def update(self, a: int, b: int, m: int) -> None:
        """Refresh after ``model.merge(a, b)`` returned ``m``."""
        model = self.model
        self._unassign(a)
        self._unassign(b)
        self._assign(m)
        preds = [r for r in model.incoming[m] if r != START and r != m]
        succs = [s for s in model.trans[m] if s != END and s != m]
        moved = []
        if self.kind.name == "bigram":
            for s in succs:
                old = self.key_of[s]
                new = signature(model, s, self.kind, self.vocab)
                if new != old:
                    self._unassign(s)
                    self._assign(s)
                    moved.append(s)
        done: set[tuple[int, int]] = set()

        def refresh(x, y):
            p = (x, y) if x < y else (y, x)
            if p not in done:
                done.add(p)
                self._compute(*p)

        for y in self.members[self.key_of[m]]:
            if y != m:
                refresh(m, y)
        for s in moved:
            for y in self.members[self.key_of[s]]:
                if y != s:
                    refresh(s, y)
        for group in (preds, succs):
            by_class: dict[object, list[int]] = {}
            for q in group:
                by_class.setdefault(self.key_of[q], []).append(q)
            for qs in by_class.values():
                for i, x in enumerate(qs):
                    for y in qs[i + 1:]:
                        refresh(x, y)
        self._maybe_compact()

    def _maybe_compact(self) -> None:
        if len(self.delta) > 4 * self.candidate_count + 10000:
            self.delta = {p: d for p, d in self.delta.items()
                          if p[0] in self.key_of and p[1] in self.key_of
                          and self.key_of[p[0]] == self.key_of[p[1]]}
        if len(self.heap) > 4 * len(self.delta) + 10000:
            self.heap = [(-round(d, TIE_DIGITS), a, b) for (a, b), d in self.delta.items()]
            heapq.heapify(self.heap)


# the greedy loop ----------------------------------------------------------

def make_evaluator(corpus: Corpus, mode: Mode | str = Mode.VITERBI,
                   oov_policy: OOVPolicy | str = OOVPolicy.FLOOR,
                   smoothing_alpha: float = 0.0) -> Callable[[CountModel], float]:
    """Held-out log perplexity (base 10, per token) as a function of the model."""
    def evaluate(model: CountModel) -> float:
        view = smooth_view(model, smoothing_alpha) if smoothing_alpha > 0 else probabilities(model)
        return evaluate_corpus(view, corpus, mode, oov_policy).log_perplexity
    return evaluate


def run_merging(model: CountModel, paths: StoredPaths, schedule: ConstraintSchedule,
                stop: StopCriterion, eval_corpus: Corpus | None = None, log_every: int = 100,
                trace: MergeTrace | None = None, *, mode: Mode | str = Mode.VITERBI,
                oov_policy: OOVPolicy | str = OOVPolicy.FLOOR, smoothing_alpha: float = 0.0,
                vocab: Vocabulary | None = None, reviterbi_every: int = 0,
                on_step: Callable[[CandidateSearch], None] | None = None) -> MergeTrace:
    """Greedily merge the allowed pair with the largest (least negative)
    likelihood change until ``stop`` fires or no merge is allowed.

    The model is modified in place. Merges already in ``trace`` (e.g.
    premerges) count toward the schedule budgets. With a held-out stop the
    best model seen is kept in ``trace.best_model``.
    """
    if log_every < 1:
        raise ValueError("log_every must be >= 1")
    if trace is None:
        trace = MergeTrace()
    n_tokens = model.total_emissions()
    loglik = model.loglik()
    evaluator = make_evaluator(eval_corpus, mode, oov_policy, smoothing_alpha) if eval_corpus else None
    held_out = stop.variant == "held_out_minimum"
    if held_out and evaluator is None:
        raise ValueError("held-out stopping needs an evaluation corpus")

    trace.initial_train_lp = _train_lp(loglik, n_tokens) if not trace.records else trace.initial_train_lp
    if trace.initial_train_lp is None:
        trace.initial_train_lp = _train_lp(model.loglik(), n_tokens)
    best_lp = math.inf
    if evaluator is not None:
        lp0 = evaluator(model)
        trace.initial_test_lp = lp0
        if held_out and lp0 < best_lp:
            best_lp = lp0
            trace.best_model = model.copy()
            trace.best_merge = len(trace.records)

    stage = 0
    stage_start = len(trace.records)
    # skip stages whose budget the premerges already used up
    offset = stage_start
    while stage < len(schedule.stages) - 1:
        budget = schedule.stages[stage][1]
        if budget is None or offset < budget:
            break
        offset -= budget
        stage += 1
    stage_start -= offset
    search = CandidateSearch(model, schedule.stages[stage][0], vocab)
    run_merges = 0

    while True:
        kind, budget = schedule.stages[stage]
        if budget is not None and len(trace.records) - stage_start >= budget and stage < len(schedule.stages) - 1:
            stage += 1
            stage_start = len(trace.records)
            search = CandidateSearch(model, schedule.stages[stage][0], vocab)
            continue
        if model.n_states < 2:
            trace.stop_reason = "min_states"
            break
        if stop.variant == "target_states" and model.n_states <= stop.value:
            trace.stop_reason = "target_states"
            break
        if stop.variant == "max_merges" and run_merges >= stop.value:
            trace.stop_reason = "max_merges"
            break
        if on_step is not None:
            on_step(search)
        cand = search.best()
        if cand is None:
            if stage < len(schedule.stages) - 1:
                stage += 1
                stage_start = len(trace.records)
                search = CandidateSearch(model, schedule.stages[stage][0], vocab)
                continue
            trace.stop_reason = "constraint_exhausted"
            break
        a, b = cand.pair
        d = cand.delta_loglik
        if stop.variant == "train_lp_threshold" and _train_lp(loglik + d, n_tokens) > stop.value:
            trace.stop_reason = "train_lp_threshold"
            break
        m = model.merge(a, b)
        loglik += d
        run_merges += 1
        search.update(a, b, m)

        if reviterbi_every and run_merges % reviterbi_every == 0:
            new_model, new_paths = reviterbi(model, paths)
            model.__dict__.update(new_model.__dict__)
            paths.paths = new_paths.paths
            loglik = model.loglik()
            search = CandidateSearch(model, schedule.stages[stage][0], vocab)

        test_lp = None
        idx = len(trace.records) + 1
        if evaluator is not None and (idx % log_every == 0 or model.n_states < 2):
            test_lp = evaluator(model)
        _record(trace, model, loglik, n_tokens, d, a, b, m, test_lp)
        if held_out and test_lp is not None:
            if test_lp < best_lp:
                best_lp = test_lp
                trace.best_model = model.copy()
                trace.best_merge = idx
            elif math.isfinite(best_lp) and idx - trace.best_merge >= stop.value:
                trace.stop_reason = "held_out_minimum"
                break

    if evaluator is not None and trace.records and trace.records[-1].test_lp is None:
        rec = trace.records[-1]
        rec.test_lp = evaluator(model)
        if held_out and rec.test_lp < best_lp:
            best_lp = rec.test_lp
            trace.best_model = model.copy()
            trace.best_merge = rec.merge
    if held_out:
        trace.best_test_lp = best_lp
    else:
        trace.best_model = model
        trace.best_merge = len(trace.records)
        trace.best_test_lp = trace.records[-1].test_lp if trace.records else trace.initial_test_lp
    return trace


def reviterbi(model: CountModel, paths: StoredPaths | Corpus) -> tuple[CountModel, StoredPaths]:
    """Re-parse every utterance with its Viterbi path under the current
    probabilities and rebuild the counts from those paths."""
    from .inference import CompiledView

    sequences = paths.sequences if isinstance(paths, StoredPaths) else list(paths.utterances)
    cv = CompiledView(probabilities(model))
    fresh = CountModel(vocab_size=model.vocab_size)
    new_paths = []
    for seq, mult in sequences:
        lp, path = cv.viterbi(seq)
        if lp == -math.inf:
            raise ModelError(f"utterance {seq} has no path under the model")
        for q in path:
            fresh.ensure_state(q)
        fresh.add_path(path, seq, mult)
        new_paths.append(path)
    fresh.vocab_size = model.vocab_size
    fresh.next_id = model.next_id
    fresh.merged_into = dict(model.merged_into)
    return fresh, StoredPaths(list(sequences), new_paths)
