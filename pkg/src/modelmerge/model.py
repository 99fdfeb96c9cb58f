"""Markov models stored as integer sufficient statistics.

A :class:`CountModel` keeps transition, emission and visit counts. Maximum
likelihood probabilities are obtained by row normalization, so merging two
states is exact integer addition.

State ids are dense integers. ``START`` (0) and ``END`` (1) are reserved;
proper states are numbered from 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import Vocabulary

START = 0
END = 1
FIRST_PROPER = 2


class ModelError(ValueError):
    """Malformed model text or inconsistent counts."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


def xlogx(c: float) -> float:
    return c * math.log(c) if c > 0 else 0.0


def row_gain(row: dict[int, int], total: int | None = None) -> float:
    """Sum of c*ln(c/C) over a count row; the log-likelihood of the row."""
    if total is None:
        total = sum(row.values())
    if total <= 0:
        return 0.0
    return sum(c * math.log(c / total) for c in row.values() if c > 0)


def pair_gain(c1: int, c2: int) -> float:
    """(c1+c2)ln(c1+c2) - c1 ln c1 - c2 ln c2, evaluated without cancellation."""
    if c1 <= 0 or c2 <= 0:
        return 0.0
    s = c1 + c2
    return c1 * math.log(s / c1) + c2 * math.log(s / c2)


def multi_gain(counts: list[int]) -> float:
    counts = [c for c in counts if c > 0]
    if len(counts) < 2:
        return 0.0
    s = sum(counts)
    return sum(c * math.log(s / c) for c in counts)


@dataclass
class CountModel:
    """Discrete-output first-order Markov model as counts.

    ``trans[q][q2]`` counts transitions q -> q2, ``incoming[q2][q]`` mirrors
    it, ``emit[q][tok]`` counts emissions and ``visits[q]`` the number of
    times a proper state (or START) was entered.
    """

    vocab_size: int = 0
    trans: dict[int, dict[int, int]] = field(default_factory=dict)
    incoming: dict[int, dict[int, int]] = field(default_factory=dict)
    emit: dict[int, dict[int, int]] = field(default_factory=dict)
    visits: dict[int, int] = field(default_factory=dict)
    merged_into: dict[int, int] = field(default_factory=dict)
    next_id: int = FIRST_PROPER

    def __post_init__(self):
        for q in (START, END):
            self.trans.setdefault(q, {})
            self.incoming.setdefault(q, {})
        self.visits.setdefault(START, 0)

    # construction -----------------------------------------------------

    def new_state(self) -> int:
        q = self.next_id
        self.next_id += 1
        self.trans[q] = {}
        self.incoming[q] = {}
        self.emit[q] = {}
        self.visits[q] = 0
        return q

    def ensure_state(self, q: int) -> None:
        if q not in self.emit and q >= FIRST_PROPER:
            self.trans[q] = {}
            self.incoming[q] = {}
            self.emit[q] = {}
            self.visits[q] = 0
            self.next_id = max(self.next_id, q + 1)

    def add_transition(self, src: int, dst: int, count: int = 1) -> None:
        row = self.trans[src]
        row[dst] = row.get(dst, 0) + count
        col = self.incoming[dst]
        col[src] = col.get(src, 0) + count
        if src == START:
            self.visits[START] += count

    def add_emission(self, q: int, token: int, count: int = 1) -> None:
        row = self.emit[q]
        row[token] = row.get(token, 0) + count
        self.visits[q] += count
        if token >= self.vocab_size:
            self.vocab_size = token + 1

    def add_path(self, path: list[int], tokens: tuple[int, ...], count: int = 1) -> None:
        prev = START
        for q, tok in zip(path, tokens):
            self.add_transition(prev, q, count)
            self.add_emission(q, tok, count)
            prev = q
        self.add_transition(prev, END, count)

    # queries -----------------------------------------------------------

    @property
    def states(self) -> list[int]:
        """Live proper states in ascending id order."""
        return sorted(self.emit)

    @property
    def n_states(self) -> int:
        return len(self.emit)

    def is_proper(self, q: int) -> bool:
        return q in self.emit

    def find(self, q: int) -> int:
        """Follow the merge history of ``q`` to its live representative."""
        root = q
        while root in self.merged_into:
            root = self.merged_into[root]
        while q != root:
            nxt = self.merged_into[q]
            self.merged_into[q] = root
            q = nxt
        return root

    def total_emissions(self) -> int:
        return sum(sum(row.values()) for row in self.emit.values())

    def emitted_tokens(self, q: int) -> frozenset[int]:
        return frozenset(t for t, c in self.emit[q].items() if c > 0)

    def loglik(self) -> float:
        """Viterbi-count log-likelihood: sum of row gains (natural log)."""
        total = row_gain(self.trans[START])
        for q in self.emit:
            total += row_gain(self.trans[q]) + row_gain(self.emit[q])
        return total

    def copy(self) -> "CountModel":
        return CountModel(
            vocab_size=self.vocab_size,
            trans={q: dict(r) for q, r in self.trans.items()},
            incoming={q: dict(r) for q, r in self.incoming.items()},
            emit={q: dict(r) for q, r in self.emit.items()},
            visits=dict(self.visits),
            merged_into=dict(self.merged_into),
            next_id=self.next_id,
        )

    def count_key(self):
        """Canonical form of the counts, for exact equality tests."""
        def rows(d):
            return tuple(sorted((q, tuple(sorted((k, v) for k, v in r.items() if v)))
                                for q, r in d.items()))
        return (rows(self.trans), rows(self.emit))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountModel):
            return NotImplemented
        return self.count_key() == other.count_key()

    # merging -------------------------------------------------------------

    def delta_merge(self, a: int, b: int) -> float:
        """Log-likelihood change of merging proper states a and b.

        Only the merged rows and the predecessors shared by a and b are
        touched; every term is a non-negative pair gain, which keeps exact
        zeros at zero.
        """
        if a == b or not (self.is_proper(a) and self.is_proper(b)):
            raise ModelError(f"cannot merge states {a} and {b}")
        delta = 0.0
        # predecessors common to both (row totals unchanged)
        ia, ib = self.incoming[a], self.incoming[b]
        if len(ia) > len(ib):
            ia, ib = ib, ia
        for r, c1 in ia.items():
            if r != a and r != b:
                c2 = ib.get(r)
                if c2:
                    delta += pair_gain(c1, c2)
        # merged transition row
        ta, tb = self.trans[a], self.trans[b]
        small, large = (ta, tb) if len(ta) <= len(tb) else (tb, ta)
        for s, c1 in small.items():
            if s != a and s != b:
                c2 = large.get(s)
                if c2:
                    delta += pair_gain(c1, c2)
        delta += multi_gain([ta.get(a, 0), ta.get(b, 0), tb.get(a, 0), tb.get(b, 0)])
        va, vb = self.visits[a], self.visits[b]
        delta -= pair_gain(sum(ta.values()), sum(tb.values()))
        # merged emission row
        ea, eb = self.emit[a], self.emit[b]
        if len(ea) > len(eb):
            ea, eb = eb, ea
        for t, c1 in ea.items():
            c2 = eb.get(t)
            if c2:
                delta += pair_gain(c1, c2)
        delta -= pair_gain(va, vb)
        return delta

    def merge(self, a: int, b: int) -> int:
        """Replace proper states a and b by a fresh state holding their sums."""
        if a == b or not (self.is_proper(a) and self.is_proper(b)):
            raise ModelError(f"cannot merge states {a} and {b}")
        m = self.new_state()
        pair = (a, b)
        row: dict[int, int] = {}
        for q in pair:
            for s, c in self.trans[q].items():
                s2 = m if s in pair else s
                row[s2] = row.get(s2, 0) + c
        col: dict[int, int] = {}
        for q in pair:
            for r, c in self.incoming[q].items():
                r2 = m if r in pair else r
                col[r2] = col.get(r2, 0) + c
        em: dict[int, int] = {}
        for q in pair:
            for t, c in self.emit[q].items():
                em[t] = em.get(t, 0) + c
        # detach old states from their neighbours
        for q in pair:
            for s in self.trans[q]:
                if s not in pair:
                    del self.incoming[s][q]
            for r in self.incoming[q]:
                if r not in pair:
                    del self.trans[r][q]
        for s, c in row.items():
            if s != m:
                self.incoming[s][m] = c
        for r, c in col.items():
            if r != m:
                self.trans[r][m] = c
        self.trans[m] = row
        self.incoming[m] = col
        self.emit[m] = em
        self.visits[m] = self.visits[a] + self.visits[b]
        for q in pair:
            del self.trans[q], self.incoming[q], self.emit[q], self.visits[q]
            self.merged_into[q] = m
        return m


def validate(model: CountModel) -> list[str]:
    """List every violated count invariant (empty when the model is sound)."""
    problems: list[str] = []
    if model.incoming[START]:
        problems.append(f"state S has incoming transitions from {sorted(model.incoming[START])}")
    if model.trans[END]:
        problems.append(f"state E has outgoing transitions to {sorted(model.trans[END])}")
    if END in model.emit or START in model.emit:
        problems.append("reserved state has emissions")
    out_s = sum(model.trans[START].values())
    if model.visits.get(START, 0) != out_s:
        problems.append(f"state S: visits {model.visits.get(START, 0)} != outgoing {out_s}")
    if out_s == 0:
        problems.append("state S: no outgoing transitions")
    if END in model.trans[START]:
        problems.append("state S: transition straight to E (empty utterance)")
    for q in model.emit:
        out = sum(model.trans.get(q, {}).values())
        em = sum(model.emit[q].values())
        v = model.visits.get(q, 0)
        if out != v:
            problems.append(f"state {q}: visits {v} != outgoing transitions {out}")
        if em != v:
            problems.append(f"state {q}: visits {v} != emissions {em}")
        if any(c < 0 for c in model.trans.get(q, {}).values()) or any(c < 0 for c in model.emit[q].values()):
            problems.append(f"state {q}: negative count")
    for src, row in model.trans.items():
        for dst, c in row.items():
            if dst == START:
                continue
            if dst != END and dst not in model.emit:
                problems.append(f"state {src}: transition to unknown state {dst}")
            elif model.incoming.get(dst, {}).get(src) != c:
                problems.append(f"state {src}: incoming index out of sync for {dst}")
    return problems


@dataclass
class ProbabilityView:
    """Log probabilities derived from counts (natural log).

    ``trans_floor``/``emit_floor`` give the probability of any target not
    listed in a row; they are empty for maximum-likelihood views and filled
    by additive smoothing.
    """

    log_trans: dict[int, dict[int, float]]
    log_emit: dict[int, dict[int, float]]
    vocab_size: int
    trans_floor: dict[int, float] = field(default_factory=dict)
    emit_floor: dict[int, float] = field(default_factory=dict)

    @property
    def states(self) -> list[int]:
        return sorted(self.log_emit)

    def trans_prob(self, q: int, q2: int) -> float:
        lp = self.log_trans.get(q, {}).get(q2)
        if lp is not None:
            return math.exp(lp)
        if q2 == START or q == END or (q == START and q2 == END):
            return 0.0
        return self.trans_floor.get(q, 0.0)

    def emit_prob(self, q: int, token: int) -> float:
        lp = self.log_emit.get(q, {}).get(token)
        if lp is not None:
            return math.exp(lp)
        if token >= self.vocab_size:
            return 0.0
        return self.emit_floor.get(q, 0.0)


def probabilities(model: CountModel) -> ProbabilityView:
    """Row-normalized maximum-likelihood log probabilities."""
    log_trans: dict[int, dict[int, float]] = {}
    log_emit: dict[int, dict[int, float]] = {}
    for q in [START, *model.emit]:
        row = model.trans[q]
        total = sum(row.values())
        if total == 0:
            if row or model.emit.get(q):
                raise ModelError(f"state {q} has zero visits but nonzero counts")
            raise ModelError(f"state {q} has no outgoing transitions")
        log_trans[q] = {s: math.log(c / total) for s, c in row.items() if c > 0}
    for q, row in model.emit.items():
        total = sum(row.values())
        if total == 0:
            raise ModelError(f"state {q} has no emissions")
        log_emit[q] = {t: math.log(c / total) for t, c in row.items() if c > 0}
    return ProbabilityView(log_trans, log_emit, model.vocab_size)


# serialization ------------------------------------------------------------

def _sym(q: int) -> str:
    return "S" if q == START else "E" if q == END else str(q)


def write_model(model: CountModel, vocab: Vocabulary) -> str:
    """Line-oriented ``MM1`` text holding the exact integer counts."""
    lines = [f"MM1 states={model.n_states} vocab={len(vocab)}"]
    for i, w in enumerate(vocab.words):
        lines.append(f"V {i} {w}")
    for src in [START, *model.states]:
        for dst in sorted(model.trans[src]):
            c = model.trans[src][dst]
            if c:
                lines.append(f"T {_sym(src)} {_sym(dst)} {c}")
    for q in model.states:
        for t in sorted(model.emit[q]):
            c = model.emit[q][t]
            if c:
                lines.append(f"M {q} {t} {c}")
    return "\n".join(lines) + "\n"


def _parse_state(tok: str, lineno: int) -> int:
    if tok == "S":
        return START
    if tok == "E":
        return END
    try:
        q = int(tok)
    except ValueError:
        raise ModelError(f"line {lineno}: bad state id {tok!r}") from None
    if q < FIRST_PROPER:
        raise ModelError(f"line {lineno}: proper state ids start at {FIRST_PROPER}")
    return q


def _parse_count(tok: str, lineno: int) -> int:
    try:
        c = int(tok)
    except ValueError:
        raise ModelError(f"line {lineno}: bad count {tok!r}") from None
    if c < 0:
        raise ModelError(f"line {lineno}: negative count")
    return c


def read_model(text: str) -> tuple[CountModel, Vocabulary]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("MM1"):
        raise ModelError("line 1: missing 'MM1' header")
    header = dict(kv.split("=", 1) for kv in lines[0].split()[1:] if "=" in kv)
    try:
        n_states = int(header["states"])
        n_vocab = int(header["vocab"])
    except (KeyError, ValueError):
        raise ModelError("line 1: header needs states=<n> vocab=<v>") from None
    vocab = Vocabulary()
    trans: list[tuple[int, int, int]] = []
    emits: list[tuple[int, int, int]] = []
    proper: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "V":
            if len(parts) != 3 or parts[1] != str(len(vocab)):
                raise ModelError(f"line {lineno}: expected 'V {len(vocab)} <word>'")
            vocab.intern(parts[2])
        elif kind == "T":
            if len(parts) != 4:
                raise ModelError(f"line {lineno}: expected 'T <from> <to> <count>'")
            src, dst = _parse_state(parts[1], lineno), _parse_state(parts[2], lineno)
            trans.append((src, dst, _parse_count(parts[3], lineno)))
            proper.update(q for q in (src, dst) if q >= FIRST_PROPER)
        elif kind == "M":
            if len(parts) != 4:
                raise ModelError(f"line {lineno}: expected 'M <state> <token> <count>'")
            q = _parse_state(parts[1], lineno)
            if q < FIRST_PROPER:
                raise ModelError(f"line {lineno}: reserved state cannot emit")
            tok = _parse_count(parts[2], lineno)
            if tok >= n_vocab:
                raise ModelError(f"line {lineno}: token id {tok} outside vocabulary")
            emits.append((q, tok, _parse_count(parts[3], lineno)))
            proper.add(q)
        else:
            raise ModelError(f"line {lineno}: unknown line type {kind!r}")
    if len(vocab) != n_vocab:
        raise ModelError(f"header declares {n_vocab} words, found {len(vocab)}")
    if len(proper) != n_states:
        raise ModelError(f"header declares {n_states} states, found {len(proper)}")
    model = CountModel(vocab_size=n_vocab)
    for q in sorted(proper):
        model.next_id = q
        model.new_state()
    model.next_id = max(proper, default=FIRST_PROPER - 1) + 1
    for src, dst, c in trans:
        if src not in (START, END) and src not in model.emit or dst not in (START, END) and dst not in model.emit:
            raise ModelError(f"transition {src}->{dst} uses an unknown state")
        if src == END or dst == START:
            raise ModelError("transitions must not leave E or enter S",
                             [f"transition {_sym(src)}->{_sym(dst)}"])
        model.add_transition(src, dst, c)
    for q, tok, c in emits:
        model.add_emission(q, tok, c)
    model.vocab_size = n_vocab
    problems = validate(model)
    if problems:
        raise ModelError("model fails validation: " + "; ".join(problems), problems)
    return model, vocab


@dataclass
class StoredPaths:
    """One state path per distinct training utterance.

    Paths keep the ids they were created with; :meth:`resolved` maps them
    through the model's merge history.
    """

    sequences: list[tuple[tuple[int, ...], int]]
    paths: list[list[int]]

    def resolved(self, model: CountModel) -> list[list[int]]:
        for path in self.paths:
            path[:] = [model.find(q) for q in path]
        return self.paths

    def recount(self, model: CountModel) -> CountModel:
        """Rebuild counts from the (relabeled) paths."""
        fresh = CountModel(vocab_size=model.vocab_size)
        for (seq, mult), path in zip(self.sequences, self.resolved(model)):
            for q in path:
                fresh.ensure_state(q)
            fresh.add_path(path, seq, mult)
        fresh.vocab_size = model.vocab_size
        fresh.next_id = model.next_id
        fresh.merged_into = dict(model.merged_into)
        return fresh
