"""Equivalence-class constraints on which states may merge, and cascades
of progressively weaker constraints.

Only states sharing a class key may merge. ``none`` puts every proper state
in one class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable

from .corpus import AmbiguityLexicon, Vocabulary
from .model import START, CountModel

KINDS = ("none", "unigram", "bigram", "ambiguity")


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintKind:
    name: str
    lexicon: AmbiguityLexicon | None = None

    def __post_init__(self):
        if self.name not in KINDS:
            raise ConstraintError(f"unknown constraint kind {self.name!r}")
        if self.name == "ambiguity" and self.lexicon is None:
            raise ConstraintError("ambiguity constraint needs a lexicon")

    def __str__(self) -> str:
        return self.name

    def __eq__(self, other):
        if isinstance(other, str):
            return self.name == other
        if isinstance(other, ConstraintKind):
            return self.name == other.name and self.lexicon is other.lexicon
        return NotImplemented

    def __hash__(self):
        return hash(self.name)


NONE = ConstraintKind("none")
UNIGRAM = ConstraintKind("unigram")
BIGRAM = ConstraintKind("bigram")


def signature(model: CountModel, state: int, kind: ConstraintKind,
              vocab: Vocabulary | None = None) -> Hashable:
    """Class key of a live proper state under ``kind``."""
    if not model.is_proper(state):
        raise ConstraintError(f"state {state} is not a live proper state")
    name = kind.name
    if name == "none":
        return ()
    own = model.emitted_tokens(state)
    if name == "unigram":
        return own
    if name == "bigram":
        preds = set()
        from_start = False
        for r in model.incoming[state]:
            if r == START:
                from_start = True
            else:
                preds |= model.emitted_tokens(r)
        return own, frozenset(preds), from_start
    # ambiguity
    lex = kind.lexicon
    tagsets = set()
    for tok in own:
        tags = lex.tags(tok)
        if tags is None:
            word = vocab.lookup(tok) if vocab is not None and tok < len(vocab) else str(tok)
            raise ConstraintError(f"token {word!r} is missing from the ambiguity lexicon")
        tagsets.add(tags)
    if len(tagsets) == 1:
        return tagsets.pop()
    # emitted words disagree: the state gets a class of its own
    return ("unmergeable", state)


@dataclass
class ConstraintPartition:
    classes: list[list[int]]

    @property
    def candidate_count(self) -> int:
        return sum(len(c) * (len(c) - 1) // 2 for c in self.classes)

    def pairs(self):
        for cls in self.classes:
            for i, a in enumerate(cls):
                for b in cls[i + 1:]:
                    yield a, b


def partition(model: CountModel, kind: ConstraintKind, vocab: Vocabulary | None = None) -> ConstraintPartition:
    groups: dict[Hashable, list[int]] = {}
    for q in model.states:
        groups.setdefault(signature(model, q, kind, vocab), []).append(q)
    return ConstraintPartition(sorted(groups.values()))


def candidate_count(class_sizes) -> int:
    return sum(n * (n - 1) // 2 for n in class_sizes)


@dataclass
class ConstraintSchedule:
    """Ordered stages of (kind, merge budget); a budget of None runs the
    stage until no merge is allowed under it."""

    stages: list[tuple[ConstraintKind, int | None]]

    def __post_init__(self):
        if not self.stages:
            raise ConstraintError("schedule needs at least one stage")
        for kind, budget in self.stages:
            if budget is not None and budget <= 0:
                raise ConstraintError(f"stage {kind}: budget must be positive")

    @classmethod
    def parse(cls, text: str, lexicon: AmbiguityLexicon | None = None) -> "ConstraintSchedule":
        """Parse ``"unigram:12500,none"`` style stage lists."""
        stages = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, _, budget = part.partition(":")
            name = name.strip()
            if name not in KINDS:
                raise ConstraintError(f"unknown constraint kind {name!r}")
            kind = ConstraintKind(name, lexicon if name == "ambiguity" else None)
            if budget.strip():
                try:
                    b = int(budget)
                except ValueError:
                    raise ConstraintError(f"bad budget {budget!r}") from None
            else:
                b = None
            stages.append((kind, b))
        return cls(stages)

    def __str__(self) -> str:
        return ",".join(f"{k}:{b}" if b is not None else str(k) for k, b in self.stages)


def advance(schedule: ConstraintSchedule, merges_done: int) -> ConstraintKind:
    """Constraint in force after ``merges_done`` merges, counting budgets
    cumulatively. Unbounded stages absorb every later count."""
    used = 0
    for kind, budget in schedule.stages:
        if budget is None or merges_done < used + budget:
            return kind
        used += budget
    return schedule.stages[-1][0]
