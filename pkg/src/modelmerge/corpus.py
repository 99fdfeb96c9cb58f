"""Corpus and lexicon ingestion.

Corpora are read as one utterance per line with whitespace-separated
tokens. Identical utterances are folded into a single entry carrying a
multiplicity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Raised for malformed or empty corpus and lexicon input."""


class EmptyCorpusError(CorpusError):
    pass


@dataclass
class Vocabulary:
    words: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def intern(self, word: str) -> int:
        idx = self.index.get(word)
        if idx is None:
            idx = len(self.words)
            self.words.append(word)
            self.index[word] = idx
        return idx

    def lookup(self, idx: int) -> str:
        return self.words[idx]

    def get(self, word: str) -> int | None:
        return self.index.get(word)

    def copy(self) -> "Vocabulary":
        return Vocabulary(list(self.words), dict(self.index))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index


@dataclass
class Corpus:
    """Distinct utterances (tuples of token ids) with multiplicities."""

    utterances: list[tuple[tuple[int, ...], int]] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(len(seq) * mult for seq, mult in self.utterances)

    @property
    def total_utterances(self) -> int:
        return sum(mult for _, mult in self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def token_types(self) -> set[int]:
        return {t for seq, _ in self.utterances for t in seq}

    def as_multiset(self) -> dict[tuple[int, ...], int]:
        return dict(self.utterances)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Iterable[int]]) -> "Corpus":
        counts: dict[tuple[int, ...], int] = {}
        for seq in sequences:
            seq = tuple(seq)
            if not seq:
                continue
            counts[seq] = counts.get(seq, 0) + 1
        return cls(list(counts.items()))


def _decode(text: str | bytes) -> str:
    if isinstance(text, str):
        return text
    try:
        return text.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"invalid UTF-8 at byte offset {exc.start}") from exc


def read_corpus(text: str | bytes, vocab: Vocabulary | None = None) -> tuple[Vocabulary, Corpus]:
    """Parse a corpus, interning tokens.

    When ``vocab`` is given, tokens are interned into a copy of it, so ids of
    known words are preserved and unseen words receive ids past the end.
    """
    text = _decode(text)
    vocab = Vocabulary() if vocab is None else vocab.copy()
    counts: dict[tuple[int, ...], int] = {}
    for line in text.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        seq = tuple(vocab.intern(tok) for tok in tokens)
        counts[seq] = counts.get(seq, 0) + 1
    if not counts:
        raise EmptyCorpusError("corpus contains no utterances")
    return vocab, Corpus(list(counts.items()))


def write_corpus(corpus: Corpus, vocab: Vocabulary) -> str:
    """Serialize with multiplicities expanded, one utterance per line."""
    lines = []
    for seq, mult in corpus.utterances:
        line = " ".join(vocab.lookup(t) for t in seq)
        lines.extend([line] * mult)
    return "".join(line + "\n" for line in lines)


@dataclass
class AmbiguityLexicon:
    entries: dict[int, frozenset[str]] = field(default_factory=dict)
    unknown_words: dict[str, frozenset[str]] = field(default_factory=dict)

    @property
    def warning_count(self) -> int:
        return len(self.unknown_words)

    def tags(self, token: int) -> frozenset[str] | None:
        return self.entries.get(token)


def read_lexicon(text: str | bytes, vocab: Vocabulary) -> AmbiguityLexicon:
    """Parse ``word TAB tag (TAB tag)*`` lines.

    Words missing from ``vocab`` are kept aside in ``unknown_words`` and
    counted as warnings.
    """
    text = _decode(text)
    lex = AmbiguityLexicon()
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        word, tags = parts[0], [t for t in parts[1:] if t]
        if not word or not tags:
            raise CorpusError(f"lexicon line {lineno}: expected 'word<TAB>tag...'")
        if word in seen:
            raise CorpusError(f"lexicon line {lineno}: duplicate entry for {word!r}")
        seen.add(word)
        idx = vocab.get(word)
        if idx is None:
            lex.unknown_words[word] = frozenset(tags)
        else:
            lex.entries[idx] = frozenset(tags)
    if lex.unknown_words:
        logger.warning("%d lexicon words are not in the vocabulary", lex.warning_count)
    return lex
