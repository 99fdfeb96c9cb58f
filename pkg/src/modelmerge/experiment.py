"""Experiment orchestration: bigram baselines, merging runs, evaluation and
synthetic corpora. The CLI in :mod:`modelmerge.cli` is a thin layer over
these functions."""

from __future__ import annotations

import dataclasses
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import ConstraintSchedule
from .corpus import AmbiguityLexicon, Corpus, Vocabulary, read_corpus, read_lexicon, write_corpus
from .inference import EvaluationReport, Mode, OOVPolicy, evaluate_corpus
from .merging import (MergeTrace, StopCriterion, build_trivial_model, premerge_affixes,
                      run_merging)
from .model import CountModel, probabilities, read_model, validate, write_model
from .ngram import build_bigram, smooth_view


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class RunConfig:
    train_path: str | None = None
    test_path: str | None = None
    extra_test_path: str | None = None
    lexicon_path: str | None = None
    schedule: str = "unigram,none"
    stop: str = "held_out_minimum:1000"
    start: str = "trivial"
    mode: str = "viterbi"
    oov_policy: str = "floor"
    smoothing_alpha: float = 0.0
    log_every: int = 100
    reviterbi_every: int = 0
    seed: int = 0
    output_dir: str = "."

    def validate(self) -> None:
        if self.start not in ("trivial", "bigram"):
            raise ConfigError(f"start must be 'trivial' or 'bigram', not {self.start!r}")
        try:
            Mode(self.mode)
            OOVPolicy(self.oov_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.smoothing_alpha < 0:
            raise ConfigError("smoothing_alpha must be >= 0")
        for name in ("train_path", "test_path", "extra_test_path", "lexicon_path"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"{name}: no such file: {path}")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values: dict[str, object] = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in fields:
                raise ConfigError(f"config line {lineno}: unknown or malformed entry {line!r}")
            values[key] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        cfg = cls()
        for f in dataclasses.fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            try:
                if f.name in ("log_every", "reviterbi_every", "seed"):
                    raw = int(raw)
                elif f.name == "smoothing_alpha":
                    raw = float(raw)
                else:
                    raw = str(raw)
            except ValueError:
                raise ConfigError(f"bad value for {f.name}: {raw!r}") from None
            setattr(cfg, f.name, raw)
        return cfg


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_corpus(path: str | Path, vocab: Vocabulary | None = None) -> tuple[Vocabulary, Corpus]:
    data = Path(path).read_bytes()
    try:
        return read_corpus(data, vocab)
    except ValueError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def evaluate(model: CountModel, corpus: Corpus, mode: str = "viterbi", oov_policy: str = "floor",
             smoothing_alpha: float = 0.0) -> EvaluationReport:
    view = smooth_view(model, smoothing_alpha) if smoothing_alpha > 0 else probabilities(model)
    return evaluate_corpus(view, corpus, mode, oov_policy)


def check_invariants(model: CountModel, n_tokens: int, n_utterances: int) -> None:
    problems = validate(model)
    if model.total_emissions() != n_tokens:
        problems.append(f"emission total {model.total_emissions()} != corpus tokens {n_tokens}")
    if sum(model.trans[0].values()) != n_utterances:
        problems.append("start row total differs from the number of utterances")
    if problems:
        raise InvariantViolation("; ".join(problems))


def format_report(name: str, report: EvaluationReport) -> str:
    flag = " (infinite: zero-probability utterances)" if report.infinite else ""
    return (f"{name}: N={report.token_count} log10P={report.total_log10_prob!r} "
            f"LP={report.log_perplexity!r} PP={report.perplexity!r} OOV={report.oov_tokens}{flag}")


@dataclass
class RunResult:
    model: CountModel
    vocab: Vocabulary
    trace: MergeTrace | None = None
    reports: dict[str, EvaluationReport] = field(default_factory=dict)
    summary: str = ""


def _eval_sets(cfg: RunConfig, vocab: Vocabulary) -> dict[str, Corpus]:
    sets = {}
    for name, path in (("test", cfg.test_path), ("extra_test", cfg.extra_test_path)):
        if path:
            sets[name] = load_corpus(path, vocab)[1]
    return sets


def cmd_bigram(cfg: RunConfig) -> RunResult:
    cfg.validate()
    if not cfg.train_path:
        raise ConfigError("train_path is required")
    vocab, train = load_corpus(cfg.train_path)
    model, _ = build_bigram(train, len(vocab))
    check_invariants(model, train.total_tokens, train.total_utterances)
    reports = {"train": evaluate(model, train, cfg.mode, cfg.oov_policy, cfg.smoothing_alpha)}
    for name, corpus in _eval_sets(cfg, vocab).items():
        reports[name] = evaluate(model, corpus, cfg.mode, cfg.oov_policy, cfg.smoothing_alpha)
    atomic_write(Path(cfg.output_dir) / "bigram.model", write_model(model, vocab))
    lines = [f"states={model.n_states}"] + [format_report(k, r) for k, r in reports.items()]
    return RunResult(model, vocab, None, reports, "\n".join(lines) + "\n")


def cmd_merge(cfg: RunConfig) -> RunResult:
    cfg.validate()
    if not cfg.train_path:
        raise ConfigError("train_path is required")
    vocab, train = load_corpus(cfg.train_path)
    lexicon: AmbiguityLexicon | None = None
    if cfg.lexicon_path:
        lexicon = read_lexicon(Path(cfg.lexicon_path).read_bytes(), vocab)
    schedule = ConstraintSchedule.parse(cfg.schedule, lexicon)
    try:
        stop = StopCriterion.parse(cfg.stop)
    except ValueError as exc:
        raise ConfigError(f"stop: {exc}") from None
    eval_sets = _eval_sets(cfg, vocab)
    test = eval_sets.get("test")
    if stop.variant == "held_out_minimum" and test is None:
        raise ConfigError("held_out_minimum stopping needs test_path")

    trace = MergeTrace()
    if cfg.start == "trivial":
        model, paths = build_trivial_model(train, len(vocab))
        premerge_affixes(model, paths, trace)
    else:
        model, paths = build_bigram(train, len(vocab))
    run_merging(model, paths, schedule, stop, test, cfg.log_every, trace,
                mode=cfg.mode, oov_policy=cfg.oov_policy, smoothing_alpha=cfg.smoothing_alpha,
                vocab=vocab, reviterbi_every=cfg.reviterbi_every)
    check_invariants(model, train.total_tokens, train.total_utterances)
    best = trace.best_model if trace.best_model is not None else model
    check_invariants(best, train.total_tokens, train.total_utterances)

    reports = {"train": evaluate(best, train, cfg.mode, cfg.oov_policy, cfg.smoothing_alpha)}
    for name, corpus in eval_sets.items():
        reports[name] = evaluate(best, corpus, cfg.mode, cfg.oov_policy, cfg.smoothing_alpha)

    out = Path(cfg.output_dir)
    atomic_write(out / "merged.model", write_model(best, vocab))
    atomic_write(out / "trace.csv", trace.to_csv())
    lines = [
        f"start={cfg.start} schedule={schedule} stop={stop}",
        f"premerges={trace.premerges} merges={len(trace)} stop_reason={trace.stop_reason}",
        f"best_merge={trace.best_merge} final_states={best.n_states}",
        f"train_viterbi_count_lp={-best.loglik() / (math.log(10) * train.total_tokens)!r}",
    ]
    if trace.stop_reason == "constraint_exhausted" and stop.variant != "held_out_minimum":
        lines.append("warning: constraints exhausted before the stop criterion fired")
    lines += [format_report(k, r) for k, r in reports.items()]
    summary = "\n".join(lines) + "\n"
    atomic_write(out / "summary.txt", summary)
    return RunResult(best, vocab, trace, reports, summary)


def cmd_eval(model_path: str, corpus_path: str, mode: str = "viterbi", oov_policy: str = "floor",
             smoothing_alpha: float = 0.0) -> EvaluationReport:
    model, vocab = read_model(Path(model_path).read_text(encoding="utf-8"))
    _, corpus = load_corpus(corpus_path, vocab)
    return evaluate(model, corpus, mode, oov_policy, smoothing_alpha)


def inspect_model(model: CountModel, vocab: Vocabulary) -> str:
    n_trans = sum(1 for q in [0, *model.states] for c in model.trans[q].values() if c)
    n_emit = sum(len(model.emit[q]) for q in model.states)
    sizes = sorted((len(model.emit[q]) for q in model.states), reverse=True)
    lines = [
        f"states={model.n_states} vocab={len(vocab)}",
        f"transitions={n_trans} emissions={n_emit}",
        f"tokens={model.total_emissions()} utterances={sum(model.trans[0].values())}",
        f"viterbi_count_loglik={model.loglik()!r}",
        f"largest_output_sets={sizes[:10]}",
    ]
    problems = validate(model)
    lines.append("valid" if not problems else "violations: " + "; ".join(problems))
    return "\n".join(lines) + "\n"


# synthetic data ---------------------------------------------------------------

def _integer_row(probs: np.ndarray, scale: int) -> np.ndarray:
    """Largest-remainder rounding of probabilities to counts summing to ``scale``."""
    raw = probs * scale
    counts = np.floor(raw).astype(np.int64)
    short = scale - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def random_generator(n_states: int, alphabet: int, seed: int, *, fanout: int = 3,
                     outputs: int = 5, scale: int = 10000) -> tuple[CountModel, Vocabulary]:
    """Random sparse Markov model with integer weights summing to ``scale``
    per row. Every word of the alphabet is emitted by at least one state."""
    if n_states < 1 or alphabet < 1:
        raise ConfigError("states and alphabet must be positive")
    rng = np.random.default_rng(seed)
    vocab = Vocabulary()
    width = len(str(alphabet - 1))
    for i in range(alphabet):
        vocab.intern(f"w{i:0{width}d}")
    model = CountModel(vocab_size=alphabet)
    ids = [model.new_state() for _ in range(n_states)]

    n_init = min(n_states, 3)
    init = rng.choice(n_states, size=n_init, replace=False)
    for q, c in zip(init, _integer_row(rng.dirichlet(np.ones(n_init)), scale)):
        if c:
            model.add_transition(0, ids[q], int(c))

    owners = {w: {w % n_states} for w in range(alphabet)}
    for q in range(n_states):
        for w in rng.choice(alphabet, size=min(outputs, alphabet), replace=False):
            owners[int(w)].add(q)
    emits: dict[int, list[int]] = {q: [] for q in range(n_states)}
    for w, qs in owners.items():
        for q in qs:
            emits[q].append(w)
    for q in range(n_states):
        words = sorted(emits[q])
        for w, c in zip(words, _integer_row(rng.dirichlet(np.ones(len(words))), scale)):
            if c:
                model.add_emission(ids[q], w, int(c))
        k = min(fanout, n_states)
        succ = sorted(rng.choice(n_states, size=k, replace=False))
        p_end = rng.uniform(0.1, 0.3)
        probs = np.append(rng.dirichlet(np.ones(k)) * (1 - p_end), p_end)
        for s, c in zip([ids[i] for i in succ] + [1], _integer_row(probs, scale)):
            if c:
                model.add_transition(ids[q], s, int(c))
    # states that emit nothing after rounding cannot exist: each row sums to scale
    return model, vocab


def sample_utterances(model: CountModel, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    rows = {}
    for q in [0, *model.states]:
        targets = sorted(model.trans[q])
        w = np.array([model.trans[q][t] for t in targets], dtype=float)
        rows[q] = (targets, w / w.sum())
    emits = {}
    for q in model.states:
        toks = sorted(model.emit[q])
        w = np.array([model.emit[q][t] for t in toks], dtype=float)
        emits[q] = (toks, w / w.sum())
    out = []
    for _ in range(n):
        q, seq = 0, []
        while True:
            targets, p = rows[q]
            q = targets[rng.choice(len(targets), p=p)]
            if q == 1:
                break
            toks, pe = emits[q]
            seq.append(toks[rng.choice(len(toks), p=pe)])
        out.append(tuple(seq))
    return out


def cmd_synth(states: int, alphabet: int, utterances: int, seed: int, output_dir: str | Path = ".",
              test_utterances: int = 0) -> dict[str, Path]:
    """Sample a generator model and corpora from it; returns written paths."""
    if utterances < 1 or test_utterances < 0:
        raise ConfigError("utterance counts must be positive")
    model, vocab = random_generator(states, alphabet, seed)
    rng = np.random.default_rng([seed, 1])
    out = Path(output_dir)
    written = {}
    train = Corpus.from_sequences(sample_utterances(model, utterances, rng))
    atomic_write(out / "train.txt", write_corpus(train, vocab))
    written["train"] = out / "train.txt"
    if test_utterances:
        test = Corpus.from_sequences(sample_utterances(model, test_utterances, rng))
        atomic_write(out / "test.txt", write_corpus(test, vocab))
        written["test"] = out / "test.txt"
    atomic_write(out / "generator.model", write_model(model, vocab))
    written["generator"] = out / "generator.model"
    return written

