"""Command-line interface: ``modelmerge {bigram,merge,eval,synth,inspect}``.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .constraints import ConstraintError
from .corpus import CorpusError
from .experiment import (ConfigError, InvariantViolation, RunConfig, cmd_bigram, cmd_eval,
                         cmd_merge, cmd_synth, format_report, inspect_model)
from .model import ModelError, read_model

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--train-path", "--train")
    p.add_argument("--test-path", "--test")
    p.add_argument("--extra-test-path", "--extra-test")
    p.add_argument("--lexicon-path", "--lexicon")
    p.add_argument("--schedule", help="constraint stages, e.g. 'unigram:12500,none'")
    p.add_argument("--stop", help="train_lp_threshold:X | target_states:N | max_merges:N | held_out_minimum:PATIENCE")
    p.add_argument("--start", choices=["trivial", "bigram"])
    p.add_argument("--mode", choices=["forward", "viterbi"])
    p.add_argument("--oov-policy", choices=["strict", "floor"])
    p.add_argument("--smoothing-alpha", type=float)
    p.add_argument("--log-every", type=int)
    p.add_argument("--reviterbi-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")


def _config(args) -> RunConfig:
    keys = [f for f in RunConfig.__dataclass_fields__]
    overrides = {k: getattr(args, k, None) for k in keys}
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    return RunConfig.from_text(text, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelmerge", description="Markov model induction by state merging")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bigram", help="build and evaluate a word bigram baseline")
    _run_flags(p)
    p = sub.add_parser("merge", help="induce a model by greedy state merging")
    _run_flags(p)

    p = sub.add_parser("eval", help="score a corpus with a model file")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=["forward", "viterbi"], default="viterbi")
    p.add_argument("--oov-policy", choices=["strict", "floor"], default="floor")
    p.add_argument("--smoothing-alpha", "--alpha", type=float, default=0.0)

    p = sub.add_parser("synth", help="sample a synthetic corpus from a random model")
    p.add_argument("--states", type=int, default=12)
    p.add_argument("--alphabet", type=int, default=30)
    p.add_argument("--utterances", type=int, default=800)
    p.add_argument("--test-utterances", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")

    p = sub.add_parser("inspect", help="print model statistics")
    p.add_argument("model")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bigram":
            print(cmd_bigram(_config(args)).summary, end="")
        elif args.command == "merge":
            print(cmd_merge(_config(args)).summary, end="")
        elif args.command == "eval":
            report = cmd_eval(args.model, args.corpus, args.mode, args.oov_policy, args.smoothing_alpha)
            print(format_report("eval", report))
        elif args.command == "synth":
            written = cmd_synth(args.states, args.alphabet, args.utterances, args.seed,
                                args.output_dir, args.test_utterances)
            for name, path in written.items():
                print(f"{name}: {path}")
        elif args.command == "inspect":
            model, vocab = read_model(Path(args.model).read_text(encoding="utf-8"))
            print(inspect_model(model, vocab), end="")
    except (ConfigError, ConstraintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CorpusError, ModelError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
