"""
Held-out perplexity while merging
=================================

Sample a corpus from a random 12-state generator, merge from the trivial
model and record train and test log perplexity.  The bigram baseline is
printed for comparison and the curve is written to ``curve.csv``.

Takes about a minute.
"""

import sys
import tempfile
from pathlib import Path

from modelmerge.experiment import RunConfig, cmd_bigram, cmd_merge, cmd_synth

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
files = cmd_synth(12, 30, 800, seed=0, output_dir=out, test_utterances=200)

common = dict(train_path=str(files["train"]), test_path=str(files["test"]), smoothing_alpha=0.1, output_dir=str(out))

# the baseline: one state per word
print(cmd_bigram(RunConfig(**common)).summary)

# merging with the unigram constraint first, then without
result = cmd_merge(RunConfig(**common, schedule="unigram,none", stop="held_out_minimum:1000", log_every=10))
print(result.summary)

# trace.csv has a test value every 10 merges; keep only those rows
rows = [r for r in (out / "trace.csv").read_text().splitlines()[1:] if r.split(",")[3]]
(out / "curve.csv").write_text("merge,states,train_lp,test_lp\n"
                              + "".join(",".join(r.split(",")[:4]) + "\n" for r in rows))
print(f"{len(rows)} curve points written to {out / 'curve.csv'}")
