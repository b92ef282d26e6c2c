# %% [markdown]
# # End to end through the command line
#
# The same workflow as the other demos, driven through ``nhmm`` subcommands
# and the files they exchange: a toy corpus with manifests, a key=value
# config, checkpoints, and synthesized MELBIN features.

# %%
import tempfile
from pathlib import Path

from nhmm.cli import main
from nhmm.data import load_melbin

work = Path(tempfile.mkdtemp())
main(["make-toy", "--out-dir", str(work), "--count", "60", "--valid-count", "10", "--seed", "1"])
print((work / "config.txt").read_text())

# %%
main(["train", "--config", str(work / "config.txt"), "--max-updates", "300"])
print((work / "run" / "valid_log.tsv").read_text())

# %%
ckpt = work / "run" / "latest.nhmc"
main(["inspect", "--checkpoint", str(ckpt)])

# %%
main(["align", "--checkpoint", str(ckpt), "--manifest", str(work / "valid.tsv"), "--out-dir", str(work / "align")])

# %%
for q in ("0.3", "0.7"):
    main(["synth", "--checkpoint", str(ckpt), "--text", "s0 s3 s5", "--q", q,
          "--out-dir", str(work / "synth"), "--name", f"q{q}"])
    frames = load_melbin(work / "synth" / f"q{q}.melbin")
    print(f"q={q}: {frames.shape[0]} frames of dimension {frames.shape[1]}")
print((work / "synth" / "q0.7.rate.txt").read_text())
