# %% [markdown]
# # Learning to align and generate on a toy corpus
#
# Each toy symbol emits a few frames around its own mean vector. Nothing
# tells the model where symbols start and stop. It only sees symbol
# strings and frame sequences, and it maximizes the exact likelihood.

# %%
import time

import numpy as np

from nhmm.data import ToySpec, compute_norm_stats, generate_toy_corpus
from nhmm.lattice import build_lattice, viterbi
from nhmm.numerics import no_grad
from nhmm.training import RunConfig, Trainer, evaluate_loglik, init_model

spec = ToySpec.random(vocab_size=8, acoustic_dim=4, duration=(3, 8), noise_scale=0.1, seed=0)
corpus = generate_toy_corpus(spec, 200)
norm = compute_norm_stats(corpus[:160])
train, valid = norm.normalize(corpus[:160]), norm.normalize(corpus[160:])
print(len(train), "training utterances,", sum(u.n_frames for u in train), "frames")

# %% [markdown]
# Flat start: every state predicts N(0, I) and the same advance probability,
# so at first all alignments of equal length are equally likely.

# %%
run = RunConfig(states_per_symbol=2, seed=0)
model = init_model(run, spec.vocab_size, spec.acoustic_dim, norm)
print("initial tau:", round(model.initial_tau, 3))


def report(model):
    ll, frames = evaluate_loglik(model, valid)
    accs = []
    with no_grad():
        for u in valid:
            path, _ = viterbi(build_lattice(model, model.encode(u.symbols), u.frames))
            accs.append(np.mean(path.symbols(2) == u.gold))
    return -ll.sum() / frames.sum(), np.mean(accs)


print("flat start: NLL/frame %.3f, alignment accuracy %.3f" % report(model))

# %%
trainer = Trainer(model, train, run)
start = time.perf_counter()
for block in range(4):
    trainer.train(150)
    nll, acc = report(model)
    print(f"update {trainer.update:4d}: NLL/frame {nll:.3f}, accuracy {acc:.3f}, "
          f"{time.perf_counter() - start:.0f}s")

# %% [markdown]
# Compare one validation alignment with the truth. Sub-states are collapsed
# to symbol positions first.

# %%
u = valid[0]
with no_grad():
    path, _ = viterbi(build_lattice(model, model.encode(u.symbols), u.frames))
print("gold     :", "".join(str(g) for g in u.gold))
print("viterbi  :", "".join(str(s) for s in path.symbols(2)))
