# %% [markdown]
# # Speaking-rate control with duration quantiles
#
# Every state has an implicit duration distribution defined by its advance
# probabilities. Deterministic generation leaves a state once that
# distribution's CDF reaches a threshold q, so q acts as a rate knob.

# %%
import numpy as np

from nhmm.model import ModelConfig, flat_start_init
from nhmm.synthesis import SynthesisOptions, quantile_duration, rate_report, synthesize

# %% [markdown]
# With a constant advance probability the rule has a closed form,
# d = min{d : 1 - (1 - tau)^d >= q}.

# %%
qs = (0.1, 0.3, 0.5, 0.7, 0.9)
print("tau \\ q " + " ".join(f"{q:>4}" for q in qs))
for tau in (0.1, 0.3, 0.5):
    print(f"{tau:<7} " + " ".join(f"{quantile_duration(tau, q):>4}" for q in qs))

# %% [markdown]
# The same holds for a whole utterance from a flat-start model.

# %%
model = flat_start_init(ModelConfig(vocab_size=5, acoustic_dim=3), initial_tau=0.2)
for q in qs:
    result = synthesize(model, [0, 1, 2], SynthesisOptions(q=q))
    print(f"q={q}: {result.n_frames:3d} frames, per state {result.durations.tolist()}")

# %% [markdown]
# Thresholds can also be set per state, for instance to lengthen the last
# symbol only.

# %%
result = synthesize(model, [0, 1, 2], SynthesisOptions(q=0.5, state_q={4: 0.9, 5: 0.9}))
print(rate_report(result))

# %% [markdown]
# Sampled durations instead follow the geometric law of a constant advance
# probability.

# %%
sampled = []
for seed in range(20):
    r = synthesize(model, np.arange(50) % 5, SynthesisOptions(duration_mode="sampled", seed=seed))
    sampled.extend(r.durations.tolist())
sampled = np.array(sampled)
print("mean sampled duration %.2f (geometric mean 1/tau = 5.00)" % sampled.mean())
