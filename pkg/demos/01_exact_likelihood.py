# %% [markdown]
# # Exact likelihood over all monotonic alignments
#
# A left-right no-skip HMM with N states can align T frames in C(T-1, N-1)
# ways. The forward recursion sums all of them in O(T N) time. Here we
# compare it against explicit enumeration on a small lattice, then look at
# the trellis band and the state occupancies.

# %%
import math

import numpy as np

from nhmm.lattice import (
    EmissionLattice,
    brute_force_loglik,
    count_paths,
    forward_loglik,
    forward_trellis,
    occupancy_posterior,
    viterbi,
)

rng = np.random.default_rng(0)
n_frames, n_states = 8, 4
lattice = EmissionLattice.from_arrays(
    rng.normal(0, 2, size=(n_frames, n_states)),
    tau=rng.uniform(0.1, 0.9, size=(n_frames, n_states)),
)
print("paths:", count_paths(n_frames, n_states))
print("forward     :", forward_loglik(lattice).item())
print("enumeration :", brute_force_loglik(lattice))

# %% [markdown]
# Cells that cannot lie on a complete path stay at exactly -inf. States
# above the diagonal are unreachable yet, and states too far behind can no
# longer reach the end in time.

# %%
np.set_printoptions(precision=2, suppress=True)
print(forward_trellis(lattice))

# %% [markdown]
# Occupancy posteriors are the gradient of the log-likelihood with respect
# to the emission scores. Each row sums to one.

# %%
gamma = occupancy_posterior(lattice)
print(gamma)
print("row sums:", gamma.sum(axis=1))

# %% [markdown]
# The single best path is never more likely than the sum over all paths.

# %%
path, best = viterbi(lattice)
print("viterbi path:", path.states, "log p =", round(best, 3))
print("share of total probability:", math.exp(best - forward_loglik(lattice).item()))
