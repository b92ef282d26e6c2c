"""Exact likelihood machinery for left-right no-skip neural HMMs.

Conventions: frames and states are 0-based. A path visits state 0 at the
first frame, moves by 0 or 1 state per frame, sits in the last state at the
last frame, and then leaves it. The likelihood therefore includes the final
advance probability ``tau(T-1, N-1)``; see :func:`terminal_factor`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InfeasibleAlignmentError, InputError
from .numerics import tensor as T
from .numerics.tensor import Tensor

NEG_INF = -np.inf


@dataclass
class EmissionLattice:
    """Per-cell emission log-density and log advance/stay probabilities, shape (T, N)."""

    emission: Tensor
    log_tau: Tensor
    log_one_minus_tau: Tensor

    @property
    def n_frames(self):
        return self.emission.shape[0]

    @property
    def n_states(self):
        return self.emission.shape[1]

    @classmethod
    def from_arrays(cls, emission, tau=None, log_tau=None, log_one_minus_tau=None):
        """Build a constant (non-differentiable) lattice from numpy arrays.

        Give either ``tau`` or both log forms.
        """
        emission = np.asarray(emission, dtype=np.float64)
        if tau is not None:
            tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), emission.shape)
            log_tau, log_one_minus_tau = np.log(tau), np.log1p(-tau)
        if log_tau is None or log_one_minus_tau is None:
            raise ContractError("need tau or both log_tau and log_one_minus_tau")
        return cls(
            Tensor(emission),
            Tensor(np.broadcast_to(log_tau, emission.shape).copy()),
            Tensor(np.broadcast_to(log_one_minus_tau, emission.shape).copy()),
        )

    def arrays(self):
        return self.emission.data, self.log_tau.data, self.log_one_minus_tau.data


@dataclass
class Alignment:
    """Frame-to-state map. ``states[t]`` is the 0-based state at frame ``t``."""

    states: np.ndarray
    n_states: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)

    @property
    def n_frames(self):
        return self.states.size

    def is_valid(self):
        """Starts in state 0 and never moves back or skips (local and monotonic)."""
        s = self.states
        if s.size == 0 or s[0] != 0:
            return False
        steps = np.diff(s)
        return bool(np.all((steps == 0) | (steps == 1)))

    def is_complete(self):
        return self.is_valid() and int(self.states[-1]) == self.n_states - 1

    def durations(self):
        return np.bincount(self.states, minlength=self.n_states)

    def symbols(self, states_per_symbol):
        return self.states // states_per_symbol


def check_feasible(n_frames, n_states, utt_id=None):
    if n_frames < n_states:
        raise InfeasibleAlignmentError(n_frames, n_states, utt_id)


# lattice construction ---------------------------------------------------

def build_lattice_batch(model, state_vectors, frames, dropout_on=False, rng=None):
    """Batched lattice tensors ``(emission, log_tau, log_one_minus_tau)``, each (B, T, N).

    ``state_vectors`` is (B, N, S), ``frames`` (B, T, D). The decoder runs
    once per frame on teacher-forced input and its output is shared across
    all states.
    """
    frames = T.as_tensor(frames)
    dec = model.decoder_sequence(frames, dropout_on=dropout_on, rng=rng)  # (B, T, H)
    B, n_frames, H = dec.shape
    N, S = state_vectors.shape[1], state_vectors.shape[2]
    params = model.output_net(
        state_vectors.reshape(B, 1, N, S), dec.reshape(B, n_frames, 1, H)
    )
    D = frames.shape[2]
    emission = T.gaussian_diag_logpdf(frames.reshape(B, n_frames, 1, D), params.mu, params.sigma)
    return emission, params.log_tau, params.log_one_minus_tau


def build_lattice(model, states, frames, dropout_on=False, rng=None) -> EmissionLattice:
    """Lattice for one utterance. ``states`` is a StateVectorSet or (N, S) tensor."""
    vecs = getattr(states, "vectors", states)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ContractError(f"frames must be (T, D), got shape {frames.shape}")
    check_feasible(frames.shape[0], vecs.shape[0])
    N, S = vecs.shape
    em, lt, l1t = build_lattice_batch(
        model, vecs.reshape(1, N, S), frames[None], dropout_on=dropout_on, rng=rng
    )
    shape = (frames.shape[0], N)
    return EmissionLattice(em.reshape(shape), lt.reshape(shape), l1t.reshape(shape))


# forward algorithm ------------------------------------------------------

def terminal_factor(log_tau_last):
    """Log-probability of leaving the last state after the last frame."""
    return log_tau_last


def band_mask(max_frames, max_states, n_frames, n_states):
    """0 inside the feasible band of each item, -inf outside; shape (B, T, N).

    Cell (t, n) is feasible when the state is reachable by frame t (n <= t)
    and the last state is still reachable by the last frame.
    """
    t = np.arange(max_frames)[None, :, None]
    n = np.arange(max_states)[None, None, :]
    last_t = np.asarray(n_frames)[:, None, None] - 1
    last_n = np.asarray(n_states)[:, None, None] - 1
    ok = (n <= t) & (last_n - n <= last_t - t)
    return np.where(ok, 0.0, NEG_INF)


def forward_trellis_batch(emission, log_tau, log_one_minus_tau, n_frames=None, n_states=None):
    """Log forward variables for batched lattices, returned as a (B, T, N) tensor.

    alpha[t, n] = emission[t, n] + lse(alpha[t-1, n] + log(1 - tau[t-1, n]),
                                       alpha[t-1, n-1] + log tau[t-1, n-1])

    Cells outside each item's feasible band are forced to -inf.
    """
    B, max_frames, N = emission.shape
    if n_frames is None:
        n_frames = np.full(B, max_frames)
    if n_states is None:
        n_states = np.full(B, N)
    band = band_mask(max_frames, N, n_frames, n_states)
    alpha = emission[:, 0, :] + band[:, 0, :]
    alphas = [alpha]
    blocked = Tensor(np.full((B, 1), NEG_INF))
    for t in range(1, max_frames):
        stay = alpha + log_one_minus_tau[:, t - 1, :]
        move = alpha + log_tau[:, t - 1, :]
        if N > 1:
            move = T.concat([blocked, move[:, :-1]], axis=1)
        else:
            move = blocked
        alpha = emission[:, t, :] + T.logaddexp(stay, move) + band[:, t, :]
        alphas.append(alpha)
    return T.stack(alphas, axis=1)


def forward_loglik_batch(emission, log_tau, log_one_minus_tau, n_frames, n_states):
    """Per-item exact log-likelihood (B,) for padded batched lattices."""
    n_frames = np.asarray(n_frames, dtype=np.int64)
    n_states = np.asarray(n_states, dtype=np.int64)
    alpha = forward_trellis_batch(emission, log_tau, log_one_minus_tau, n_frames, n_states)
    b = np.arange(alpha.shape[0])
    t_last, n_last = n_frames - 1, n_states - 1
    return alpha[b, t_last, n_last] + terminal_factor(log_tau[b, t_last, n_last])


def forward_trellis(lat: EmissionLattice) -> np.ndarray:
    check_feasible(lat.n_frames, lat.n_states)
    with T.no_grad():
        alpha = forward_trellis_batch(*(_batch1(x) for x in _lat_tensors(lat)))
    return alpha.data[0]


def forward_loglik(lat: EmissionLattice) -> Tensor:
    """Exact log-likelihood summed over every complete monotone alignment.

    Differentiable with respect to all lattice tensors.
    """
    check_feasible(lat.n_frames, lat.n_states)
    out = forward_loglik_batch(
        *(_batch1(x) for x in _lat_tensors(lat)), [lat.n_frames], [lat.n_states]
    )
    return out.reshape(())


def _lat_tensors(lat):
    return lat.emission, lat.log_tau, lat.log_one_minus_tau


def _batch1(x):
    return x.reshape((1,) + x.shape)


# oracles and decoding -----------------------------------------------------

def count_paths(n_frames, n_states):
    return math.comb(n_frames - 1, n_states - 1) if n_frames >= n_states >= 1 else 0


def enumerate_paths(n_frames, n_states):
    """Yield every complete monotone no-skip state path as an int array."""
    for moves in itertools.combinations(range(1, n_frames), n_states - 1):
        steps = np.zeros(n_frames, dtype=np.int64)
        steps[list(moves)] = 1
        yield np.cumsum(steps)


def path_logprob(lat_arrays, path):
    """Log-probability of one path (terms summed with math.fsum)."""
    em, lt, l1t = lat_arrays
    n_frames, N = em.shape
    terms = [em[t, path[t]] for t in range(n_frames)]
    for t in range(n_frames - 1):
        terms.append(lt[t, path[t]] if path[t + 1] > path[t] else l1t[t, path[t]])
    terms.append(lt[n_frames - 1, N - 1])
    return math.fsum(terms)


def brute_force_loglik(lat: EmissionLattice, max_paths=10**6) -> float:
    """Log-likelihood by explicit enumeration of all C(T-1, N-1) paths."""
    check_feasible(lat.n_frames, lat.n_states)
    n_paths = count_paths(lat.n_frames, lat.n_states)
    if n_paths > max_paths:
        raise ContractError(f"{n_paths} paths exceeds the enumeration limit {max_paths}")
    arrays = lat.arrays()
    logps = [path_logprob(arrays, p) for p in enumerate_paths(lat.n_frames, lat.n_states)]
    m = max(logps)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(math.fsum(math.exp(lp - m) for lp in logps))


def viterbi(lat: EmissionLattice):
    """Most probable complete alignment and its log-probability.

    Best continuation scores are computed backwards from the exit; the path
    is then read forwards and only advances when that is strictly better
    than staying, so ties keep the current state.
    """
    check_feasible(lat.n_frames, lat.n_states)
    em, lt, l1t = lat.arrays()
    n_frames, N = em.shape
    band = band_mask(n_frames, N, [n_frames], [N])[0]
    psi = np.full((n_frames, N), NEG_INF)  # best log p(x_{t+1:}, exit | s_t = n)
    psi[-1, -1] = lt[-1, -1]
    stay_best = np.zeros((n_frames, N))
    move_best = np.full((n_frames, N), NEG_INF)
    for t in range(n_frames - 2, -1, -1):
        stay_best[t] = l1t[t] + em[t + 1] + psi[t + 1]
        move_best[t, :-1] = lt[t, :-1] + em[t + 1, 1:] + psi[t + 1, 1:]
        psi[t] = np.maximum(stay_best[t], move_best[t]) + band[t]
    states = np.zeros(n_frames, dtype=np.int64)
    for t in range(n_frames - 1):
        n = states[t]
        states[t + 1] = n + 1 if move_best[t, n] > stay_best[t, n] else n
    return Alignment(states, N), float(em[0, 0] + psi[0, 0])


def backward_trellis(lat: EmissionLattice) -> np.ndarray:
    """beta[t, n] = log p(x_{t+1:}, exit | s_t = n)."""
    em, lt, l1t = lat.arrays()
    n_frames, N = em.shape
    beta = np.full((n_frames, N), NEG_INF)
    beta[-1, -1] = lt[-1, -1]
    for t in range(n_frames - 2, -1, -1):
        stay = l1t[t] + em[t + 1] + beta[t + 1]
        move = np.full(N, NEG_INF)
        move[:-1] = lt[t, :-1] + em[t + 1, 1:] + beta[t + 1, 1:]
        beta[t] = np.logaddexp(stay, move)
    return beta


def occupancy_posterior(lat: EmissionLattice) -> np.ndarray:
    """gamma[t, n] = P(s_t = n | all frames), shape (T, N)."""
    alpha = forward_trellis(lat)
    beta = backward_trellis(lat)
    loglik = alpha[-1, -1] + lat.log_tau.data[-1, -1]
    with np.errstate(invalid="ignore"):
        gamma = np.exp(alpha + beta - loglik)
    return np.nan_to_num(gamma, nan=0.0)


def brute_force_occupancy(lat: EmissionLattice) -> np.ndarray:
    arrays = lat.arrays()
    paths = list(enumerate_paths(lat.n_frames, lat.n_states))
    logps = np.array([path_logprob(arrays, p) for p in paths])
    w = np.exp(logps - logps.max())
    w /= w.sum()
    gamma = np.zeros((lat.n_frames, lat.n_states))
    for p, wi in zip(paths, w):
        gamma[np.arange(lat.n_frames), p] += wi
    return gamma


# loss ---------------------------------------------------------------------

@dataclass
class LossResult:
    loss: Tensor  # scalar to differentiate
    nll: float  # mean over items of -loglik
    nll_per_frame: float  # total -loglik / total frames
    logliks: np.ndarray
    n_frames: np.ndarray
    skipped: list = field(default_factory=list)


def pad_batch(items, states_per_symbol):
    """Stack (symbols, frames) pairs into padded arrays."""
    sym_lens = np.array([len(s) for s, _ in items], dtype=np.int64)
    frame_lens = np.array([f.shape[0] for _, f in items], dtype=np.int64)
    B, D = len(items), items[0][1].shape[1]
    ids = np.zeros((B, sym_lens.max()), dtype=np.int64)
    frames = np.zeros((B, frame_lens.max(), D))
    for i, (s, f) in enumerate(items):
        ids[i, : len(s)] = s
        frames[i, : f.shape[0]] = f
    return ids, sym_lens, frames, frame_lens, sym_lens * states_per_symbol


def _as_pair(item):
    if hasattr(item, "symbols") and hasattr(item, "frames"):
        return getattr(item, "id", None), np.asarray(item.symbols), np.asarray(item.frames, dtype=np.float64)
    symbols, frames = item
    return None, np.asarray(symbols), np.asarray(frames, dtype=np.float64)


def batch_loglik(model, items, dropout_on=False, rng=None):
    """Differentiable per-item log-likelihoods (B,) for feasible items."""
    K = model.cfg.states_per_symbol
    pairs = [(model.check_symbols(s), f) for s, f in items]
    for i, (s, f) in enumerate(pairs):
        check_feasible(f.shape[0], K * len(s), i)
    ids, sym_lens, frames, frame_lens, state_lens = pad_batch(pairs, K)
    vecs = model.encode_batch(ids, sym_lens)
    em, lt, l1t = build_lattice_batch(model, vecs, frames, dropout_on=dropout_on, rng=rng)
    return forward_loglik_batch(em, lt, l1t, frame_lens, state_lens), frame_lens


def nll_loss(model, batch, per_frame=False, dropout_on=False, rng=None, skip_infeasible=False):
    """Negative log-likelihood of a batch of (symbols, frames) items.

    The differentiable ``loss`` is the mean NLL per utterance, or the total
    NLL divided by the total frame count when ``per_frame`` is set; both
    figures are reported. Infeasible items (fewer frames than states) raise,
    or are skipped and listed when ``skip_infeasible`` is set.
    """
    K = model.cfg.states_per_symbol
    keep, skipped = [], []
    for i, item in enumerate(batch):
        utt_id, symbols, frames = _as_pair(item)
        if frames.shape[0] < K * len(symbols):
            if not skip_infeasible:
                raise InfeasibleAlignmentError(frames.shape[0], K * len(symbols), utt_id if utt_id is not None else i)
            skipped.append(utt_id if utt_id is not None else i)
            continue
        keep.append((symbols, frames))
    if not keep:
        raise InputError("no feasible items in batch")
    ll, frame_lens = batch_loglik(model, keep, dropout_on=dropout_on, rng=rng)
    total = -ll.sum()
    loss = total * (1.0 / frame_lens.sum()) if per_frame else total * (1.0 / len(keep))
    lls = ll.data.copy()
    return LossResult(
        loss=loss,
        nll=float(-lls.mean()),
        nll_per_frame=float(-lls.sum() / frame_lens.sum()),
        logliks=lls,
        n_frames=frame_lens,
        skipped=skipped,
    )


# alignment export -----------------------------------------------------------

def format_alignment(alignment: Alignment, states_per_symbol, header=None) -> str:
    """One line per frame: frame, state, symbol, sub-state (tab separated, 0-based)."""
    lines = [f"# {header}"] if header else []
    K = states_per_symbol
    for t, s in enumerate(alignment.states):
        lines.append(f"{t}\t{s}\t{s // K}\t{s % K}")
    return "\n".join(lines) + "\n"


def parse_alignment(text, n_states=None) -> Alignment:
    states = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4 or int(fields[0]) != len(states):
            raise InputError(f"malformed alignment line {lineno}: {line!r}")
        states.append(int(fields[1]))
    states = np.array(states, dtype=np.int64)
    return Alignment(states, int(n_states if n_states is not None else states.max() + 1))
