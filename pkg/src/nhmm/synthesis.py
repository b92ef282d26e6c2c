"""Frame-by-frame generation from a trained neural HMM.

Each step runs the decoder on the previous output frame, evaluates the
output network for the current state only, emits a frame (the mean or a
sample) and then decides whether to move to the next state. Generation ends
when the last state is left or the frame cap is hit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lattice import Alignment
from .numerics.tensor import no_grad

ACOUSTIC_MODES = ("mean", "sampled")
DURATION_MODES = ("quantile", "sampled")
# Speaking-rate thresholds tuned for one and two states per symbol.
DEFAULT_QUANTILE = {1: 0.45, 2: 0.57}
# Absorbs rounding in tau's logit round trip when 1 - S_d lands exactly on q.
QUANTILE_TOLERANCE = 1e-12


def default_quantile(states_per_symbol):
    return DEFAULT_QUANTILE.get(states_per_symbol, DEFAULT_QUANTILE[2])


@dataclass
class SynthesisOptions:
    acoustic_mode: str = "mean"
    duration_mode: str = "quantile"
    q: float | None = None  # None: default for the model's states_per_symbol
    state_q: dict = field(default_factory=dict)
    max_frames: int | None = None  # None: 30 frames per state
    seed: int = 0
    dropout: bool = True

    def __post_init__(self):
        if self.acoustic_mode not in ACOUSTIC_MODES:
            raise ConfigError(f"acoustic_mode must be one of {ACOUSTIC_MODES}, got {self.acoustic_mode!r}")
        if self.duration_mode not in DURATION_MODES:
            raise ConfigError(f"duration_mode must be one of {DURATION_MODES}, got {self.duration_mode!r}")
        for q in [self.q, *self.state_q.values()]:
            if q is not None and not 0.0 < q < 1.0:
                raise ConfigError(f"quantile threshold must lie in (0, 1), got {q}")


@dataclass
class SynthesisResult:
    frames: np.ndarray  # (T, D), in the model's normalized feature space
    alignment: Alignment
    taus: np.ndarray  # advance probability at each frame
    reason: str  # "completed" or "cap_reached"
    states_per_symbol: int

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def durations(self):
        return self.alignment.durations()


def quantile_advance(tau_history, q):
    """True once the implied duration CDF 1 - prod(1 - tau_i) reaches ``q``.

    ``tau_history`` holds the advance probabilities of the frames spent so far
    in the current state (most recent last).
    """
    log_survival = float(np.sum(np.log1p(-np.asarray(tau_history, dtype=np.float64))))
    return _quantile_reached(log_survival, q)


def _quantile_reached(log_survival, q):
    return -np.expm1(log_survival) >= q - QUANTILE_TOLERANCE


def quantile_duration(tau, q):
    """Frames spent in a state with constant ``tau`` under the quantile rule."""
    d, log_survival = 0, 0.0
    while True:
        d += 1
        log_survival += np.log1p(-tau)
        if _quantile_reached(log_survival, q):
            return d


def sampled_advance(tau, rng):
    """Bernoulli(tau) draw from ``rng``."""
    return bool(rng.random() < tau)


def synthesize(model, symbols, opts: SynthesisOptions | None = None) -> SynthesisResult:
    opts = opts or SynthesisOptions()
    K = model.cfg.states_per_symbol
    q_default = opts.q if opts.q is not None else default_quantile(K)
    rng = np.random.default_rng(opts.seed)
    with no_grad():
        states = model.encode(symbols).vectors
        N = states.shape[0]
        cap = opts.max_frames if opts.max_frames is not None else 30 * N
        if cap < N:
            raise ConfigError(f"max_frames {cap} is below the state count {N}")
        dec = model.initial_decoder_state()
        prev = None
        s, log_survival = 0, 0.0
        frames, path, taus = [], [], []
        reason = "cap_reached"
        while len(frames) < cap:
            dec = model.decoder_advance(prev, dec, dropout_on=opts.dropout, rng=rng)
            p = model.output_net(states[s], dec.h)
            mu, sigma = p.mu.data, p.sigma.data
            if opts.acoustic_mode == "mean":
                x = mu.copy()
            else:
                x = mu + sigma * rng.standard_normal(mu.shape)
            frames.append(x)
            path.append(s)
            taus.append(float(np.exp(p.log_tau.data)))
            prev = x
            if opts.duration_mode == "quantile":
                log_survival += float(p.log_one_minus_tau.data)
                advance = _quantile_reached(log_survival, opts.state_q.get(s, q_default))
            else:
                advance = sampled_advance(taus[-1], rng)
            if advance:
                s += 1
                log_survival = 0.0
                if s == N:
                    reason = "completed"
                    break
    return SynthesisResult(
        frames=np.array(frames),
        alignment=Alignment(np.array(path), N),
        taus=np.array(taus),
        reason=reason,
        states_per_symbol=K,
    )


def rate_report(result: SynthesisResult) -> dict:
    """Per-state and per-symbol durations plus totals."""
    state_d = result.durations
    K = result.states_per_symbol
    symbol_d = state_d.reshape(-1, K).sum(axis=1)
    return {
        "total_frames": int(result.n_frames),
        "n_states": int(state_d.size),
        "n_symbols": int(symbol_d.size),
        "frames_per_symbol": float(result.n_frames / symbol_d.size),
        "state_durations": [int(d) for d in state_d],
        "symbol_durations": [int(d) for d in symbol_d],
        "termination": result.reason,
    }


def format_rate_report(report: dict, extra=None) -> str:
    """UTF-8 key=value lines; lists are comma separated."""
    items = dict(extra or {})
    items.update(report)
    lines = []
    for key, val in items.items():
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"
