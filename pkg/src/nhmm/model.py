"""Neural HMM parameterization.

The encoder turns a symbol sequence into ``K`` state vectors per symbol. The
decoder is a pre-net plus a single LSTM that only ever sees past acoustic
frames, so its output ``a_t`` is shared by every HMM state at frame ``t``.
The feedforward output network maps ``(h_n, a_t)`` to a diagonal Gaussian
and an advance probability.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError, InputError
from .numerics import tensor as T
from .numerics.logspace import DEFAULT_VARIANCE_FLOOR, inverse_softplus, logit
from .numerics.tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    acoustic_dim: int
    embed_dim: int = 16
    encoder_dim: int = 16
    conv_kernel: int = 3
    states_per_symbol: int = 2
    state_dim: int = 16
    prenet_dims: tuple = (16, 16)
    decoder_dim: int = 32
    outputnet_dim: int = 32
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    prenet_dropout: float = 0.5
    learn_go_token: bool = True

    def __post_init__(self):
        self.prenet_dims = tuple(int(d) for d in self.prenet_dims)
        dims = {
            "vocab_size": self.vocab_size,
            "acoustic_dim": self.acoustic_dim,
            "embed_dim": self.embed_dim,
            "encoder_dim": self.encoder_dim,
            "conv_kernel": self.conv_kernel,
            "states_per_symbol": self.states_per_symbol,
            "state_dim": self.state_dim,
            "decoder_dim": self.decoder_dim,
            "outputnet_dim": self.outputnet_dim,
        }
        for key, val in dims.items():
            if int(val) != val or val < 1:
                raise ConfigError(f"{key} must be a positive integer, got {val!r}")
        if not self.prenet_dims or min(self.prenet_dims) < 1:
            raise ConfigError(f"prenet_dims must be non-empty and positive, got {self.prenet_dims}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not self.variance_floor > 0:
            raise ConfigError(f"variance_floor must be positive, got {self.variance_floor}")
        if not 0.0 <= self.prenet_dropout < 1.0:
            raise ConfigError(f"prenet_dropout must be in [0, 1), got {self.prenet_dropout}")

    def to_dict(self):
        d = asdict(self)
        d["prenet_dims"] = list(self.prenet_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class StateVectorSet:
    vectors: Tensor  # (N, state_dim)
    states_per_symbol: int

    @property
    def n_states(self):
        return self.vectors.shape[0]

    @property
    def n_symbols(self):
        return self.n_states // self.states_per_symbol


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    t: int = 0  # number of frames consumed so far


@dataclass
class EmissionParams:
    mu: Tensor
    sigma: Tensor
    log_tau: Tensor
    log_one_minus_tau: Tensor

    @property
    def tau(self):
        return np.exp(self.log_tau.data)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _glorot(rng, shape):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, n_in, n_hidden):
    w_ih = _uniform(rng, n_hidden, (n_in, 4 * n_hidden))
    w_hh = _uniform(rng, n_hidden, (n_hidden, 4 * n_hidden))
    bias = _uniform(rng, n_hidden, (4 * n_hidden,))
    bias[n_hidden:2 * n_hidden] += 1.0  # forget-gate bias
    return w_ih, w_hh, bias


class NeuralHMM:
    """Encoder, autoregressive decoder and output network as named tensors.

    ``params`` maps names to leaf tensors; the insertion order is stable and
    defines the checkpoint layout.
    """

    def __init__(self, cfg: ModelConfig, params: dict, initial_tau: float):
        self.cfg = cfg
        self.params = params
        self.initial_tau = float(initial_tau)
        for name, p in params.items():
            p.name = name
            p.requires_grad = True
        if not cfg.learn_go_token:
            params["go_token"].requires_grad = False

    # parameters -----------------------------------------------------------
    @staticmethod
    def random_params(cfg: ModelConfig, rng):
        E, C, H = cfg.embed_dim, cfg.encoder_dim, cfg.encoder_dim
        K, S, D = cfg.states_per_symbol, cfg.state_dim, cfg.acoustic_dim
        Hd, O = cfg.decoder_dim, cfg.outputnet_dim
        arrays = {"encoder.embedding": rng.normal(0.0, 0.3, size=(cfg.vocab_size, E))}
        arrays["encoder.conv.weight"] = _glorot(rng, (cfg.conv_kernel * E, C))
        arrays["encoder.conv.bias"] = np.zeros(C)
        for direction in ("fw", "bw"):
            w_ih, w_hh, b = _lstm_params(rng, C, H)
            arrays[f"encoder.lstm_{direction}.w_ih"] = w_ih
            arrays[f"encoder.lstm_{direction}.w_hh"] = w_hh
            arrays[f"encoder.lstm_{direction}.bias"] = b
        arrays["encoder.proj.weight"] = _glorot(rng, (2 * H, K * S))
        arrays["encoder.proj.bias"] = np.zeros(K * S)
        arrays["go_token"] = np.zeros(D)
        n_in = D
        for i, width in enumerate(cfg.prenet_dims):
            arrays[f"prenet.{i}.weight"] = _glorot(rng, (n_in, width))
            arrays[f"prenet.{i}.bias"] = np.zeros(width)
            n_in = width
        w_ih, w_hh, b = _lstm_params(rng, n_in, Hd)
        arrays["decoder.lstm.w_ih"] = w_ih
        arrays["decoder.lstm.w_hh"] = w_hh
        arrays["decoder.lstm.bias"] = b
        arrays["outputnet.hidden.w_state"] = _glorot(rng, (S, O))
        arrays["outputnet.hidden.w_decoder"] = _glorot(rng, (Hd, O))
        arrays["outputnet.hidden.bias"] = np.zeros(O)
        arrays["outputnet.out.weight"] = _glorot(rng, (O, 2 * D + 1))
        arrays["outputnet.out.bias"] = np.zeros(2 * D + 1)
        return {k: Tensor(v) for k, v in arrays.items()}

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def trainable(self):
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self):
        return NeuralHMM(
            self.cfg,
            {k: Tensor(p.data.copy()) for k, p in self.params.items()},
            self.initial_tau,
        )

    # encoder ------------------------------------------------------------
    def check_symbols(self, symbols):
        symbols = np.asarray(symbols)
        if symbols.ndim != 1 or symbols.size == 0:
            raise InputError("symbol sequence must be a non-empty 1-D sequence")
        bad = np.flatnonzero((symbols < 0) | (symbols >= self.cfg.vocab_size))
        if bad.size:
            pos = int(bad[0])
            raise InputError(
                f"unknown symbol id {int(symbols[pos])} at position {pos} "
                f"(vocabulary size {self.cfg.vocab_size})"
            )
        return symbols.astype(np.int64)

    def encode(self, symbols) -> StateVectorSet:
        symbols = self.check_symbols(symbols)
        vecs = self.encode_batch(symbols[None, :], np.array([symbols.size]))
        return StateVectorSet(vecs.reshape(vecs.shape[1:]), self.cfg.states_per_symbol)

    def encode_batch(self, ids, lengths) -> Tensor:
        """Padded ``(B, L)`` ids -> state vectors ``(B, K*L, state_dim)``.

        Positions at or beyond ``lengths[b]`` behave as if absent: the
        convolution sees zero padding there and the backward LSTM starts at
        each sequence's true end.
        """
        cfg = self.cfg
        ids = np.asarray(ids, dtype=np.int64)
        B, L = ids.shape
        mask = (np.arange(L)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
        emb = self["encoder.embedding"][ids] * mask[:, :, None]

        pad = cfg.conv_kernel // 2
        E = cfg.embed_dim
        zeros = Tensor(np.zeros((B, pad, E)))
        padded = T.concat([zeros, emb, zeros], axis=1) if pad else emb
        window = np.arange(L)[:, None] + np.arange(cfg.conv_kernel)[None, :]
        cols = padded[:, window, :].reshape(B, L, cfg.conv_kernel * E)
        conv = T.relu(cols @ self["encoder.conv.weight"] + self["encoder.conv.bias"])

        H = cfg.encoder_dim
        outputs = {}
        for direction in ("fw", "bw"):
            p = f"encoder.lstm_{direction}"
            xw = conv @ self[f"{p}.w_ih"]
            h = Tensor(np.zeros((B, H)))
            c = Tensor(np.zeros((B, H)))
            steps = range(L) if direction == "fw" else range(L - 1, -1, -1)
            hs = [None] * L
            for t in steps:
                h_new, c_new = T.lstm_cell(xw[:, t, :], h, c, self[f"{p}.w_hh"], self[f"{p}.bias"])
                if direction == "bw" and mask[:, t].min() == 0.0:
                    m = mask[:, t:t + 1]
                    h = h_new * m + h * (1.0 - m)
                    c = c_new * m + c * (1.0 - m)
                else:
                    h, c = h_new, c_new
                hs[t] = h
            outputs[direction] = T.stack(hs, axis=1)
        enc = T.concat([outputs["fw"], outputs["bw"]], axis=2)
        proj = enc @ self["encoder.proj.weight"] + self["encoder.proj.bias"]
        K, S = cfg.states_per_symbol, cfg.state_dim
        return proj.reshape(B, L * K, S)

    # decoder ------------------------------------------------------------
    def prenet(self, x, dropout_on, rng):
        for i in range(len(self.cfg.prenet_dims)):
            x = T.relu(x @ self[f"prenet.{i}.weight"] + self[f"prenet.{i}.bias"])
            x = T.dropout(x, self.cfg.prenet_dropout, rng, enabled=dropout_on)
        return x

    def initial_decoder_state(self, batch_shape=()):
        shape = tuple(batch_shape) + (self.cfg.decoder_dim,)
        return DecoderState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)), 0)

    def go_frame(self):
        return self["go_token"]

    def decoder_advance(self, prev_frame, state: DecoderState, dropout_on=False, rng=None):
        """Consume ``x_{t-1}`` and return the decoder state ``a_t``.

        Pass ``prev_frame=None`` at ``t == 1`` to use the go token.
        """
        if prev_frame is None:
            prev_frame = self.go_frame()
        prev_frame = T.as_tensor(prev_frame)
        if prev_frame.shape[-1] != self.cfg.acoustic_dim:
            raise ContractError(
                f"frame has dimension {prev_frame.shape[-1]}, model expects {self.cfg.acoustic_dim}"
            )
        if dropout_on and rng is None:
            raise ContractError("dropout requires an rng")
        x = self.prenet(prev_frame, dropout_on, rng)
        h, c = T.lstm_cell(
            x @ self["decoder.lstm.w_ih"], state.h, state.c,
            self["decoder.lstm.w_hh"], self["decoder.lstm.bias"],
        )
        return DecoderState(h, c, state.t + 1)

    def decoder_sequence(self, frames, dropout_on=False, rng=None) -> Tensor:
        """Teacher-forced decoder outputs ``(B, T, decoder_dim)`` for frames ``(B, T, D)``.

        Frame ``t`` (0-based) is conditioned on the go token and frames ``< t``.
        """
        frames = T.as_tensor(frames)
        B, n_frames, D = frames.shape
        go = self.go_frame().reshape(1, 1, D) + Tensor(np.zeros((B, 1, D)))
        ar_in = T.concat([go, frames[:, :-1, :]], axis=1) if n_frames > 1 else go
        x = self.prenet(ar_in, dropout_on, rng)
        xw = x @ self["decoder.lstm.w_ih"]
        state = self.initial_decoder_state((B,))
        h, c = state.h, state.c
        outs = []
        for t in range(n_frames):
            h, c = T.lstm_cell(xw[:, t, :], h, c, self["decoder.lstm.w_hh"], self["decoder.lstm.bias"])
            outs.append(h)
        return T.stack(outs, axis=1)

    # output network -----------------------------------------------------
    def output_net(self, g, a) -> EmissionParams:
        """Emission parameters from state vector(s) ``g`` and decoder output(s) ``a``.

        Leading dimensions broadcast, so ``g`` of shape ``(B, 1, N, S)`` and
        ``a`` of shape ``(B, T, 1, H)`` give a full ``(B, T, N)`` grid.
        """
        a = a.h if isinstance(a, DecoderState) else a
        D = self.cfg.acoustic_dim
        hidden = T.tanh(
            T.as_tensor(g) @ self["outputnet.hidden.w_state"]
            + (T.as_tensor(a) @ self["outputnet.hidden.w_decoder"] + self["outputnet.hidden.bias"])
        )
        out = hidden @ self["outputnet.out.weight"] + self["outputnet.out.bias"]
        mu = out[..., :D]
        sigma = T.floored_softplus(out[..., D:2 * D], self.cfg.variance_floor)
        y = out[..., 2 * D]
        return EmissionParams(mu, sigma, T.log_sigmoid(y), T.log_one_minus_sigmoid(y))


def flat_start_init(cfg: ModelConfig, data_stats=None, seed=0, initial_tau=None) -> NeuralHMM:
    """Random network with a zeroed output layer so every state starts identical.

    Output biases give mu = 0 and sigma = 1. The advance-probability bias is
    set from ``initial_tau`` if given, else from the data's expected advance
    rate ``K * symbols / frames`` (``data_stats.n_symbols`` and
    ``data_stats.n_frames``), else 0.1.
    """
    rng = np.random.default_rng(seed)
    params = NeuralHMM.random_params(cfg, rng)
    if initial_tau is None:
        initial_tau = 0.1
        n_sym = getattr(data_stats, "n_symbols", None)
        n_frames = getattr(data_stats, "n_frames", None)
        if n_sym and n_frames:
            initial_tau = float(np.clip(cfg.states_per_symbol * n_sym / n_frames, 0.01, 0.99))
    if not 0.0 < initial_tau < 1.0:
        raise ConfigError(f"initial tau must be in (0, 1), got {initial_tau}")
    D = cfg.acoustic_dim
    bias = np.zeros(2 * D + 1)
    bias[D:2 * D] = inverse_softplus(1.0)
    bias[2 * D] = logit(initial_tau)
    params["outputnet.out.weight"] = Tensor(np.zeros_like(params["outputnet.out.weight"].data))
    params["outputnet.out.bias"] = Tensor(bias)
    return NeuralHMM(cfg, params, initial_tau)


def param_count(model) -> dict:
    """Scalar parameter counts per tensor plus a ``"total"`` entry."""
    params = model.params if isinstance(model, NeuralHMM) else model
    counts = {name: int(p.data.size if isinstance(p, Tensor) else np.size(p)) for name, p in params.items()}
    counts["total"] = sum(counts.values())
    return counts


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a config, layer by layer."""
    E, C, H = cfg.embed_dim, cfg.encoder_dim, cfg.encoder_dim
    K, S, D = cfg.states_per_symbol, cfg.state_dim, cfg.acoustic_dim
    Hd, O = cfg.decoder_dim, cfg.outputnet_dim

    def lstm(n_in, n_h):
        return 4 * n_h * (n_in + n_h + 1)

    total = cfg.vocab_size * E
    total += cfg.conv_kernel * E * C + C
    total += 2 * lstm(C, H)
    total += 2 * H * K * S + K * S
    total += D
    n_in = D
    for width in cfg.prenet_dims:
        total += n_in * width + width
        n_in = width
    total += lstm(n_in, Hd)
    total += S * O + Hd * O + O
    total += O * (2 * D + 1) + 2 * D + 1
    return total
