"""Run configuration and the maximum-likelihood training loop."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, NumericalError
from .lattice import batch_loglik, nll_loss
from .model import ModelConfig, NeuralHMM, flat_start_init
from .numerics.optim import AdamState, adam_step
from .numerics.tensor import no_grad, reverse_grad

LOG_COLUMNS = ("update", "mean_nll", "nll_per_frame", "grad_norm", "wall_time")

_MODEL_KEYS = (
    "embed_dim", "encoder_dim", "conv_kernel", "states_per_symbol", "state_dim",
    "prenet_dims", "decoder_dim", "outputnet_dim", "variance_floor", "prenet_dropout",
    "learn_go_token",
)


def _parse_bool(s):
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    """Everything needed to reproduce a training run.

    Stored as flat ``key=value`` text. Paths are relative to the config
    file's directory.
    """

    vocab: str = ""
    train_manifest: str = ""
    valid_manifest: str = ""
    out_dir: str = "run"
    # model
    embed_dim: int = 16
    encoder_dim: int = 16
    conv_kernel: int = 3
    states_per_symbol: int = 2
    state_dim: int = 16
    prenet_dims: tuple = (16, 16)
    decoder_dim: int = 32
    outputnet_dim: int = 32
    variance_floor: float = 0.001
    prenet_dropout: float = 0.5
    learn_go_token: bool = True
    initial_tau: float = 0.0  # 0: estimate from data
    # optimizer
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 1.0  # 0 disables clipping
    batch_size: int = 8
    max_updates: int = 1000
    seed: int = 0
    checkpoint_interval: int = 250
    loss_normalization: str = "frame"  # "frame" or "utterance"
    skip_infeasible: bool = True
    # synthesis defaults
    synth_q: float = 0.0  # 0: per-K default
    synth_acoustic_mode: str = "mean"
    synth_duration_mode: str = "quantile"
    synth_dropout: bool = True

    def __post_init__(self):
        if self.loss_normalization not in ("frame", "utterance"):
            raise ConfigError(f"loss_normalization must be 'frame' or 'utterance', got {self.loss_normalization!r}")
        if self.batch_size < 1 or self.max_updates < 0 or self.checkpoint_interval < 1:
            raise ConfigError("batch_size and checkpoint_interval must be >= 1, max_updates >= 0")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        self.prenet_dims = tuple(int(d) for d in self.prenet_dims)

    def model_config(self, vocab_size, acoustic_dim) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, acoustic_dim=acoustic_dim,
            **{k: getattr(self, k) for k in _MODEL_KEYS},
        )

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["prenet_dims"] = list(self.prenet_dims)
        return d

    def to_text(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_text(cls, text):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            default = known[key].default
            try:
                if isinstance(default, bool):
                    kwargs[key] = _parse_bool(val)
                elif isinstance(default, int):
                    kwargs[key] = int(val)
                elif isinstance(default, float):
                    kwargs[key] = float(val)
                elif isinstance(default, tuple):
                    kwargs[key] = tuple(int(v) for v in val.split(",") if v.strip())
                else:
                    kwargs[key] = val
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LogRecord:
    update: int
    mean_nll: float
    nll_per_frame: float
    grad_norm: float
    wall_time: float

    def tsv(self):
        return f"{self.update}\t{self.mean_nll!r}\t{self.nll_per_frame!r}\t{self.grad_norm!r}\t{self.wall_time:.3f}"


def log_header():
    return "\t".join(LOG_COLUMNS)


def parse_log(text):
    rows = text.strip().splitlines()
    if not rows or rows[0] != log_header():
        raise ConfigError("training log lacks the expected header")
    out = []
    for row in rows[1:]:
        u, a, b, g, w = row.split("\t")
        out.append(LogRecord(int(u), float(a), float(b), float(g), float(w)))
    return out


@dataclass
class Trainer:
    """Adam on the exact sequence NLL over a fixed list of normalized utterances.

    Each update draws its batch and dropout masks from a generator seeded by
    ``(seed, update)``, so resuming from a checkpoint continues the same
    stream of batches.
    """

    model: NeuralHMM
    utterances: list
    run: RunConfig
    adam: AdamState | None = None
    update: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.adam is None:
            r = self.run
            self.adam = AdamState(lr=r.lr, beta1=r.beta1, beta2=r.beta2, eps=r.eps)
        if not self.utterances:
            raise ConfigError("no training utterances")
        self._t0 = time.perf_counter()

    def step(self) -> LogRecord:
        rng = np.random.default_rng((self.run.seed, self.update))
        n = len(self.utterances)
        idx = rng.choice(n, size=min(self.run.batch_size, n), replace=False)
        batch = [self.utterances[i] for i in idx]
        res = nll_loss(
            self.model, batch,
            per_frame=self.run.loss_normalization == "frame",
            dropout_on=True, rng=rng,
            skip_infeasible=self.run.skip_infeasible,
        )
        self.model.zero_grad()
        reverse_grad(res.loss)
        params = self.model.trainable()
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        norm = adam_step(
            {k: p.data for k, p in params.items()}, grads, self.adam,
            clip=self.run.clip if self.run.clip > 0 else None,
        )
        if not np.isfinite(norm):
            raise NumericalError(f"non-finite gradient norm at update {self.update + 1}")
        self.update += 1
        rec = LogRecord(self.update, res.nll, res.nll_per_frame, norm, time.perf_counter() - self._t0)
        self.history.append(rec)
        return rec

    def train(self, n_updates, callback=None):
        for _ in range(n_updates):
            rec = self.step()
            if callback is not None:
                callback(self, rec)
        return self.history


def evaluate_loglik(model, utterances, batch_size=16):
    """Exact per-utterance log-likelihoods with dropout off; returns (logliks, frame counts)."""
    lls, frames = [], []
    with no_grad():
        for i in range(0, len(utterances), batch_size):
            chunk = utterances[i:i + batch_size]
            ll, fl = batch_loglik(model, [(u.symbols, u.frames) for u in chunk])
            lls.append(ll.data.copy())
            frames.append(fl)
    return np.concatenate(lls), np.concatenate(frames)


def init_model(run: RunConfig, vocab_size, acoustic_dim, norm_stats=None) -> NeuralHMM:
    cfg = run.model_config(vocab_size, acoustic_dim)
    return flat_start_init(
        cfg, norm_stats, seed=run.seed, initial_tau=run.initial_tau if run.initial_tau > 0 else None
    )
