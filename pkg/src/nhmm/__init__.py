"""Neural hidden Markov models for monotonic sequence-to-sequence acoustic modelling.

An encoder maps input symbols to a left-right no-skip chain of HMM states; an
autoregressive decoder and a feedforward output network give each state a
Gaussian emission and an advance probability per frame. Training maximizes
the exact sequence log-likelihood; synthesis generates frames greedily with
quantile-based duration control.
"""
from .data import (
    NormStats,
    ToySpec,
    Utterance,
    Vocabulary,
    alignment_accuracy,
    compute_norm_stats,
    generate_toy_corpus,
    load_melbin,
    save_melbin,
)
from .lattice import (
    Alignment,
    EmissionLattice,
    brute_force_loglik,
    build_lattice,
    forward_loglik,
    nll_loss,
    occupancy_posterior,
    viterbi,
)
from .model import ModelConfig, NeuralHMM, flat_start_init, param_count
from .synthesis import SynthesisOptions, SynthesisResult, rate_report, synthesize
from .training import RunConfig, Trainer, evaluate_loglik, init_model

__all__ = [
    "Alignment",
    "EmissionLattice",
    "ModelConfig",
    "NeuralHMM",
    "NormStats",
    "RunConfig",
    "SynthesisOptions",
    "SynthesisResult",
    "ToySpec",
    "Trainer",
    "Utterance",
    "Vocabulary",
    "alignment_accuracy",
    "brute_force_loglik",
    "build_lattice",
    "compute_norm_stats",
    "evaluate_loglik",
    "flat_start_init",
    "forward_loglik",
    "generate_toy_corpus",
    "init_model",
    "load_melbin",
    "nll_loss",
    "occupancy_posterior",
    "param_count",
    "rate_report",
    "save_melbin",
    "synthesize",
    "viterbi",
]
