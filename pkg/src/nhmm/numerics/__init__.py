"""Differentiable arithmetic, log-domain primitives and the Adam optimizer."""
from .logspace import (
    DEFAULT_VARIANCE_FLOOR,
    NEG_INF,
    floored_softplus,
    gaussian_diag_logpdf,
    inverse_softplus,
    log_one_minus_sigmoid,
    log_sigmoid,
    log_sum_exp,
    logit,
    softplus,
    stable_sigmoid,
)
from .optim import AdamState, adam_step, global_norm
from .tensor import Tensor, no_grad, reverse_grad

__all__ = [
    "AdamState",
    "DEFAULT_VARIANCE_FLOOR",
    "NEG_INF",
    "Tensor",
    "adam_step",
    "floored_softplus",
    "gaussian_diag_logpdf",
    "global_norm",
    "inverse_softplus",
    "log_one_minus_sigmoid",
    "log_sigmoid",
    "log_sum_exp",
    "logit",
    "no_grad",
    "reverse_grad",
    "softplus",
    "stable_sigmoid",
]
