"""Scalar/array log-domain primitives.

Each function accepts plain numbers/arrays (returning numpy results) or
:class:`~nhmm.numerics.tensor.Tensor` objects (returning differentiable
tensors).
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ContractError
from . import tensor as T

NEG_INF = -np.inf
DEFAULT_VARIANCE_FLOOR = 1e-3


def _is_t(*xs):
    return any(isinstance(x, T.Tensor) for x in xs)


def log_sum_exp(terms):
    """ln sum(exp(terms)); exact -inf when every term is -inf."""
    if len(terms) == 0:
        raise ContractError("log_sum_exp of an empty list")
    if _is_t(*terms):
        return T.logsumexp(T.stack(terms, axis=0), axis=0)
    x = np.asarray(terms, dtype=np.float64)
    m = x.max(axis=0)
    if np.isneginf(m).all():
        return m if x.ndim > 1 else float(m)
    shift = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - shift), axis=0)) + shift
    return out if x.ndim > 1 else float(out)


def stable_sigmoid(y):
    if _is_t(y):
        return T.sigmoid(y)
    out = T._sigmoid_np(np.asarray(y, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def log_sigmoid(y):
    if _is_t(y):
        return T.log_sigmoid(y)
    out = -np.logaddexp(0.0, -np.asarray(y, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def log_one_minus_sigmoid(y):
    if _is_t(y):
        return T.log_one_minus_sigmoid(y)
    out = -np.logaddexp(0.0, np.asarray(y, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def softplus(y):
    if _is_t(y):
        return T.softplus(y)
    out = np.logaddexp(0.0, np.asarray(y, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def inverse_softplus(v):
    """y such that softplus(y) == v, for v > 0."""
    v = np.asarray(v, dtype=np.float64)
    out = v + np.log(-np.expm1(-v))
    return out if np.ndim(out) else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if np.ndim(out) else float(out)


def floored_softplus(y, floor=DEFAULT_VARIANCE_FLOOR):
    """max(softplus(y), floor); zero subgradient on the clamped side."""
    if not floor > 0:
        raise ConfigError(f"variance floor must be positive, got {floor}")
    if _is_t(y):
        return T.floored_softplus(y, floor)
    out = np.maximum(np.logaddexp(0.0, np.asarray(y, dtype=np.float64)), floor)
    return out if np.ndim(out) else float(out)


def gaussian_diag_logpdf(x, mu, sigma):
    """Log-density of a diagonal Gaussian, summed over the last axis."""
    if np.shape(x)[-1:] != np.shape(mu)[-1:] or np.shape(mu)[-1:] != np.shape(sigma)[-1:]:
        raise ContractError(
            f"dimension mismatch: x {np.shape(x)}, mu {np.shape(mu)}, sigma {np.shape(sigma)}"
        )
    if _is_t(x, mu, sigma):
        return T.gaussian_diag_logpdf(x, mu, sigma)
    x, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (x, mu, sigma))
    z = (x - mu) / sigma
    out = np.sum(-T._HALF_LOG_2PI - np.log(sigma) - 0.5 * z * z, axis=-1)
    return out if np.ndim(out) else float(out)
