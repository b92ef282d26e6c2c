"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every :class:`Tensor` produced by an operation remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`reverse_grad`
walks the graph in reverse topological order. All data is float64.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ContractError, NumericalError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(y):
    # exp of a non-positive argument only; no overflow warnings.
    e = np.exp(-np.abs(y))
    return np.where(y >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid_np(a.data),), "softplus")


# shape ops ---------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw, "sum")


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index):
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tuple(tensors), bw, "stack")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if b.ndim == 1:
                gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# log-domain --------------------------------------------------------------

def _softmax_weights(x, m):
    """exp(x - m) with zero weight wherever the max is -inf (or x is -inf)."""
    with np.errstate(invalid="ignore"):
        w = np.exp(x - m)
    return np.where(np.isneginf(m), 0.0, w)


def logaddexp(a, b):
    """ln(e^a + e^b) for tensors; -inf inputs receive exactly zero gradient."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g * _softmax_weights(a.data, out), a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * _softmax_weights(b.data, out), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "logaddexp")


def logsumexp(a, axis=-1):
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.sum(np.exp(x - shift), axis=axis, keepdims=True)) + shift
    out_k = np.where(np.isposinf(m), np.inf, out_k)
    out = np.squeeze(out_k, axis=axis)

    def bw(g):
        return (np.expand_dims(g, axis) * _softmax_weights(x, out_k),)

    return _make(out, (a,), bw, "logsumexp")


def log_sigmoid(a):
    """ln sigmoid(y) = -softplus(-y), exact in both tails."""
    out = -np.logaddexp(0.0, -a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid_np(-a.data),), "log_sigmoid")


def log_one_minus_sigmoid(a):
    """ln(1 - sigmoid(y)) = -softplus(y)."""
    out = -np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (-g * _sigmoid_np(a.data),), "log_one_minus_sigmoid")


def floored_softplus(a, floor):
    sp = np.logaddexp(0.0, a.data)
    active = sp > floor
    out = np.where(active, sp, floor)
    return _make(out, (a,), lambda g: (g * active * _sigmoid_np(a.data),), "floored_softplus")


_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def gaussian_diag_logpdf(x, mu, sigma):
    """Diagonal Gaussian log-density summed over the last axis (broadcasting)."""
    x, mu, sigma = as_tensor(x), as_tensor(mu), as_tensor(sigma)
    z = (x.data - mu.data) / sigma.data
    out = np.sum(-_HALF_LOG_2PI - np.log(sigma.data) - 0.5 * z * z, axis=-1)

    def bw(g):
        g = g[..., None]
        dmu = g * z / sigma.data
        gx = _unbroadcast(-dmu, x.shape) if x.requires_grad else None
        gmu = _unbroadcast(dmu, mu.shape) if mu.requires_grad else None
        gs = None
        if sigma.requires_grad:
            gs = _unbroadcast(g * (z * z - 1.0) / sigma.data, sigma.shape)
        return gx, gmu, gs

    return _make(out, (x, mu, sigma), bw, "gaussian_diag_logpdf")


def dropout(a, p, rng, enabled=True):
    """Inverted dropout; a no-op when disabled or p == 0."""
    if not enabled or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def lstm_cell(x_proj, h, c, w_hh, bias):
    """One LSTM step with gates ordered (input, forget, cell, output).

    ``x_proj`` is the input already multiplied by the input weight matrix.
    Returns ``(h_new, c_new)``.
    """
    gates = x_proj.data + h.data @ w_hh.data + bias.data
    hd = h.shape[-1]
    i = _sigmoid_np(gates[..., :hd])
    f = _sigmoid_np(gates[..., hd:2 * hd])
    gg = np.tanh(gates[..., 2 * hd:3 * hd])
    o = _sigmoid_np(gates[..., 3 * hd:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def gate_grads(gh, gc):
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dgates = np.concatenate(
            [
                gc_total * gg * i * (1.0 - i),
                gc_total * c.data * f * (1.0 - f),
                gc_total * i * (1.0 - gg * gg),
                gh * tc * o * (1.0 - o),
            ],
            axis=-1,
        )
        return dgates, gc_total * f

    parents = (x_proj, h, c, w_hh, bias)

    def bw_from(gh, gc):
        dgates, dc = gate_grads(gh, gc)
        gx = _unbroadcast(dgates, x_proj.shape) if x_proj.requires_grad else None
        gh_prev = dgates @ w_hh.data.T if h.requires_grad else None
        gc_prev = dc if c.requires_grad else None
        gw = None
        if w_hh.requires_grad:
            gw = h.data.reshape(-1, hd).T @ dgates.reshape(-1, 4 * hd)
        gb = _unbroadcast(dgates, bias.shape) if bias.requires_grad else None
        return gx, gh_prev, gc_prev, gw, gb

    # Pack (h, c) into one node, then slice, so the backward pass sees both
    # output gradients at once.
    packed = _make(
        np.concatenate([h_new, c_new], axis=-1),
        parents,
        lambda g: bw_from(g[..., :hd], g[..., hd:]),
        "lstm_cell",
    )
    return _slice_last(packed, 0, hd), _slice_last(packed, hd, 2 * hd)


def _slice_last(a, lo, hi):
    out = a.data[..., lo:hi]

    def bw(g):
        full = np.zeros_like(a.data)
        full[..., lo:hi] = g
        return (full,)

    return _make(out, (a,), bw, "slice")


# reverse pass ------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def reverse_grad(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    Raises :class:`NumericalError` naming the first node that went non-finite
    if the loss itself is not finite.
    """
    if loss.data.size != 1:
        raise ContractError(f"reverse_grad needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss) if loss.requires_grad else [loss]
    if not np.isfinite(loss.data):
        raise NumericalError(f"non-finite loss {float(loss.data)}; {_first_bad(order)}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _first_bad(order):
    for node in order:
        if np.isnan(node.data).any():
            return f"first NaN produced by op {node.op!r}" + (f" ({node.name})" if node.name else "")
    for node in order:
        if np.isposinf(node.data).any():
            return f"first +inf produced by op {node.op!r}" + (f" ({node.name})" if node.name else "")
    return "no non-finite intermediate found"
