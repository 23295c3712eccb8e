"""A small reverse-mode automatic differentiation engine over float64 arrays.

Only the operators needed by the point-cloud encoder and the conditional
neural field are provided. Tensors are 2-D ``(rows, features)`` unless noted;
binary elementwise ops accept a ``(1, features)`` right operand broadcast over
rows and nothing else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from nito.errors import ConfigurationError, ParameterError, TrainingError

LN_EPS = 1e-5
BCE_CLAMP = 1e-7


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "op", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}{', name=' + self.name if self.name else ''})"


def parameter(value, name=None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value, parents, backward, op):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, needs, parents if needs else (), backward if needs else None, op)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True).reshape(shape)


def _check_broadcast(a, b, op):
    if a.shape == b.shape:
        return
    if a.value.ndim == 2 and b.shape in ((1, a.shape[1]), (a.shape[1],)):
        return
    raise ConfigurationError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _node(a.value @ b.value, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.value + b.value, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accumulate(a, g * b.value)
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _node(a.value * b.value, (a, b), backward, "mul")


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, W), b)


def sin(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g * np.cos(a.value))

    return _node(np.sin(a.value), (a,), backward, "sin")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), backward, "sigmoid")


def gelu(a: Tensor) -> Tensor:
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        _accumulate(a, g * (cdf + x * pdf))

    return _node(x * cdf, (a,), backward, "gelu")


def layer_norm(a: Tensor, eps: float = LN_EPS) -> Tensor:
    """Row-wise normalization to zero mean and unit variance, no affine part."""
    x = a.value
    if x.ndim != 2 or x.shape[1] < 1:
        raise ConfigurationError(f"layer_norm needs a (rows, features>=1) input, got {x.shape}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        _accumulate(a, inv * (g - gm - xhat * gx))

    return _node(xhat, (a,), backward, "layer_norm")


def concat(tensors, axis=1) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ConfigurationError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _node(out, tensors, backward, "concat")


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; the backward pass sums gradients per source row."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        order = np.argsort(index, kind="stable")
        idx = index[order]
        starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
        out = np.zeros_like(a.value)
        out[idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
        _accumulate(a, out)

    return _node(a.value[index], (a,), backward, "take_rows")


def _reduce_extreme(a: Tensor, fn, op):
    if a.shape[0] < 1:
        raise ParameterError(f"{op} over an empty point set")
    arg = fn(a.value, axis=0)
    cols = np.arange(a.shape[1])

    def backward(g):
        out = np.zeros_like(a.value)
        out[arg, cols] = g[0]
        _accumulate(a, out)

    return _node(a.value[arg, cols][None, :], (a,), backward, op)


def reduce_min(a: Tensor) -> Tensor:
    """Column-wise minimum over the point (row) axis, shape (1, features)."""
    return _reduce_extreme(a, np.argmin, "reduce_min")


def reduce_max(a: Tensor) -> Tensor:
    return _reduce_extreme(a, np.argmax, "reduce_max")


def reduce_mean(a: Tensor) -> Tensor:
    if a.shape[0] < 1:
        raise ParameterError("reduce_mean over an empty point set")
    n = a.shape[0]

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _node(a.value.mean(axis=0, keepdims=True), (a,), backward, "reduce_mean")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.value >= lo) & (a.value <= hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _node(np.clip(a.value, lo, hi), (a,), backward, "clamp")


def binary_cross_entropy(pred: Tensor, target, eps: float = BCE_CLAMP) -> Tensor:
    """Mean of -[t log p + (1 - t) log(1 - p)] with p clamped to [eps, 1 - eps]."""
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ConfigurationError(f"bce: prediction shape {pred.shape} vs target shape {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ParameterError("bce targets must lie in [0, 1]")
    # NaN passes through so callers can report non-finite losses with context
    if np.any((pred.value < 0.0) | (pred.value > 1.0)):
        raise ParameterError("bce predictions must lie in [0, 1]")
    p = clamp(pred, eps, 1.0 - eps)
    pv = p.value
    n = pv.size
    loss = -np.mean(t * np.log(pv) + (1.0 - t) * np.log(1.0 - pv))

    def backward(g):
        _accumulate(p, g * (pv - t) / (pv * (1.0 - pv)) / n)

    return _node(np.asarray(loss), (p,), backward, "bce")


def topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None):
    """Populate ``.grad`` on every tensor reachable from a scalar loss.

    With ``params`` (an iterable or a name -> Tensor mapping) the gradients
    are also returned in the same structure, zeros for unreachable ones.
    """
    if loss.value.size != 1:
        raise ParameterError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        zero_grad(params)
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is None:
        return None
    if isinstance(params, dict):
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in params.items()}
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def zero_grad(params):
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float):
    """Decoupled weight decay followed by a bias-corrected Adam step, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ConfigurationError(f"gradient shape {g.shape} does not match parameter '{name}' {p.value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value *= 1.0 - lr * state.weight_decay
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def cosine_lr(epoch: int, total_epochs: int, lr_start: float = 1e-4, lr_end: float = 5e-6) -> float:
    if not 0 <= epoch <= total_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {total_epochs}]")
    if epoch == 0:
        return lr_start
    if epoch == total_epochs:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * epoch / total_epochs))
