"""Minimal dense reverse-mode autodiff over numpy float64 arrays.

The tape is rebuilt on every forward pass. Only the op set needed by small
MLPs and softmax relaxations is supported: matmul, add, mul, relu, concat,
gather_rows, sum, softmax_tau, mse and straight_through.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class InvalidTemperatureError(AutodiffError):
    pass


class InvalidInputError(AutodiffError):
    pass


class RankError(AutodiffError):
    pass


class NonFiniteGradientError(ArithmeticError):
    pass


class Tensor:
    """A float64 array that optionally records how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), backward=fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (used for biases and noise)."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, "add", (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, "mul", (a, b), fn)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    out = a.data @ b.data

    def fn(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, "concat", ts, fn)


def gather_rows(x, rows) -> Tensor:
    """Select rows of a 2-D tensor by integer index."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    rows = np.asarray(rows, dtype=np.intp)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, rows, g)
        return (full,)

    return _node(x.data[rows], "gather_rows", (x,), fn)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    out = x.data.sum(axis=axis)

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(out, "sum", (x,), fn)


def mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def softmax_tau(x, tau: float) -> Tensor:
    """softmax(x / tau) along the last axis, computed with max-subtraction."""
    x = _as_tensor(x)
    if not tau > 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    if np.isnan(x.data).any():
        raise InvalidInputError("softmax_tau received NaN input")
    z = x.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner) / tau,)

    return _node(s, "softmax_tau", (x,), fn)


def mse(pred, target) -> Tensor:
    """Mean squared error; ``target`` never receives a gradient."""
    pred = _as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target
    n = diff.size

    def fn(g):
        return (g * 2.0 * diff / n,)

    return _node(np.asarray((diff ** 2).mean()), "mse", (pred,), fn)


def straight_through(hard, soft) -> Tensor:
    """Forward value is ``hard``; the adjoint is routed unchanged to ``soft``."""
    hard_data = np.asarray(hard.data if isinstance(hard, Tensor) else hard, dtype=np.float64)
    soft = _as_tensor(soft)
    if hard_data.shape != soft.shape:
        raise ShapeError(f"straight_through shapes {hard_data.shape} and {soft.shape} differ")
    return _node(hard_data.copy(), "straight_through", (soft,), lambda g: (g,))


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.data.size != 1:
        raise RankError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    adjoints = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            adjoints[key] = pg if key not in adjoints else adjoints[key] + pg


def grad_of(root: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Fresh gradients of ``root`` w.r.t. ``params`` (existing .grad is cleared)."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(root)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def finite_diff_check(f: Callable[[np.ndarray], float], x, h: float = 1e-5,
                      analytic: np.ndarray | None = None) -> float:
    """Max relative error between autodiff and central differences of ``f``.

    ``f`` maps an array to a scalar Tensor (or float). When ``analytic`` is
    None it is obtained by running ``f`` on a grad-tracking leaf. ``f`` must
    be smooth at ``x``; argmax-style discontinuities are out of contract.
    """
    x = np.asarray(x, dtype=np.float64)
    if analytic is None:
        leaf = Tensor(x.copy(), requires_grad=True)
        out = f(leaf)
        (analytic,) = grad_of(out, [leaf])

    def value(arr):
        out = f(Tensor(arr))
        return float(out.data if isinstance(out, Tensor) else out)

    numeric = np.empty_like(x)
    flat = numeric.reshape(-1)
    for j in range(x.size):
        xp, xm = x.copy().reshape(-1), x.copy().reshape(-1)
        xp[j] += h
        xm[j] -= h
        flat[j] = (value(xp.reshape(x.shape)) - value(xm.reshape(x.shape))) / (2 * h)
    err = np.abs(np.asarray(analytic) - numeric) / (np.abs(numeric) + 1e-12)
    return float(err.max())


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place.

    Raises NonFiniteGradientError (and leaves params and state untouched) if
    any gradient entry is NaN or infinite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state lengths differ")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient; update skipped")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
