"""Dense float64 tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array and records the operation that produced it.
Calling ``backward()`` on a scalar walks the record in reverse topological
order and accumulates ``.grad`` on every tensor that requires it.
Broadcasting follows numpy; gradients are summed back to the input shape.
"""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.ndim == 0 or b.ndim == 0 or a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basics --------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- graph ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Parameter(Tensor):
    """A named leaf tensor updated by the optimizer."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None or self.grad.shape != self.data.shape:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- binary elementwise ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
                            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: ((a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
                            (b, _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: ((a, g * p * a.data ** (p - 1)),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "maximum")
    pick = a.data >= b.data
    return _make(np.where(pick, a.data, b.data), (a, b),
                 lambda g: ((a, _unbroadcast(g * pick, a.shape)),
                            (b, _unbroadcast(g * ~pick, b.shape))))


# -- unary elementwise ---------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: ((a, g * on),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    scale = np.where(on, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: ((a, g * scale),))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: ((a, g * s),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: ((a, g * out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")
    return _make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: ((a, g * 0.5 / out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(x - out)
    return _make(out, (a,), lambda g: ((a, g * sig),))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch one of the named elementwise operations."""
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one argument")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two arguments")
        return _BINARY[op](*args)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions and shape ------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape)),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(a.shape)),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: ((a, np.swapaxes(g, i, j)),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _make(a.data[idx], (a,), back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple((t, parts[k]) for k, t in enumerate(ts))

    return _make(out, ts, back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(zip(ts, np.split(g, bounds, axis=axis)))

    return _make(out, ts, back)


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: ((a, _unbroadcast(np.where(cond, g, 0.0), a.shape)),
                            (b, _unbroadcast(np.where(cond, 0.0, g), b.shape))))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold the batch axes into one product instead of summing per-batch outer products
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ((a, ga), (b, gb))

    return _make(out, (a, b), back)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = m + np.log(tot)
    soft = s / tot
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, g * soft),)

    return _make(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


def _taylor_terms(m: np.ndarray, max_terms: int, tol: float):
    """Powers m^k/k! until the term norm drops under ``tol``; returns the list."""
    n = m.shape[-1]
    term = np.broadcast_to(np.eye(n), m.shape).copy()
    terms = [term]
    for k in range(1, max_terms):
        term = np.matmul(term, m) / k
        terms.append(term)
        if np.all(np.sqrt((term * term).sum(axis=(-2, -1))) < tol):
            break
    else:
        logger.warning("matrix_exp_trace: series not converged after %d terms", max_terms)
    return terms


def matrix_exp_trace(m, max_terms: int = 64, tol: float = 1e-12) -> Tensor:
    """tr(exp(m)) by truncated Taylor series.

    Accepts a square matrix or a stack of them (leading batch axes); returns
    one trace per matrix. The gradient is the transposed series of the same
    length, so forward and backward agree term for term.
    """
    m = as_tensor(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionError(f"matrix_exp_trace: expected square matrix, got shape {m.shape}")
    terms = _taylor_terms(m.data, max_terms, tol)
    value = sum(np.trace(t, axis1=-2, axis2=-1) for t in terms)

    def back(g):
        expm = sum(terms[:-1]) if len(terms) > 1 else np.zeros_like(m.data)
        return ((m, np.asarray(g)[..., None, None] * np.swapaxes(expm, -1, -2)),)

    return _make(np.asarray(value, dtype=np.float64), (m,), back)


# -- gradient checking -----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor],
                      step: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of a scalar ``loss_fn()`` with central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor keeps
    entries whose true gradient is zero from dividing by rounding noise.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite at the check point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    report = GradCheckReport(tol=tol)
    for idx, (p, ga) in enumerate(zip(params, analytic)):
        num = np.zeros_like(p.data)
        for i in range(p.data.size):
            orig = p.data.flat[i]
            p.data.flat[i] = orig + step
            up = loss_fn().item()
            p.data.flat[i] = orig - step
            down = loss_fn().item()
            p.data.flat[i] = orig
            num.flat[i] = (up - down) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(num)), floor)
        rel = float(np.max(np.abs(ga - num) / denom)) if ga.size else 0.0
        report.max_rel_error[p.name or f"param{idx}"] = rel
    return report


def glorot(rng: np.random.Generator, shape: tuple, gain: float = 1.0) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    lim = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)
