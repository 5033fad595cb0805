"""A small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are recorded define-by-run: every op returns a new :class:`Tensor`
holding references to its inputs and a closure that maps the output gradient
to input gradients.  :func:`backward` walks the recorded graph once in
reverse topological order and accumulates gradients additively at fan-out.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimMismatch, NearZeroNorm, NonScalarLoss

NORM_EPS = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sin(a: Tensor) -> Tensor:
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


# ----------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _node(np.asarray(a.data.sum(axis=axis)), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def max_(a: Tensor, axis: int) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)
    return _node(out, (a,), back)


# ------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    return _node(a.data @ b.data, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def diagonal(a: Tensor) -> Tensor:
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise DimMismatch(f"diagonal needs a square matrix, got {a.shape}")

    def back(g):
        out = np.zeros_like(a.data)
        out[np.arange(n), np.arange(n)] = g
        return (out,)
    return _node(np.diagonal(a.data).copy(), (a,), back)


def take_rows(a: Tensor, rows) -> Tensor:
    rows = np.asarray(rows, dtype=np.intp)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, rows, g)
        return (out,)
    return _node(a.data[rows], (a,), back)


# ------------------------------------------------------------- normalizations

def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _node(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimMismatch(f"layer_norm: x width {width}, gamma {gamma.shape}, beta {beta.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def back(g):
        gx_hat = g * gamma.data
        gx = inv_std * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)
    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), back)


def l2_normalize(x, eps: float = NORM_EPS) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean norm."""
    x = as_tensor(x)
    if x.data.size == 0:
        raise DimMismatch("l2_normalize needs at least one element")
    norm = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm <= eps):
        raise NearZeroNorm(f"vector norm {float(norm.min()):.3e} is below {eps}")
    y = x.data / norm
    return _node(y, (x,), lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,))


def normalize_rows(arr, eps: float = NORM_EPS) -> np.ndarray:
    """Graph-free :func:`l2_normalize` for plain arrays."""
    return l2_normalize(Tensor(arr), eps).data


# ------------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Overwrites ``.grad`` on every reachable leaf that requires grad and returns
    the gradient of each tensor in ``params`` (zeros for tensors the loss does
    not touch).
    """
    params = list(params)
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
                leaf_grads[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return [leaf_grads[id(p)].copy() if id(p) in leaf_grads else np.zeros_like(p.data) for p in params]


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_grad(f: Callable[[], float], params: Sequence[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` w.r.t. each array in ``params``.

    ``f`` takes no arguments and must read the arrays, which are perturbed in
    place one coordinate at a time and restored afterwards.
    """
    out = []
    for arr in params:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(grad)
    return out
