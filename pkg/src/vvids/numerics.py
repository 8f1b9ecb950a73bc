"""Minimal reverse-mode autodiff on numpy float64 arrays.

Every layer in the package is built from the primitives here; each primitive
carries an analytic backward rule, and ``gradient_check`` verifies any scalar
function of the parameters against central finite differences.

Tensors are immutable after forward construction except their ``grad``
buffers. All math runs in 64-bit.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError

__all__ = [
    "Tensor",
    "make_rng",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "softmax",
    "layer_norm",
    "gelu",
    "sigmoid",
    "softplus",
    "dropout",
    "maximum",
    "minimum",
    "affine",
    "gradient_check",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based PRNG so runs reproduce byte-for-byte."""
    return np.random.Generator(np.random.Philox(seed))


class Tensor:
    """Dense float64 array plus an optional gradient buffer.

    Building an op records a backward closure and the parent tensors, so
    calling ``backward()`` on a scalar result fills ``grad`` on every tensor
    that was created with ``requires_grad=True`` (and on intermediates).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple["Tensor", ...] = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise NumericError("backward on a graph with no trainable inputs")
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(self.data + other.data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(self.data * other.data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor(self.data / other.data, parents=(self, other), backward=bwd)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        def bwd(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      parents=(self,), backward=bwd)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self) -> "Tensor":
        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor(np.log(self.data), parents=(self,), backward=bwd)

    def abs(self) -> "Tensor":
        def bwd(g):
            self._accumulate(g * np.sign(self.data))

        return Tensor(np.abs(self.data), parents=(self,), backward=bwd)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- primitives -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with dA = dC @ B^T and dB = A^T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(a.data @ b.data, parents=(a, b), backward=bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def bwd(g):
        a._accumulate(g.T)

    return Tensor(a.data.T, parents=(a,), backward=bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(a.data.reshape(shape), parents=(a,), backward=bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward=bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into place."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return Tensor(a.data[idx].copy(), parents=(a,), backward=bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; rows along ``axis`` sum to 1."""
    if x.data.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        # dx = (g - sum(g*y)) * y, the softmax Jacobian applied to g
        dot = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate((g - dot) * y)

    return Tensor(y, parents=(x,), backward=bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply the affine."""
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over empty last axis")
    if eps <= 0:
        raise NumericError(f"layer_norm eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=lead))
        bias._accumulate(g.sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        x._accumulate((dxhat - m1 - xhat * m2) * inv)

    return Tensor(y, parents=(x, gain, bias), backward=bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        x._accumulate(g * (cdf + x.data * pdf))

    return Tensor(y, parents=(x,), backward=bwd)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bwd(g):
        x._accumulate(g * s * (1.0 - s))

    return Tensor(s, parents=(x,), backward=bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe; derivative is sigmoid(x)."""
    d = x.data
    y = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))

    def bwd(g):
        s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                     np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
        x._accumulate(g * s)

    return Tensor(y, parents=(x,), backward=bwd)


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; gradient follows the larger operand (ties go to a)."""
    b = _as_tensor(b)
    pick_a = a.data >= b.data

    def bwd(g):
        a._accumulate(_unbroadcast(g * pick_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~pick_a, b.data.shape))

    return Tensor(np.maximum(a.data, b.data), parents=(a, b), backward=bwd)


def minimum(a: Tensor, b) -> Tensor:
    """Elementwise min; gradient follows the smaller operand (ties go to a)."""
    b = _as_tensor(b)
    pick_a = a.data <= b.data

    def bwd(g):
        a._accumulate(_unbroadcast(g * pick_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~pick_a, b.data.shape))

    return Tensor(np.minimum(a.data, b.data), parents=(a, b), backward=bwd)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-rate) at train time, exact identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise NumericError("training-mode dropout requires an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        x._accumulate(g * mask)

    return Tensor(x.data * mask, parents=(x,), backward=bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows."""
    return matmul(x, w) + b


# -- verification harness ----------------------------------------------------

def gradient_check(f: Callable[[], Tensor], params: Iterable[Tensor],
                   h: float = 1e-6, sample_per_param: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a no-argument closure over ``params`` returning a scalar Tensor.
    With ``sample_per_param`` set, only that many randomly chosen coordinates
    per parameter are perturbed (used for whole-model checks where a full
    sweep would be slow); otherwise every coordinate is checked.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericError("gradient_check: non-finite function value")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    if sample_per_param is not None and rng is None:
        rng = make_rng(0)

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        if sample_per_param is None or flat.size <= sample_per_param:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=sample_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError("gradient_check: non-finite perturbed value")
            central = (f_plus - f_minus) / (2.0 * h)
            a = ana.reshape(-1)[i]
            err = abs(a - central) / max(1e-8, abs(a) + abs(central))
            worst = max(worst, err)
    return worst
