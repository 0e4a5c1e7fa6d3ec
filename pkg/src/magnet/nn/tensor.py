"""Reverse-mode autodiff over numpy arrays.

The graph is deliberately coarse: recurrent and attention layers register as
single nodes with hand-derived backward passes (see layers.py), so graph
bookkeeping stays negligible next to BLAS time. Elementwise ops here cover
the loss head and the Gaussian density algebra.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    """Raised on misuse of the autodiff API (non-scalar backward, etc.)."""


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        raise TypeError("expected raw array-like, got Tensor")
    a = np.asarray(x)
    if dtype is not None:
        a = a.astype(dtype, copy=False)
    elif a.dtype.kind != "f":
        a = a.astype(np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus an optional backward edge into the graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph execution -----------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise AutodiffError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free intermediate graph state; leaves keep their grads
            if node._parents:
                node._backward = None
        # keep parents reachable until the sweep above completes

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other, self.dtype)

        def bwd(g):
            self._accum(g)
            other._accum(g)

        return Tensor(self.data + other.data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        other = _wrap(other, self.dtype)

        def bwd(g):
            self._accum(g)
            other._accum(-g)

        return Tensor(self.data - other.data, parents=(self, other), backward=bwd)

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)

        def bwd(g):
            self._accum(g * other.data)
            other._accum(g * self.data)

        return Tensor(self.data * other.data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)

        def bwd(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data**2))

        return Tensor(self.data / other.data, parents=(self, other), backward=bwd)

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise AutodiffError("only constant exponents are supported")

        def bwd(g):
            self._accum(g * exponent * self.data ** (exponent - 1))

        return Tensor(self.data**exponent, parents=(self,), backward=bwd)

    def __matmul__(self, other):
        other = _wrap(other, self.dtype)

        def bwd(g):
            a, b = self.data, other.data
            if a.ndim == 1 and b.ndim == 1:
                self._accum(g * b)
                other._accum(g * a)
            elif a.ndim == 1:
                self._accum(g @ b.swapaxes(-1, -2))
                other._accum(np.outer(a, g))
            elif b.ndim == 1:
                self._accum(np.outer(g, b) if a.ndim == 2 else np.einsum("...i,j->...ij", g, b))
                other._accum(np.einsum("...ij,...i->j", a, g))
            else:
                ga = g @ b.swapaxes(-1, -2)
                gb = a.swapaxes(-1, -2) @ g
                self._accum(ga)
                other._accum(gb)

        return Tensor(self.data @ other.data, parents=(self, other), backward=bwd)

    def __getitem__(self, idx):
        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor(self.data[idx], parents=(self,), backward=bwd)

    # -- reductions / reshapes -------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape))

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), backward=bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bwd(g):
            self._accum(g.reshape(self.data.shape))

        return Tensor(self.data.reshape(shape), parents=(self,), backward=bwd)

    def swapaxes(self, a, b):
        def bwd(g):
            self._accum(g.swapaxes(a, b))

        return Tensor(self.data.swapaxes(a, b), parents=(self,), backward=bwd)

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    # -- elementwise nonlinearities ---------------------------------------------
    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accum(g * out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.data)

        return Tensor(np.log(self.data), parents=(self,), backward=bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            self._accum(g * 0.5 / out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accum(g * (1.0 - out_data**2))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g):
            self._accum(g * out_data * (1.0 - out_data))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def leaky_relu(self, slope=0.01):
        mask = np.where(self.data > 0, 1.0, slope)

        def bwd(g):
            self._accum(g * mask)

        return Tensor(self.data * mask, parents=(self,), backward=bwd)

    def relu_mask(self, cond: np.ndarray):
        """Multiply by a constant 0/1 mask (used for hinge losses)."""

        def bwd(g):
            self._accum(g * cond)

        return Tensor(self.data * cond, parents=(self,), backward=bwd)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    t = Tensor(_as_array(data, dtype), requires_grad=requires_grad)
    t.name = name
    return t


def concat(parts: list[Tensor], axis=-1) -> Tensor:
    datas = [p.data for p in parts]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            p._accum(g[tuple(sl)])

    return Tensor(np.concatenate(datas, axis=axis), parents=tuple(parts), backward=bwd)


def stack(parts: list[Tensor], axis=0) -> Tensor:
    def bwd(g):
        for i, p in enumerate(parts):
            p._accum(np.take(g, i, axis=axis))

    return Tensor(np.stack([p.data for p in parts], axis=axis), parents=tuple(parts), backward=bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route gradient to the first argument."""
    take_a = a.data >= b.data

    def bwd(g):
        a._accum(g * take_a)
        b._accum(g * (~take_a))

    return Tensor(np.maximum(a.data, b.data), parents=(a, b), backward=bwd)


def logsumexp(x: Tensor, axis=-1) -> Tensor:
    """Stable log-sum-exp along `axis`; the max shift is treated as constant."""
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = x - Tensor(m)
    out = shifted.exp().sum(axis=axis).log() + Tensor(np.squeeze(m, axis=axis))
    return out


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit broadcast; backward sums gradient over the expanded axes."""
    def bwd(g):
        x._accum(_unbroadcast(g, x.data.shape))

    return Tensor(np.broadcast_to(x.data, tuple(shape)), parents=(x,), backward=bwd)


def log_softmax_t(logits: Tensor, tau: float) -> Tensor:
    """log of softmax_t, computed stably (never via log of tiny weights)."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    scaled = logits * (1.0 / tau)
    m = np.max(scaled.data, axis=-1, keepdims=True)
    e = (scaled - Tensor(m)).exp()
    return scaled - Tensor(m) - e.sum(axis=-1, keepdims=True).log()


def softmax_t(logits: Tensor, tau: float) -> Tensor:
    """Temperature softmax along the last axis, max-stabilized.

    tau > 1 flattens the distribution, tau < 1 sharpens it.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    scaled = logits * (1.0 / tau)
    m = np.max(scaled.data, axis=-1, keepdims=True)
    e = (scaled - Tensor(m)).exp()
    return e / e.sum(axis=-1, keepdims=True)


def grad(loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
    """Run backward from a scalar loss and return grads for `params`."""
    for p in params:
        p.zero_grad()
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
