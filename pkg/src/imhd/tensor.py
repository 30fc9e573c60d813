"""Dense float64 tensors with reverse-mode autodiff over a fixed op set.

Every op checks its output for NaN/Inf and raises NonFiniteError instead of
letting bad values propagate. Gradients accumulate into ``.grad`` until the
caller zeroes them. All arithmetic is 64-bit and single-threaded per graph,
so identical inputs give bit-identical results.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / perturbation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; grads accumulate into leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        for node in topo:
            if node.grad is not None:
                _check_finite(node.grad, "backward pass")

    # operator sugar over the op set below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], opname: str) -> Tensor:
    _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))
        out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))
        out._backward = bw
    return out


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 on both sides")
    if a.data.ndim != b.data.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(g @ b.data.swapaxes(-1, -2))
            if b.requires_grad:
                b._accum(a.data.swapaxes(-1, -2) @ g)
        out._backward = bw
    return out


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def bw(g):
            a._accum(g.reshape(a.data.shape))
        out._backward = bw
    return out


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = _make(a.data.transpose(axes), (a,), "transpose")
    if out.requires_grad:
        def bw(g):
            a._accum(g.transpose(inverse))
        out._backward = bw
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries along ``axis`` starting at ``start``."""
    a = _coerce(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range on axis {axis} of {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(a.data[idx].copy(), (a,), "narrow")
    if out.requires_grad:
        def bw(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accum(full)
        out._backward = bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accum(g[tuple(idx)])
        out._backward = bw
    return out


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.data.shape[0]})")
    out = _make(table.data[ids], (table,), "embedding")
    if out.requires_grad:
        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accum(gt)
        out._backward = bw
    return out


def tsum(a) -> Tensor:
    a = _coerce(a)
    out = _make(np.asarray(a.data.sum()), (a,), "sum")
    if out.requires_grad:
        def bw(g):
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        out._backward = bw
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to 1."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _make(p, (a,), "softmax")
    if out.requires_grad:
        def bw(g):
            a._accum(p * (g - (p * g).sum(axis=axis, keepdims=True)))
        out._backward = bw
    return out


def masked_softmax(a, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask``-allowed entries.

    Rows with no allowed entry come out all-zero (and pass zero gradient),
    which is the contract for text positions that precede any image.
    """
    a = _coerce(a)
    mb = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    neg = np.where(mb, a.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(np.where(mb, a.data - m, -np.inf))
    z = e.sum(axis=-1, keepdims=True)
    p = e / np.where(z == 0.0, 1.0, z)
    out = _make(p, (a,), "masked_softmax")
    if out.requires_grad:
        def bw(g):
            a._accum(p * (g - (p * g).sum(axis=-1, keepdims=True)))
        out._backward = bw
    return out


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layernorm gain/bias must be shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), "layernorm")
    if out.requires_grad:
        def bw(g):
            if gain.requires_grad:
                gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias._accum(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gain.data
                dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
                x._accum(dx)
        out._backward = bw
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact Gaussian-CDF gelu: x * Phi(x)."""
    x = _coerce(x)
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = _make(x.data * phi_cdf, (x,), "gelu")
    if out.requires_grad:
        def bw(g):
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            x._accum(g * (phi_cdf + x.data * pdf))
        out._backward = bw
    return out


def tanh(x) -> Tensor:
    x = _coerce(x)
    t = np.tanh(x.data)
    out = _make(t, (x,), "tanh")
    if out.requires_grad:
        def bw(g):
            x._accum(g * (1.0 - t * t))
        out._backward = bw
    return out


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted mean over positions of -log softmax(logits)[target].

    ``weights`` defaults to all-ones (plain mean); training uses it for
    loss masking. Stable via log-sum-exp.
    """
    logits = _coerce(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [positions, vocab], got {logits.shape}")
    t, v = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (t,):
        raise ShapeError(f"targets must have shape ({t},)")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range [0, {v})")
    w = np.ones(t) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if wsum <= 0:
        raise ShapeError("cross_entropy needs at least one weighted position")
    m = logits.data.max(axis=1)
    lse = m + np.log(np.exp(logits.data - m[:, None]).sum(axis=1))
    nll = lse - logits.data[np.arange(t), targets]
    out = _make(np.asarray((w * nll).sum() / wsum), (logits,), "cross_entropy")
    if out.requires_grad:
        def bw(g):
            p = np.exp(logits.data - lse[:, None])
            p[np.arange(t), targets] -= 1.0
            logits._accum(g * (w[:, None] * p) / wsum)
        out._backward = bw
    return out


def bilinear_resample_grid(grid: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Align-corners bilinear resample of an [h, w, d] grid to [new_h, new_w, d].

    Output corner cells equal input corner cells exactly; channels are
    interpolated independently. Same-size calls return a bit-identical copy.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ShapeError(f"expected [h, w, d] grid, got shape {grid.shape}")
    h, w, _ = grid.shape
    if new_h < 1 or new_w < 1:
        raise ValueError("target grid dims must be >= 1")
    if (new_h, new_w) == (h, w):
        return grid.copy()

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys, xs = coords(h, new_h), coords(w, new_w)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = grid[y0][:, x0] * (1.0 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1.0 - fx) + grid[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy
