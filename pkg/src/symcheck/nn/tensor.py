"""Tape-based reverse-mode autodiff over numpy arrays.

Ops record their parents and a backward closure; a single ``backward()``
call on a scalar loss walks the tape in reverse topological order.
Broadcasting is deliberately narrow: a leading batch axis on matmul
operands, row-wise bias in ``affine``, and explicit ``expand_batch`` —
nothing implicit beyond that.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError

_grad_enabled = True
_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard run after every op (on by default)."""
    global _finite_checks
    _finite_checks = enabled


@contextlib.contextmanager
def no_grad():
    """Run forward computations without recording the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    # convenience operators; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape and b.data.ndim not in (0,):
        raise ContractError(f"add: shape mismatch {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward(g):
        _accum(a, g)
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape and b.data.ndim not in (0,):
        raise ContractError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    data = a.data - b.data

    def backward(g):
        _accum(a, g)
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape and b.data.ndim not in (0,):
        raise ContractError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    data = a.data * b.data

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    data = 1.0 / a.data

    def backward(g):
        _accum(a, -g * data * data)

    return _make(data, (a,), backward, "reciprocal")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy @ semantics restricted to 2-D operands plus a leading batch axis."""
    if a.data.ndim not in (2, 3) or b.data.ndim not in (2, 3):
        raise ContractError(
            f"matmul: operands must be 2-D or batched 3-D, got "
            f"{a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractError(
            f"matmul: inner extents differ, {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + bias, bias broadcast across rows (and batch)."""
    if b.data.ndim != 1 or b.data.shape[0] != w.data.shape[-1]:
        raise ContractError(
            f"affine: bias {b.data.shape} does not match weight {w.data.shape}")
    y = matmul(x, w)
    data = y.data + b.data

    def backward(g):
        _accum(y, g)
        _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(data, (y, b), backward, "affine")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                    np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                       np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))
        _accum(a, g * sig)

    return _make(data, (a,), backward, "softplus")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / data)

    return _make(data, (a,), backward, "sqrt")


def xlogy(a: Tensor, b: Tensor) -> Tensor:
    """a * log(b) with the 0*log(0)=0 convention where a == 0."""
    mask = a.data != 0
    safe_b = np.where(mask, b.data, 1.0)
    data = np.where(mask, a.data * np.log(safe_b), 0.0)

    def backward(g):
        _accum(a, g * np.where(mask, np.log(safe_b), 0.0))
        _accum(b, g * np.where(mask, a.data / safe_b, 0.0))

    return _make(data, (a, b), backward, "xlogy")


def sum_axis(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) == 0
                   else np.full(a.data.shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(data, (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return mul(sum_axis(a), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward, "reshape")


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes (for K^T in attention)."""
    data = np.swapaxes(a.data, -1, -2)

    def backward(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(data, (a,), backward, "swap_last")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _make(data, (a,), backward, "narrow")


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ContractError(
            f"concat_last: leading shapes differ, {a.shape} vs {b.shape}")
    data = np.concatenate([a.data, b.data], axis=-1)
    na = a.data.shape[-1]

    def backward(g):
        _accum(a, g[..., :na])
        _accum(b, g[..., na:])

    return _make(data, (a, b), backward, "concat_last")


def expand_batch(a: Tensor, batch: int) -> Tensor:
    """Tile a (R, C) tensor to (batch, R, C); gradient sums over the batch."""
    if a.data.ndim != 2:
        raise ContractError(f"expand_batch expects 2-D input, got {a.shape}")
    data = np.broadcast_to(a.data, (batch,) + a.data.shape)

    def backward(g):
        _accum(a, g.sum(axis=0))

    return _make(data.copy(), (a,), backward, "expand_batch")


def _softmax_data(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    data = _softmax_data(a.data)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward, "softmax")


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis after adding a constant additive mask.

    Entries holding a large negative mask value underflow to exactly zero
    weight, so forbidden positions carry no attention and no gradient.
    """
    if mask.shape != a.data.shape[-mask.ndim:]:
        raise ContractError(
            f"masked_softmax: mask {mask.shape} does not align with {a.shape}")
    data = _softmax_data(a.data + mask)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward, "masked_softmax")


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant that broadcasts within a's shape."""
    data = a.data * c
    if data.shape != a.data.shape:
        raise ContractError(
            f"mul_const: constant {np.shape(c)} enlarges {a.shape}")

    def backward(g):
        _accum(a, g * c)

    return _make(data, (a,), backward, "mul_const")


def masked_log_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Log-probabilities of masked_softmax, computed without exponentiating.

    Masked positions come out near the mask value (finite), so downstream
    0 * log terms stay NaN-free.
    """
    x = a.data + mask
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), backward, "masked_log_softmax")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), backward, "log_softmax")


def bce_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise Bernoulli negative log-likelihood from logits.

    softplus(x) - t*x, computed stably; targets are constants in {0, 1}.
    """
    x = logits.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x))) - targets * x

    def backward(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                       np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))
        _accum(logits, g * (sig - targets))

    return _make(data, (logits,), backward, "bce_logits")
