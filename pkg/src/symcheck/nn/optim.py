"""Named parameter store and Adam updates."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NonFiniteError
from .tensor import Tensor


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator,
                   dtype=np.float64) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParamStore:
    """Named trainable tensors plus per-parameter Adam moments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already exists")
        t = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            src = np.asarray(arrays[name], dtype=self.dtype)
            if src.shape != t.data.shape:
                raise ContractError(
                    f"parameter {name!r}: shape {src.shape} != {t.data.shape}")
            t.data = src.copy()


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter with a gradient."""
    store.step_count += 1
    t = store.step_count
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
