"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from locvalid.tensor.core import Tensor, backward
from locvalid.tensor.ops import hadamard

# Denominator floor: gradients smaller than this are compared in absolute terms.
REL_FLOOR = 1e-3


def _scalarize(out: Tensor, probe: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out.reshape(())
    return hadamard(out, Tensor(probe)).sum()


def numeric_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], probe=None, eps: float = 1e-6):
    """Central differences of ``sum(fn(*inputs) * probe)`` for each input."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    def value(arrs):
        return _scalarize(fn(*[Tensor(a) for a in arrs]), probe).item()

    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + eps
            fp = value(arrays)
            a[idx] = orig - eps
            fm = value(arrays)
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], probe=None):
    ts = [Tensor(a, requires_grad=True) for a in inputs]
    backward(_scalarize(fn(*ts), probe))
    return [t.grad if t.grad is not None else np.zeros(t.shape) for t in ts]


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(fn, inputs, rng: np.random.Generator | None = None, eps: float = 1e-6) -> float:
    """Largest per-element relative error between backward and finite differences.

    Non-scalar outputs are reduced with a random probe tensor so every output
    element contributes to the check.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    out = fn(*[Tensor(a) for a in inputs])
    probe = None if out.size == 1 else rng.normal(size=out.shape)
    ana = analytic_gradients(fn, inputs, probe)
    num = numeric_gradients(fn, inputs, probe, eps)
    return max(max_relative_error(x, y) for x, y in zip(ana, num))
