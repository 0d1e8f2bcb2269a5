"""Differentiable operations used by the attention networks.

Every function takes and returns :class:`~locvalid.tensor.core.Tensor` values
and registers the exact vector-Jacobian product of the operation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from locvalid.exceptions import DimensionError, EmptyStackError, NumericError
from locvalid.tensor.core import Tensor, as_tensor

BCE_EPS = 1e-12


def _require_ndim(t: Tensor, ndim: int, what: str) -> None:
    if t.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {t.shape}", axis="ndim")


def conv1x1(x, weight, bias) -> Tensor:
    """Channel-mixing 1x1 convolution.

    ``out[b, o, i, j] = bias[o] + sum_k weight[o, k] * x[b, k, i, j]``.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require_ndim(x, 4, "conv1x1 input")
    _require_ndim(weight, 2, "conv1x1 weight")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv1x1: weight has {weight.shape[1]} input channels, input has {x.shape[1]}",
            axis="channel",
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"conv1x1: bias shape {bias.shape} does not match {weight.shape[0]} output channels",
            axis="channel",
        )
    xd, wd = x.data, weight.data
    out = np.einsum("ok,bkij->boij", wd, xd) + bias.data[None, :, None, None]

    def vjp(g):
        return (
            np.einsum("ok,boij->bkij", wd, g),
            np.einsum("boij,bkij->ok", g, xd),
            g.sum(axis=(0, 2, 3)),
        )

    return Tensor._from_op(out, (x, weight, bias), vjp, "conv1x1")


def conv3x3(x, weight, bias, stride: int = 1) -> Tensor:
    """3x3 convolution with one pixel of zero padding.

    Only used by the backbone stages; output size is ``(h - 1) // stride + 1``.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require_ndim(x, 4, "conv3x3 input")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise DimensionError(f"conv3x3 weight must be (c_out, c_in, 3, 3), got {weight.shape}", axis="kernel")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv3x3: weight has {weight.shape[1]} input channels, input has {x.shape[1]}",
            axis="channel",
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError("conv3x3: bias does not match output channels", axis="channel")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    b, c, h, w = x.shape
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wd = weight.data
    out = np.empty((b, wd.shape[0], ho, wo))
    out[...] = bias.data[None, :, None, None]
    span_i, span_j = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + span_i:stride, dj:dj + span_j:stride]
            out += np.einsum("ok,bkij->boij", wd[:, :, di, dj], patch, optimize=True)

    def vjp(g):
        gx = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for di in range(3):
            for dj in range(3):
                sl = (slice(None), slice(None), slice(di, di + span_i, stride), slice(dj, dj + span_j, stride))
                gx[sl] += np.einsum("ok,boij->bkij", wd[:, :, di, dj], g, optimize=True)
                gw[:, :, di, dj] = np.einsum("boij,bkij->ok", g, xp[sl], optimize=True)
        return gx[:, :, 1:-1, 1:-1], gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, (x, weight, bias), vjp, "conv3x3")


def softmax_per_map(x) -> Tensor:
    """Softmax over the spatial positions of every ``(b, c)`` feature map."""
    x = as_tensor(x)
    _require_ndim(x, 4, "softmax_per_map input")
    if x.shape[2] * x.shape[3] < 1:
        raise DimensionError("softmax_per_map needs at least one pixel per map", axis="spatial")
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax_per_map received non-finite values")
    e = np.exp(xd - xd.max(axis=(2, 3), keepdims=True))
    y = e / e.sum(axis=(2, 3), keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=(2, 3), keepdims=True)),)

    return Tensor._from_op(y, (x,), vjp, "softmax_per_map")


def _map_argmax_onehot(xd: np.ndarray) -> np.ndarray:
    b, c, h, w = xd.shape
    flat = xd.reshape(b, c, h * w)
    onehot = np.zeros_like(flat)
    np.put_along_axis(onehot, flat.argmax(axis=2)[..., None], 1.0, axis=2)
    return onehot.reshape(xd.shape)


def max_normalize_per_map(x) -> Tensor:
    """Divide each ``(b, c)`` map by its own maximum.

    The gradient includes the denominator term; the maximum's subgradient goes
    to the lowest linear index when several pixels tie.
    """
    x = as_tensor(x)
    _require_ndim(x, 4, "max_normalize_per_map input")
    xd = x.data
    m = xd.max(axis=(2, 3), keepdims=True)
    if not np.all(m > 0):
        raise NumericError("max_normalize_per_map requires a strictly positive maximum in every map")
    y = xd / m

    def vjp(g):
        onehot = _map_argmax_onehot(xd)
        dm = -(g * xd).sum(axis=(2, 3), keepdims=True) / (m * m)
        return (g / m + onehot * dm,)

    return Tensor._from_op(y, (x,), vjp, "max_normalize_per_map")


def hadamard(a, b) -> Tensor:
    """Element-wise product of two tensors of identical shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ", axis="shape")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "hadamard")


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial axes: ``(b, c, h, w) -> (b, c)``."""
    x = as_tensor(x)
    _require_ndim(x, 4, "global_avg_pool input")
    b, c, h, w = x.shape
    if h * w < 1:
        raise DimensionError("global_avg_pool needs at least one pixel", axis="spatial")
    n = h * w

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / n, (b, c, h, w)).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), vjp, "global_avg_pool")


def linear(x, weight, bias) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape ``(b, n)``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require_ndim(x, 2, "linear input")
    _require_ndim(weight, 2, "linear weight")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"linear: weight expects {weight.shape[1]} features, input has {x.shape[1]}", axis="feature"
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError("linear: bias does not match output width", axis="feature")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data
    return Tensor._from_op(out, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)), "linear")


def max_over_slices(x) -> Tensor:
    """Element-wise maximum over the slice axis: ``(s, f) -> (1, f)``.

    Gradient flows to the lowest-index slice attaining each column maximum.
    """
    x = as_tensor(x)
    _require_ndim(x, 2, "max_over_slices input")
    if x.shape[0] == 0:
        raise EmptyStackError("max_over_slices received an empty slice stack")
    xd = x.data
    idx = xd.argmax(axis=0)
    out = xd[idx, np.arange(xd.shape[1])][None, :]

    def vjp(g):
        gx = np.zeros_like(xd)
        gx[idx, np.arange(xd.shape[1])] = g[0]
        return (gx,)

    return Tensor._from_op(out, (x,), vjp, "max_over_slices")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; used to fuse planes."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise EmptyStackError("concat received no tensors")
    arrays = [t.data for t in ts]
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}", axis=axis)
    cuts = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return Tensor._from_op(
        np.concatenate(arrays, axis=axis), ts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat"
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._from_op(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_bce(p, y: float, pos_weight: float = 1.0) -> Tensor:
    """Class-weighted binary cross-entropy of probability ``p`` against label ``y``.

    ``-(w_pos * y * log p + (1 - y) * log(1 - p))`` with ``p`` clamped to
    ``[1e-12, 1 - 1e-12]``. Returns the sum over elements of ``p``.
    """
    p = as_tensor(p)
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    pd = p.data
    yd = np.broadcast_to(np.asarray(y, dtype=np.float64), pd.shape)
    pc = np.clip(pd, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(pos_weight * yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc)).sum()
    inside = (pd >= BCE_EPS) & (pd <= 1.0 - BCE_EPS)

    def vjp(g):
        d = -(pos_weight * yd / pc) + (1.0 - yd) / (1.0 - pc)
        return (g * d * inside,)

    return Tensor._from_op(np.asarray(loss), (p,), vjp, "weighted_bce")
