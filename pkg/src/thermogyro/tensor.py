"""Dense numeric primitives for the odometry CNN.

Tensors are plain float64 numpy arrays. Every layer function accepts a single
sample (``[C, H, W]`` / ``[n]``) or a batch with one extra leading axis; the
batch axis is only there so the trainer can amortize numpy call overhead.
Gradients w.r.t. weights and biases are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

KERNEL = 5
PAD = KERNEL // 2


class ShapeError(ValueError):
    """Raised when a tensor does not have the shape a layer expects."""


class NumericError(FloatingPointError):
    """Raised when non-finite values would corrupt training."""


@dataclass
class LayerGrads:
    d_weights: np.ndarray
    d_bias: np.ndarray
    d_input: np.ndarray | None


def as_tensor(values, shape=None) -> np.ndarray:
    """Return a float64 array, optionally reshaped; shape entries must be >= 1."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"shape entries must be >= 1, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as {shape}")
        arr = arr.reshape(shape)
    return arr


def _batched(x: np.ndarray, sample_ndim: int, name: str) -> tuple[np.ndarray, bool]:
    if x.ndim == sample_ndim:
        return x[None], False
    if x.ndim == sample_ndim + 1:
        return x, True
    raise ShapeError(f"{name}: expected {sample_ndim} or {sample_ndim + 1} dims, got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution (5x5, stride 1, zero padding 2)
# --------------------------------------------------------------------------


def _check_conv(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> None:
    if weights.ndim != 4 or weights.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"conv weights must be [C_out, C_in, 5, 5], got {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[0]} filters")


def im2col(x: np.ndarray) -> np.ndarray:
    """[B, C, H, W] -> [C*25, B*H*W] patches of the zero-padded input.

    Channel-major layout: each copy below moves whole contiguous image rows,
    which is several times faster than a pixel-major gather.
    """
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD))).transpose(1, 0, 2, 3)
    cols = np.empty((c, KERNEL, KERNEL, b, h, w))
    for u in range(KERNEL):
        for v in range(KERNEL):
            cols[:, u, v] = xp[:, :, u : u + h, v : v + w]
    return cols.reshape(c * KERNEL * KERNEL, b * h * w)


def conv2d_forward(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, cols: np.ndarray | None = None
) -> np.ndarray:
    """Same-size 5x5 convolution (cross-correlation) with zero padding.

    ``cols`` may carry a precomputed ``im2col(x)`` (batched form).
    """
    xb, batched = _batched(np.asarray(x, dtype=np.float64), 3, "conv2d_forward")
    _check_conv(xb, weights, bias)
    b, _, h, w = xb.shape
    c_out = weights.shape[0]
    if cols is None:
        cols = im2col(xb)
    out = weights.reshape(c_out, -1) @ cols + bias[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, b, h, w).transpose(1, 0, 2, 3))
    return out if batched else out[0]


def conv2d_backward(
    x: np.ndarray, weights: np.ndarray, d_out: np.ndarray, need_input: bool = True,
    cols: np.ndarray | None = None,
) -> LayerGrads:
    xb, batched = _batched(np.asarray(x, dtype=np.float64), 3, "conv2d_backward")
    db, _ = _batched(np.asarray(d_out, dtype=np.float64), 3, "conv2d_backward")
    c_out, c_in = weights.shape[:2]
    _check_conv(xb, weights, np.zeros(c_out))
    b, _, h, w = xb.shape
    if db.shape != (b, c_out, h, w):
        raise ShapeError(f"d_output shape {db.shape} != forward output shape {(b, c_out, h, w)}")

    if cols is None:
        cols = im2col(xb)
    d_flat = db.transpose(1, 0, 2, 3).reshape(c_out, b * h * w)
    d_weights = (d_flat @ cols.T).reshape(weights.shape)
    d_bias = d_flat.sum(axis=1)

    d_input = None
    if need_input:
        d_cols = (weights.reshape(c_out, -1).T @ d_flat).reshape(c_in, KERNEL, KERNEL, b, h, w)
        dxp = np.zeros((c_in, b, h + 2 * PAD, w + 2 * PAD))
        for u in range(KERNEL):
            for v in range(KERNEL):
                dxp[:, :, u : u + h, v : v + w] += d_cols[:, u, v]
        d_input = np.ascontiguousarray(dxp[:, :, PAD : PAD + h, PAD : PAD + w].transpose(1, 0, 2, 3))
        d_input = d_input if batched else d_input[0]
    return LayerGrads(d_weights, d_bias, d_input)


# --------------------------------------------------------------------------
# 2x2 max pooling
# --------------------------------------------------------------------------


@dataclass
class PoolIndices:
    argmax: np.ndarray
    input_shape: tuple[int, ...]


def _corners(x: np.ndarray, h2: int, w2: int) -> list[np.ndarray]:
    # the four positions of every 2x2 window, in row-major order
    return [x[..., r : 2 * h2 : 2, c : 2 * w2 : 2] for r in (0, 1) for c in (0, 1)]


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, PoolIndices]:
    """Non-overlapping 2x2 max pool; an odd trailing row/column is dropped.

    Returns the pooled map and the within-window argmax (0..3, row-major),
    which ``maxpool2_backward`` needs together with the input shape.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ShapeError(f"maxpool2_forward: expected [C, H, W] or [B, C, H, W], got {x.shape}")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"max pooling needs H, W >= 2, got {h}x{w}")
    a, b, c, d = _corners(x, h // 2, w // 2)
    out = np.maximum(np.maximum(a, b), np.maximum(c, d))
    # earliest corner equal to the max wins ties
    idx = np.where(a == out, 0, np.where(b == out, 1, np.where(c == out, 2, 3))).astype(np.int8)
    return out, PoolIndices(idx, x.shape)


def maxpool2_backward(indices: PoolIndices, d_out: np.ndarray) -> np.ndarray:
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != indices.argmax.shape:
        raise ShapeError(f"d_output shape {d_out.shape} != pooled shape {indices.argmax.shape}")
    d_in = np.zeros(indices.input_shape)
    h2, w2 = d_out.shape[-2:]
    for k, view in enumerate(_corners(d_in, h2, w2)):
        view[...] = np.where(indices.argmax == k, d_out, 0.0)
    return d_in


# --------------------------------------------------------------------------
# fully connected
# --------------------------------------------------------------------------


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    xb, batched = _batched(np.asarray(x, dtype=np.float64), 1, "dense_forward")
    if weights.ndim != 2 or xb.shape[1] != weights.shape[1]:
        raise ShapeError(f"input length {xb.shape[1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[0]} units")
    out = xb @ weights.T + bias
    return out if batched else out[0]


def dense_backward(
    x: np.ndarray, weights: np.ndarray, d_out: np.ndarray, need_input: bool = True
) -> LayerGrads:
    xb, batched = _batched(np.asarray(x, dtype=np.float64), 1, "dense_backward")
    db, _ = _batched(np.asarray(d_out, dtype=np.float64), 1, "dense_backward")
    if weights.ndim != 2 or xb.shape[1] != weights.shape[1]:
        raise ShapeError(f"input length {xb.shape[1]} does not match weights {weights.shape}")
    if db.shape != (xb.shape[0], weights.shape[0]):
        raise ShapeError(f"d_output shape {db.shape} does not match {weights.shape[0]} units")
    d_weights = db.T @ xb
    d_bias = db.sum(axis=0)
    d_input = None
    if need_input:
        d_input = db @ weights
        d_input = d_input if batched else d_input[0]
    return LayerGrads(d_weights, d_bias, d_input)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, d_y: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(x) > 0.0, d_y, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(y: np.ndarray, d_y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return d_y * y * (1.0 - y)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moments for one flat parameter vector."""

    size: int
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    v: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ShapeError("Adam moments must match the parameter vector length")
        self.scratch = np.empty(self.size)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` is returned for convenience. Non-finite gradients raise
    :class:`NumericError` before anything is modified.
    """
    if params.shape != (state.size,) or grads.shape != params.shape:
        raise ShapeError(
            f"params {params.shape} / grads {grads.shape} do not match state size {state.size}"
        )
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient entries; training is corrupted")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    s = state.scratch
    # in-place updates: the parameter vector is large and this runs every batch
    state.m *= state.beta1
    np.multiply(grads, 1.0 - state.beta1, out=s)
    state.m += s
    state.v *= state.beta2
    np.multiply(grads, grads, out=s)
    s *= 1.0 - state.beta2
    state.v += s
    np.multiply(state.v, 1.0 / bc2, out=s)
    np.sqrt(s, out=s)
    s += state.eps
    np.divide(state.m, s, out=s)
    s *= state.lr / bc1
    params -= s
    return params


# --------------------------------------------------------------------------
# gradient oracle
# --------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = f(x.copy())
        x[i] = orig - h
        fm = f(x.copy())
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
