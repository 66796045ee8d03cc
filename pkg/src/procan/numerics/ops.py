"""Differentiable operations used by the CAN blocks and the classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import kernels
from .tensor import DTYPE, Tensor, as_tensor, make_result, parameter, unbroadcast


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large |x|."""
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc
    out = make_result(data, (a, b), "matmul")

    def _backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    out._backward = _backward
    return out


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding and no bias.

    ``x`` is (C_in, H, W) or (B, C_in, H, W); ``kernel`` is (C_out, C_in, k, k).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects (B,C,H,W) input and 4-d kernel, got {x.shape}, {kernel.shape}")
    b, c, h, w = xd.shape
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or c_in != c:
        raise DimensionError(f"conv2d kernel {kernel.shape} does not fit input {x.shape}")
    out_h = conv_output_size(h, k, stride, padding)
    out_w = conv_output_size(w, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv2d output size {out_h}x{out_w} is not positive for input {x.shape}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = kernels.im2col(xp, k, stride, out_h, out_w)
    wmat = kernel.data.reshape(c_out, -1)
    y = (cols @ wmat.T).reshape(b, out_h, out_w, c_out).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[0] if single else y)
    out = make_result(y, (x, kernel), "conv2d")

    def _backward():
        g = out.grad[None] if single else out.grad
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        if kernel.requires_grad:
            kernel._accumulate((g2.T @ cols).reshape(kernel.shape))
        if x.requires_grad:
            dxp = kernels.col2im(g2 @ wmat, xp.shape, k, stride, out_h, out_w)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp[0] if single else dxp)

    out._backward = _backward
    return out


def softmax_rows(s) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    s = as_tensor(s)
    shifted = s.data - s.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = make_result(p, (s,), "softmax_rows")

    def _backward():
        g = out.grad
        s._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    out._backward = _backward
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    out = make_result(np.where(active, x.data, 0.0), (x,), "relu")

    def _backward():
        x._accumulate(np.where(active, out.grad, 0.0))

    out._backward = _backward
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = stable_sigmoid(x.data)
    out = make_result(s, (x,), "sigmoid")

    def _backward():
        x._accumulate(out.grad * s * (1.0 - s))

    out._backward = _backward
    return out


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


@dataclass
class BatchNormState:
    """Learnable per-channel scale/shift plus running statistics."""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, name: str = "bn") -> "BatchNormState":
        return cls(
            scale=parameter(np.ones(channels), name=f"{name}.scale"),
            shift=parameter(np.zeros(channels), name=f"{name}.shift"),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )


def batchnorm2d(x, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalisation of a (B, C, H, W) batch.

    Train mode uses batch statistics (biased variance) and updates the
    running estimates; eval mode uses the running estimates only.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects (B,C,H,W), got {x.shape}")
    b, c = x.shape[:2]
    if c != state.scale.shape[0]:
        raise DimensionError(f"batchnorm2d has {state.scale.shape[0]} channels, input has {c}")
    scale = state.scale.data.reshape(1, c, 1, 1)
    shift = state.shift.data.reshape(1, c, 1, 1)

    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        out = make_result(xhat * scale + shift, (x, state.scale, state.shift), "batchnorm2d")

        def _backward_eval():
            g = out.grad
            if x.requires_grad:
                x._accumulate(g * scale * inv.reshape(1, c, 1, 1))
            if state.scale.requires_grad:
                state.scale._accumulate((g * xhat).sum(axis=(0, 2, 3)))
            if state.shift.requires_grad:
                state.shift._accumulate(g.sum(axis=(0, 2, 3)))

        out._backward = _backward_eval
        return out

    if mode != "train":
        raise ConfigurationError(f"unknown mode {mode!r}")
    if b < 2:
        raise ConfigurationError("batchnorm2d in train mode needs a batch of at least 2")
    n = b * x.shape[2] * x.shape[3]
    mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
    centered = x.data - mean
    var = (centered**2).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mean.reshape(c)
    state.running_var = (1 - m) * state.running_var + m * var.reshape(c) * (n / max(n - 1, 1))
    out = make_result(xhat * scale + shift, (x, state.scale, state.shift), "batchnorm2d")

    def _backward():
        g = out.grad
        if state.scale.requires_grad:
            state.scale._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if state.shift.requires_grad:
            state.shift._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * scale
            s1 = gx.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
            x._accumulate(inv * (gx - s1 / n - xhat * s2 / n))

    out._backward = _backward
    return out


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects (B,C,H,W), got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = make_result(x.data.mean(axis=(2, 3)), (x,), "global_avg_pool")

    def _backward():
        x._accumulate(np.broadcast_to(out.grad[:, :, None, None] / hw, x.shape))

    out._backward = _backward
    return out


def dropout(x, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in train mode needs a random generator")
    keep = rng.random(x.shape) >= p
    factor = keep / (1.0 - p)
    out = make_result(x.data * factor, (x,), "dropout")

    def _backward():
        x._accumulate(out.grad * factor)

    out._backward = _backward
    return out


def bce_loss(logits, labels) -> Tensor:
    """Mean binary cross-entropy computed directly from logits."""
    z = as_tensor(logits)
    y = np.asarray(labels, dtype=DTYPE).reshape(z.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError("bce_loss labels must be 0 or 1")
    zd = z.data
    per = np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd)))
    out = make_result(np.asarray(per.mean()), (z,), "bce_loss")

    def _backward():
        z._accumulate(out.grad * (stable_sigmoid(zd) - y) / zd.size)

    out._backward = _backward
    return out
