"""Elementwise and resampling operators with their paired backward rules."""
from __future__ import annotations

import contextlib
import enum

import numpy as np

from .tensor import ShapeError, Tensor4, check_4d


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep probabilities strictly inside (0, 1) even where the dtype would round to 0 or 1
    fi = np.finfo(out.dtype)
    return np.clip(out, fi.tiny, np.nextafter(out.dtype.type(1), out.dtype.type(0)), out=out)


def activation_forward(x: np.ndarray, kind: Activation | str) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(x, 0)
    return _sigmoid(x)


def activation_backward(x: np.ndarray, kind: Activation | str, grad_out: np.ndarray) -> np.ndarray:
    kind = Activation(kind)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    if kind is Activation.RELU:
        return np.where(x > 0, grad_out, 0).astype(x.dtype, copy=False)
    s = _sigmoid(x)
    return grad_out * s * (1 - s)


# when a list is installed here, relu appends the sign pattern of each input;
# finite-difference checks use it to reject steps that straddle the kink
_kink_log: list[np.ndarray] | None = None


@contextlib.contextmanager
def record_kinks():
    """Collect ``x > 0`` for every relu input evaluated inside the block."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def relu(x: Tensor4) -> Tensor4:
    out = np.maximum(x.data, 0)
    if _kink_log is not None:
        _kink_log.append(x.data > 0)

    def backward(g):
        x.accumulate(np.where(x.data > 0, g, 0).astype(x.dtype, copy=False))

    return Tensor4.from_op(out, (x,), backward)


def sigmoid(x: Tensor4) -> Tensor4:
    out = _sigmoid(x.data)

    def backward(g):
        x.accumulate(g * out * (1 - out))

    return Tensor4.from_op(out, (x,), backward)


def upsample_nearest_2x_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-D, got shape {x.shape}")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_nearest_2x_backward(grad_out: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = grad_out.shape
    if h2 % 2 or w2 % 2:
        raise ShapeError(f"grad_out spatial dims must be even, got {(h2, w2)}")
    return grad_out.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def upsample_nearest_2x(x: Tensor4) -> Tensor4:
    check_4d(x)
    out = upsample_nearest_2x_forward(x.data)

    def backward(g):
        x.accumulate(upsample_nearest_2x_backward(g))

    return Tensor4.from_op(out, (x,), backward)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.shape != b.shape:
        axes = [i for i, (u, v) in enumerate(zip(a.shape, b.shape)) if u != v]
        raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape} (axes {axes})")
    out = a.data + b.data

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return Tensor4.from_op(out, (a, b), backward)
