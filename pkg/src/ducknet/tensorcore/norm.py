"""Batch normalisation over (batch, height, width) per channel."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor4, check_4d

DEFAULT_MOMENTUM = 0.99
DEFAULT_EPSILON = 1e-5


class Mode(str, enum.Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass
class BatchNormState:
    gamma: Tensor4
    beta: Tensor4
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = DEFAULT_MOMENTUM
    epsilon: float = DEFAULT_EPSILON
    mode: Mode = field(default=Mode.TRAIN)

    @classmethod
    def create(cls, channels: int, dtype=np.float32, name: str | None = None, **kw):
        return cls(
            gamma=Tensor4(np.ones(channels, dtype), requires_grad=True,
                          name=f"{name}.gamma" if name else None),
            beta=Tensor4(np.zeros(channels, dtype), requires_grad=True,
                         name=f"{name}.beta" if name else None),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kw,
        )

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def _check(x: np.ndarray, s: BatchNormState) -> None:
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-D, got shape {x.shape}")
    if x.shape[1] != s.channels or s.beta.data.shape[0] != s.channels:
        raise ShapeError(f"channel (axis 1) mismatch: input has {x.shape[1]}, "
                         f"gamma/beta have {s.channels}/{s.beta.data.shape[0]}")


def _bcast(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1)


def batchnorm_forward(x: np.ndarray, s: BatchNormState, mode: Mode | str | None = None,
                      update_stats: bool = True) -> np.ndarray:
    """Normalise ``x``; in train mode the running statistics are updated in place."""
    _check(x, s)
    mode = Mode(mode or s.mode)
    dt = x.dtype
    gamma = s.gamma.data.astype(dt, copy=False)
    beta = s.beta.data.astype(dt, copy=False)
    if mode is Mode.INFER:
        mean = s.running_mean.astype(dt, copy=False)
        var = s.running_var.astype(dt, copy=False)
    else:
        mean = x.mean(axis=(0, 2, 3))
        var = ((x - _bcast(mean)) ** 2).mean(axis=(0, 2, 3))
        if update_stats:
            m = s.momentum
            s.running_mean[...] = m * s.running_mean + (1 - m) * mean
            s.running_var[...] = m * s.running_var + (1 - m) * var
    inv = 1.0 / np.sqrt(var + dt.type(s.epsilon))
    return (x - _bcast(mean)) * _bcast(inv * gamma) + _bcast(beta)


def batchnorm_backward(x: np.ndarray, s: BatchNormState, grad_out: np.ndarray):
    """Gradients of the train-mode (batch statistics) path: ``(grad_input, grad_gamma, grad_beta)``."""
    _check(x, s)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    dt = x.dtype
    gamma = s.gamma.data.astype(dt, copy=False)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3))
    xc = x - _bcast(mean)
    var = (xc ** 2).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + dt.type(s.epsilon))
    xhat = xc * _bcast(inv)
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_input = _bcast(gamma * inv / m) * (
        m * grad_out - _bcast(grad_beta) - xhat * _bcast(grad_gamma))
    return grad_input, grad_gamma, grad_beta


def _infer_backward(s: BatchNormState, x: np.ndarray, grad_out: np.ndarray):
    dt = x.dtype
    inv = 1.0 / np.sqrt(s.running_var.astype(dt) + dt.type(s.epsilon))
    xhat = (x - _bcast(s.running_mean.astype(dt))) * _bcast(inv)
    return (grad_out * _bcast(inv * s.gamma.data.astype(dt)),
            (grad_out * xhat).sum(axis=(0, 2, 3)), grad_out.sum(axis=(0, 2, 3)))


def batchnorm(x: Tensor4, s: BatchNormState, mode: Mode | str | None = None) -> Tensor4:
    check_4d(x)
    mode = Mode(mode or s.mode)
    out = batchnorm_forward(x.data, s, mode)

    def backward(g):
        if mode is Mode.TRAIN:
            gi, gg, gb = batchnorm_backward(x.data, s, g)
        else:
            gi, gg, gb = _infer_backward(s, x.data, g)
        x.accumulate(gi)
        s.gamma.accumulate(gg)
        s.beta.accumulate(gb)

    return Tensor4.from_op(out, (x, s.gamma, s.beta), backward)
