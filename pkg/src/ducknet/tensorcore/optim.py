"""RMSprop update rule and fan-balanced uniform initialisation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import NumericalError, ShapeError, Tensor4


@dataclass
class RmspropState:
    """Per-parameter running average of squared gradients.

    ``sq_avg`` is filled lazily on the first step so the state can be created
    before the parameters are known.
    """

    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-7
    sq_avg: list[np.ndarray] = field(default_factory=list)


def rmsprop_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None],
                 state: RmspropState) -> None:
    """Update ``params`` in place.

    ``sq_avg <- rho*sq_avg + (1-rho)*g**2``;
    ``param <- param - lr*g/(sqrt(sq_avg)+eps)``.  A missing gradient counts as zero.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.sq_avg:
        state.sq_avg = [np.zeros_like(p) for p in params]
    if len(state.sq_avg) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.sq_avg)} slots, got {len(params)} params")
    for k, g in enumerate(grads):
        if g is None:
            continue
        if g.shape != params[k].shape or state.sq_avg[k].shape != params[k].shape:
            raise ShapeError(f"param {k}: shapes param {params[k].shape}, grad {g.shape}, "
                             f"sq_avg {state.sq_avg[k].shape} differ")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k}")
    for p, g, sq in zip(params, grads, state.sq_avg):
        if g is None:
            g = np.zeros_like(p)
        dt = p.dtype.type
        sq *= dt(state.rho)
        sq += dt(1 - state.rho) * g * g
        p -= dt(state.lr) * g / (np.sqrt(sq) + dt(state.eps))


def rmsprop_update(tensors: Sequence[Tensor4], state: RmspropState) -> None:
    rmsprop_step([t.data for t in tensors], [t.grad for t in tensors], state)


def fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    if len(shape) == 2:
        return shape[1], shape[0]
    if len(shape) == 1:
        return shape[0], shape[0]
    raise ValueError(f"cannot derive fan_in/fan_out from shape {shape}")


def init_weights(shape: tuple[int, ...], rng_seed: int | np.random.Generator,
                 dtype=np.float32) -> np.ndarray:
    """Uniform samples on [-L, L] with ``L = sqrt(6 / (fan_in + fan_out))``."""
    fan_in, fan_out = fans(tuple(shape))
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
