"""Minimal dense-tensor engine with reverse-mode gradients."""
import os

from .conv import ConvParams, Padding, conv2d, conv2d_backward, conv2d_forward, conv_geometry
from .norm import BatchNormState, Mode, batchnorm, batchnorm_backward, batchnorm_forward
from .ops import (
    Activation,
    activation_backward,
    activation_forward,
    add,
    record_kinks,
    relu,
    sigmoid,
    upsample_nearest_2x,
    upsample_nearest_2x_backward,
    upsample_nearest_2x_forward,
)
from .optim import RmspropState, init_weights, rmsprop_step, rmsprop_update
from .tensor import NumericalError, ShapeError, Tensor4


def configure_threads(n: int | None = None) -> int:
    """Cap the compiled kernels' worker count (``DUCKNET_THREADS`` if ``n`` is None)."""
    import numba

    if n is None:
        env = os.environ.get("DUCKNET_THREADS")
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


__all__ = [
    "Activation", "BatchNormState", "ConvParams", "Mode", "NumericalError", "Padding",
    "RmspropState", "ShapeError", "Tensor4", "activation_backward", "activation_forward",
    "add", "batchnorm", "batchnorm_backward", "batchnorm_forward", "configure_threads",
    "conv2d", "conv2d_backward", "conv2d_forward", "conv_geometry", "init_weights",
    "record_kinks", "relu",
    "rmsprop_step", "rmsprop_update", "sigmoid", "upsample_nearest_2x",
    "upsample_nearest_2x_backward", "upsample_nearest_2x_forward",
]
