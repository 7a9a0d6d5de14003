"""2-D convolution: geometry, forward, exact backward, and the tape wrapper."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import ShapeError, Tensor4, check_4d

# below this output width the channel-vectorised kernels win
_ROW_KERNEL_MIN_WIDTH = 16


class Padding(str, enum.Enum):
    SAME = "same"
    NONE = "none"


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


@dataclass
class ConvParams:
    kernel: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    padding: Padding = Padding.SAME

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.dilation = _pair(self.dilation)
        self.padding = Padding(self.padding)


@dataclass(frozen=True)
class ConvGeometry:
    out_h: int
    out_w: int
    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int


def _axis_geometry(size: int, k: int, s: int, d: int, padding: Padding, axis: str):
    if s < 1 or d < 1:
        raise ShapeError(f"{axis}: stride and dilation must be >= 1 (got stride={s}, dilation={d})")
    eff = d * (k - 1) + 1
    if padding is Padding.SAME:
        if eff % 2 == 0:
            raise ShapeError(f"{axis}: Same padding needs an odd effective kernel, got {eff}")
        out = -(-size // s)
        total = max((out - 1) * s + eff - size, 0)
        before = total // 2
        return out, before, total - before
    out = (size - eff) // s + 1
    if size < eff or out < 1:
        raise ShapeError(f"{axis}: zero-extent output (input {size}, effective kernel {eff}, stride {s})")
    return out, 0, 0


def conv_geometry(in_h: int, in_w: int, kh: int, kw: int, p: ConvParams) -> ConvGeometry:
    oh, pt, pb = _axis_geometry(in_h, kh, p.stride[0], p.dilation[0], p.padding, "height (axis 2)")
    ow, pl, pr = _axis_geometry(in_w, kw, p.stride[1], p.dilation[1], p.padding, "width (axis 3)")
    return ConvGeometry(oh, ow, pt, pb, pl, pr)


def _validate(x: np.ndarray, p: ConvParams) -> ConvGeometry:
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-D, got shape {x.shape}")
    if p.kernel.ndim != 4:
        raise ShapeError(f"kernel must be 4-D (out, in, kh, kw), got shape {p.kernel.shape}")
    cout, cin, kh, kw = p.kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"channel (axis 1) mismatch: input has {x.shape[1]}, kernel expects {cin}")
    if p.bias.shape != (cout,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({cout},) out_channels")
    return conv_geometry(x.shape[2], x.shape[3], kh, kw, p)


def _pad(x: np.ndarray, g: ConvGeometry) -> np.ndarray:
    if g.pad_top or g.pad_bottom or g.pad_left or g.pad_right:
        return np.pad(x, ((0, 0), (0, 0), (g.pad_top, g.pad_bottom), (g.pad_left, g.pad_right)))
    return np.ascontiguousarray(x)


def _use_rows(p: ConvParams, g: ConvGeometry) -> bool:
    return p.stride == (1, 1) and g.out_w >= _ROW_KERNEL_MIN_WIDTH


def _rows_forward(xp, w, b, dh, dw, ho, wo):
    if w.shape[2] == 3 and w.shape[3] == 3:
        return _kernels.fwd_rows3x3(xp, w, b, dh, dw, ho, wo)
    return _kernels.fwd_rows(xp, w, b, dh, dw, ho, wo)


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    g = _validate(x, p)
    dt = x.dtype
    w = np.ascontiguousarray(p.kernel, dtype=dt)
    b = np.ascontiguousarray(p.bias, dtype=dt)
    xp = _pad(x, g)
    sh, sw = p.stride
    dh, dw = p.dilation
    if _use_rows(p, g):
        return _rows_forward(xp, w, b, dh, dw, g.out_h, g.out_w)
    xpt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    wt = np.ascontiguousarray(w.transpose(1, 2, 3, 0))
    return _kernels.fwd_chan(xpt, wt, b, sh, sw, dh, dw, g.out_h, g.out_w)


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray,
                    need_input: bool = True):
    """Return ``(grad_input, grad_kernel, grad_bias)``; ``grad_input`` is None when not needed."""
    g = _validate(x, p)
    expected = (x.shape[0], p.kernel.shape[0], g.out_h, g.out_w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    dt = x.dtype
    w = np.ascontiguousarray(p.kernel, dtype=dt)
    gout = np.ascontiguousarray(grad_out, dtype=dt)
    xp = _pad(x, g)
    hp, wp = xp.shape[2], xp.shape[3]
    sh, sw = p.stride
    dh, dw = p.dilation
    kh, kw = w.shape[2], w.shape[3]
    grad_input = None
    if _use_rows(p, g):
        grad_kernel = _kernels.bwd_kernel_rows(gout, xp, dh, dw, kh, kw)
        if need_input:
            # stride 1: the input gradient is a correlation of the zero-padded
            # output gradient with the spatially flipped, channel-swapped kernel
            eh, ew = dh * (kh - 1), dw * (kw - 1)
            gpad = np.pad(gout, ((0, 0), (0, 0),
                                 (eh - g.pad_top, eh - g.pad_bottom),
                                 (ew - g.pad_left, ew - g.pad_right)))
            wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            grad_input = _rows_forward(gpad, wflip, np.zeros(w.shape[1], dt), dh, dw,
                                       x.shape[2], x.shape[3])
    else:
        gout_t = np.ascontiguousarray(gout.transpose(0, 2, 3, 1))
        xpt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        grad_kernel = np.ascontiguousarray(
            _kernels.bwd_kernel_chan(gout_t, xpt, sh, sw, dh, dw, kh, kw).transpose(0, 3, 1, 2))
        if need_input:
            wt2 = np.ascontiguousarray(w.transpose(0, 2, 3, 1))
            gxp = _kernels.bwd_input_chan(gout_t, wt2, sh, sw, dh, dw, hp, wp).transpose(0, 3, 1, 2)
            grad_input = np.ascontiguousarray(
                gxp[:, :, g.pad_top:hp - g.pad_bottom, g.pad_left:wp - g.pad_right])
    grad_bias = gout.sum(axis=(0, 2, 3))
    return grad_input, grad_kernel, grad_bias


def conv2d(x: Tensor4, kernel: Tensor4, bias: Tensor4, stride=1, dilation=1,
           padding: Padding | str = Padding.SAME) -> Tensor4:
    check_4d(x)
    p = ConvParams(kernel.data, bias.data, stride, dilation, padding)
    out = conv2d_forward(x.data, p)

    def backward(gout: np.ndarray) -> None:
        gi, gk, gb = conv2d_backward(x.data, p, gout, need_input=x.requires_grad)
        if gi is not None:
            x.accumulate(gi)
        kernel.accumulate(gk)
        bias.accumulate(gb)

    return Tensor4.from_op(out, (x, kernel, bias), backward)
