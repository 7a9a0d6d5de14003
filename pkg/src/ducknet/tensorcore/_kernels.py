"""Compiled direct-convolution kernels.

Two layouts are provided.  The *row* kernels vectorise along output columns and
need unit stride; the *channel* kernels vectorise along channels
and handle any stride, which suits the small feature maps deep in the network.

Every output element of the forward kernels accumulates its products in the
order (in-channel, kernel-row, kernel-col) starting from zero, then adds the
bias once.  No fast-math flags are set, so LLVM neither reassociates nor fuses
multiply-adds and both layouts agree bit-for-bit with a scalar loop.
Parallel loops split only over output elements that own their accumulators.
"""
import numpy as np
from numba import njit, prange

_JIT = dict(parallel=True, cache=True, nogil=True)


@njit(**_JIT)
def fwd_rows(xp, w, b, dh, dw, ho, wo):
    n, cin = xp.shape[0], xp.shape[1]
    cout, _, kh, kw = w.shape
    out = np.empty((n, cout, ho, wo), dtype=xp.dtype)
    for job in prange(n * cout):
        i = job // cout
        o = job - i * cout
        acc = np.zeros((ho, wo), dtype=xp.dtype)
        for c in range(cin):
            for ki in range(kh):
                for kj in range(kw):
                    wv = w[o, c, ki, kj]
                    off = kj * dw
                    for y in range(ho):
                        src = xp[i, c, y + ki * dh, off:off + wo]
                        dst = acc[y]
                        for x in range(wo):
                            dst[x] += wv * src[x]
        bo = b[o]
        for y in range(ho):
            for x in range(wo):
                out[i, o, y, x] = acc[y, x] + bo
    return out


@njit(**_JIT)
def fwd_rows3x3(xp, w, b, dh, dw, ho, wo):
    # same per-element order as fwd_rows; the nine taps of one input channel
    # are chained on a register value instead of round-tripping through acc
    n, cin = xp.shape[0], xp.shape[1]
    cout = w.shape[0]
    out = np.empty((n, cout, ho, wo), dtype=xp.dtype)
    d2 = 2 * dw
    for job in prange(n * cout):
        i = job // cout
        o = job - i * cout
        acc = np.zeros((ho, wo), dtype=xp.dtype)
        for c in range(cin):
            w00 = w[o, c, 0, 0]
            w01 = w[o, c, 0, 1]
            w02 = w[o, c, 0, 2]
            w10 = w[o, c, 1, 0]
            w11 = w[o, c, 1, 1]
            w12 = w[o, c, 1, 2]
            w20 = w[o, c, 2, 0]
            w21 = w[o, c, 2, 1]
            w22 = w[o, c, 2, 2]
            for y in range(ho):
                a0 = xp[i, c, y, 0:wo]
                a1 = xp[i, c, y, dw:dw + wo]
                a2 = xp[i, c, y, d2:d2 + wo]
                yy = y + dh
                b0 = xp[i, c, yy, 0:wo]
                b1 = xp[i, c, yy, dw:dw + wo]
                b2 = xp[i, c, yy, d2:d2 + wo]
                yy += dh
                c0 = xp[i, c, yy, 0:wo]
                c1 = xp[i, c, yy, dw:dw + wo]
                c2 = xp[i, c, yy, d2:d2 + wo]
                dst = acc[y]
                for x in range(wo):
                    t = dst[x]
                    t += w00 * a0[x]
                    t += w01 * a1[x]
                    t += w02 * a2[x]
                    t += w10 * b0[x]
                    t += w11 * b1[x]
                    t += w12 * b2[x]
                    t += w20 * c0[x]
                    t += w21 * c1[x]
                    t += w22 * c2[x]
                    dst[x] = t
        bo = b[o]
        for y in range(ho):
            for x in range(wo):
                out[i, o, y, x] = acc[y, x] + bo
    return out


@njit(**_JIT)
def fwd_chan(xpt, wt, b, sh, sw, dh, dw, ho, wo):
    # xpt: (n, hp, wp, cin), wt: (cin, kh, kw, cout)
    n = xpt.shape[0]
    cin, kh, kw, cout = wt.shape
    out = np.empty((n, cout, ho, wo), dtype=xpt.dtype)
    for job in prange(n * ho):
        i = job // ho
        y = job - i * ho
        acc = np.empty(cout, dtype=xpt.dtype)
        for x in range(wo):
            acc[:] = 0
            for c in range(cin):
                for ki in range(kh):
                    yy = y * sh + ki * dh
                    for kj in range(kw):
                        xv = xpt[i, yy, x * sw + kj * dw, c]
                        wrow = wt[c, ki, kj]
                        for o in range(cout):
                            acc[o] += xv * wrow[o]
            for o in range(cout):
                out[i, o, y, x] = acc[o] + b[o]
    return out


@njit(**_JIT)
def bwd_input_chan(gout_t, wt2, sh, sw, dh, dw, hp, wp):
    # gout_t: (n, ho, wo, cout), wt2: (cout, kh, kw, cin)
    n, ho, wo, cout = gout_t.shape
    kh, kw, cin = wt2.shape[1], wt2.shape[2], wt2.shape[3]
    gxpt = np.zeros((n, hp, wp, cin), dtype=gout_t.dtype)
    for i in prange(n):
        for y in range(ho):
            for x in range(wo):
                for o in range(cout):
                    gv = gout_t[i, y, x, o]
                    if gv == 0:
                        continue
                    for ki in range(kh):
                        for kj in range(kw):
                            row = wt2[o, ki, kj]
                            dst = gxpt[i, y * sh + ki * dh, x * sw + kj * dw]
                            for c in range(cin):
                                dst[c] += gv * row[c]
    return gxpt


@njit(**_JIT)
def bwd_kernel_rows(gout, xp, dh, dw, kh, kw):
    n, cout, ho, wo = gout.shape
    cin = xp.shape[1]
    gw = np.empty((cout, cin, kh, kw), dtype=gout.dtype)
    for job in prange(cout * cin):
        o = job // cin
        c = job - o * cin
        racc = np.empty(wo, dtype=gout.dtype)
        for ki in range(kh):
            for kj in range(kw):
                racc[:] = 0
                off = kj * dw
                for i in range(n):
                    for y in range(ho):
                        g = gout[i, o, y]
                        src = xp[i, c, y + ki * dh, off:off + wo]
                        for x in range(wo):
                            racc[x] += g[x] * src[x]
                s = racc[0]
                for x in range(1, wo):
                    s += racc[x]
                gw[o, c, ki, kj] = s
    return gw


@njit(**_JIT)
def bwd_kernel_chan(gout_t, xpt, sh, sw, dh, dw, kh, kw):
    # returns (cout, kh, kw, cin)
    n, ho, wo, cout = gout_t.shape
    cin = xpt.shape[3]
    gwt = np.zeros((cout, kh, kw, cin), dtype=gout_t.dtype)
    for o in prange(cout):
        for i in range(n):
            for y in range(ho):
                for x in range(wo):
                    gv = gout_t[i, y, x, o]
                    if gv == 0:
                        continue
                    for ki in range(kh):
                        for kj in range(kw):
                            src = xpt[i, y * sh + ki * dh, x * sw + kj * dw]
                            dst = gwt[o, ki, kj]
                            for c in range(cin):
                                dst[c] += gv * src[c]
    return gwt
