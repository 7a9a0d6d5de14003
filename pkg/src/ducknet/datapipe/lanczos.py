"""Separable Lanczos resampling.

Source coordinates use center alignment: output pixel ``i`` maps to
``(i + 0.5) * scale - 0.5`` where ``scale = in / out``.  When shrinking, the
kernel is stretched by ``scale`` so it also acts as the anti-aliasing filter.
Taps falling outside the image are dropped and the remaining weights
renormalised to sum to one.
"""
from __future__ import annotations

import numpy as np


def lanczos_kernel(x: np.ndarray, a: int = 3) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


def lanczos_weights(n_in: int, n_out: int, a: int = 3) -> np.ndarray:
    """(n_out, n_in) matrix whose rows are the normalised taps of each output pixel."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be >= 1, got {n_in} -> {n_out}")
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.arange(n_in)
    w = lanczos_kernel((src[None, :] - centers[:, None]) / stretch, a)
    sums = w.sum(axis=1, keepdims=True)
    return w / sums


def lanczos_resize(plane: np.ndarray, size: tuple[int, int], a: int = 3) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    h, w = size
    if h < 1 or w < 1:
        raise ValueError(f"target size must be >= 1, got {size}")
    wy = lanczos_weights(plane.shape[0], h, a)
    wx = lanczos_weights(plane.shape[1], w, a)
    return wy @ plane @ wx.T


def nearest_resize(plane: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    ys = np.minimum(((np.arange(h) + 0.5) * plane.shape[0] / h).astype(int), plane.shape[0] - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * plane.shape[1] / w).astype(int), plane.shape[1] - 1)
    return plane[ys[:, None], xs[None, :]]
