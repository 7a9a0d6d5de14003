"""Training-time augmentation: flips, colour jitter, and one composed affine warp.

Geometric transforms are applied identically to image and mask (image with
bilinear sampling, mask with nearest plus re-binarisation); colour jitter
touches the image only.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import Sample

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    brightness: tuple[float, float] = (0.6, 1.6)
    contrast: float = 0.2
    saturation: float = 0.1
    hue: float = 0.01
    rotation: tuple[float, float] = (-180.0, 180.0)
    translation: tuple[float, float] = (-0.125, 0.125)
    scale: tuple[float, float] = (0.5, 1.5)
    # asymmetric upper bound kept as published
    shear: tuple[float, float] = (-22.5, 22.0)


@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    rotation: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    shear: float = 0.0


def sample_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw one set of augmentation parameters (fixed draw order)."""
    flip_h = bool(rng.random() < cfg.flip_h)
    flip_v = bool(rng.random() < cfg.flip_v)
    brightness = rng.uniform(*cfg.brightness)
    contrast = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
    saturation = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
    hue = rng.uniform(-cfg.hue, cfg.hue)
    rotation = rng.uniform(*cfg.rotation)
    tx = rng.uniform(*cfg.translation)
    ty = rng.uniform(*cfg.translation)
    scale = rng.uniform(*cfg.scale)
    shear = rng.uniform(*cfg.shear)
    return AugmentParams(flip_h, flip_v, brightness, contrast, saturation, hue,
                         rotation, (tx, ty), scale, shear)


def sample_rng(seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    """Independent stream per (seed, epoch, sample) so results ignore processing order."""
    return np.random.default_rng([seed, epoch, zlib.crc32(sample_id.encode("utf-8"))])


# ---------------------------------------------------------------------------
# colour


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    mx = rgb.max(axis=0)
    mn = rgb.min(axis=0)
    delta = mx - mn
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(mx == r, ((g - b) / safe) % 6,
                 np.where(mx == g, (b - r) / safe + 2, (r - g) / safe + 4)) / 6.0
    h = np.where(delta > 0, h, 0.0)
    return np.stack([h, s, mx])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def color_jitter(image: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
                 saturation: float = 1.0, hue: float = 0.0) -> np.ndarray:
    """Jitter a (3, h, w) image in [0, 1]; factors are already-drawn values.

    Order: brightness, contrast, saturation, hue; clamped after each stage.
    ``contrast``/``saturation`` blend toward the image's mean luma and each
    pixel's luma respectively; ``hue`` is a fraction of a full turn.
    """
    img = np.asarray(image, dtype=np.float64)
    if brightness != 1.0:
        img = np.clip(img * brightness, 0, 1)
    if contrast != 1.0:
        mean = np.tensordot(LUMA, img, axes=1).mean()
        img = np.clip(contrast * img + (1 - contrast) * mean, 0, 1)
    if saturation != 1.0:
        gray = np.tensordot(LUMA, img, axes=1)[None]
        img = np.clip(saturation * img + (1 - saturation) * gray, 0, 1)
    if hue != 0.0:
        hsv = rgb_to_hsv(img)
        hsv[0] = (hsv[0] + hue) % 1.0
        img = np.clip(hsv_to_rgb(hsv), 0, 1)
    return img.astype(image.dtype, copy=False)


# ---------------------------------------------------------------------------
# geometry


def affine_matrix(shape: tuple[int, int], rotation: float = 0.0,
                  translate: tuple[float, float] = (0.0, 0.0), scale: float = 1.0,
                  shear: float = 0.0) -> np.ndarray:
    """Forward 3x3 map in (x, y) pixel coordinates: translate . rotate . shear . scale about the center.

    ``translate`` is a fraction of (width, height); angles are in degrees.
    """
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = np.deg2rad(rotation)
    ph = np.deg2rad(shear)
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    scl = np.diag([scale, scale, 1.0])
    shr = np.array([[1, np.tan(ph), 0], [0, 1, 0], [0, 0, 1.0]])
    rot = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1.0]])
    back = np.array([[1, 0, cx + translate[0] * w], [0, 1, cy + translate[1] * h], [0, 0, 1.0]])
    return back @ rot @ shr @ scl @ to_center


def _sample_bilinear(plane: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(ok, plane[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0.0)
            out += wy * wx * vals
    return out


def _sample_nearest(plane: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    xi = np.floor(sx + 0.5).astype(np.int64)
    yi = np.floor(sy + 0.5).astype(np.int64)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    return np.where(ok, plane[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0)


def affine_transform(plane: np.ndarray, rotation: float = 0.0,
                     translate: tuple[float, float] = (0.0, 0.0), scale: float = 1.0,
                     shear: float = 0.0, interpolation: str = "bilinear") -> np.ndarray:
    """Warp one (h, w) plane by inverse mapping; out-of-frame samples are 0."""
    if interpolation not in ("bilinear", "nearest"):
        raise ValueError(f"interpolation must be 'bilinear' or 'nearest', got {interpolation!r}")
    plane = np.asarray(plane)
    h, w = plane.shape
    inv = np.linalg.inv(affine_matrix((h, w), rotation, translate, scale, shear))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    sy = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    if interpolation == "nearest":
        return _sample_nearest(plane, sx, sy).astype(plane.dtype, copy=False)
    return _sample_bilinear(plane, sx, sy).astype(plane.dtype, copy=False)


def _is_identity_warp(p: AugmentParams) -> bool:
    return p.rotation == 0 and p.translate == (0.0, 0.0) and p.scale == 1 and p.shear == 0


def apply_params(sample: Sample, p: AugmentParams) -> Sample:
    img = sample.image[0]
    mask = sample.mask[0, 0]
    if p.flip_h:
        img, mask = img[:, :, ::-1], mask[:, ::-1]
    if p.flip_v:
        img, mask = img[:, ::-1, :], mask[::-1, :]
    if not _is_identity_warp(p):
        geo = dict(rotation=p.rotation, translate=p.translate, scale=p.scale, shear=p.shear)
        img = np.stack([affine_transform(ch, **geo, interpolation="bilinear") for ch in img])
        mask = affine_transform(mask, **geo, interpolation="nearest")
    mask = (mask >= 0.5).astype(sample.mask.dtype)
    img = color_jitter(np.ascontiguousarray(img), p.brightness, p.contrast, p.saturation, p.hue)
    return Sample(sample.id, np.ascontiguousarray(img)[None],
                  np.ascontiguousarray(mask)[None, None])


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    return apply_params(sample, sample_params(cfg, rng))
