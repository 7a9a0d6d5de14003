"""8-bit image and mask files (PNG, binary PPM/PGM) via Pillow."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..util import atomic_write

IMAGE_SUFFIXES = (".png", ".ppm")
MASK_SUFFIXES = (".png", ".pgm")


class ImageReadError(OSError):
    """File missing or not decodable as an 8-bit image."""


def _open(path) -> Image.Image:
    try:
        with Image.open(path) as im:
            im.load()
            return im.copy()
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise ImageReadError(f"{path}: cannot decode image ({exc})") from None


def read_image(path) -> np.ndarray:
    """RGB image as a (3, h, w) float32 array in [0, 1]."""
    im = _open(path).convert("RGB")
    return (np.asarray(im, dtype=np.float32) / 255.0).transpose(2, 0, 1).copy()


def read_mask(path) -> np.ndarray:
    """Gray mask as an (h, w) float32 array binarised at 0.5 (so 128 -> 1)."""
    im = _open(path).convert("L")
    return (np.asarray(im, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)


def to_uint8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _encode(im: Image.Image, path: Path) -> bytes:
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"{path}: unsupported image suffix (use .png, .ppm or .pgm)")
    buf = io.BytesIO()
    im.save(buf, format=fmt)
    return buf.getvalue()


def write_image(path, image: np.ndarray) -> None:
    """Write a (3, h, w) [0, 1] array."""
    path = Path(path)
    im = Image.fromarray(to_uint8(np.asarray(image).transpose(1, 2, 0)), mode="RGB")
    atomic_write(path, _encode(im, path))


def write_mask(path, mask: np.ndarray) -> None:
    """Write an (h, w) binary mask as 0/255."""
    path = Path(path)
    im = Image.fromarray(np.where(np.asarray(mask) >= 0.5, 255, 0).astype(np.uint8), mode="L")
    atomic_write(path, _encode(im, path))


def write_rgb_u8(path, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array."""
    path = Path(path)
    atomic_write(path, _encode(Image.fromarray(rgb, mode="RGB"), path))
