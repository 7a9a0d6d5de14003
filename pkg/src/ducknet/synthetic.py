"""Seeded synthetic polyp fixtures: elliptical blobs on a textured background."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .datapipe.dataset import Sample
from .datapipe.imageio import write_image, write_mask


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    for _ in range(6):
        fy, fx = rng.uniform(0.02, 0.18, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    field /= np.abs(field).max() + 1e-12
    return field


def make_sample(rng: np.random.Generator, size: tuple[int, int] = (64, 64),
                max_blobs: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image (3,h,w) in [0,1], mask (h,w) in {0,1})``."""
    h, w = size
    tex = _texture(rng, h, w)
    base = np.array([0.55, 0.32, 0.28]) + rng.uniform(-0.05, 0.05, 3)
    image = base[:, None, None] + 0.12 * tex[None] + rng.normal(0, 0.02, (3, h, w))
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(rng.integers(1, max_blobs + 1)):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        ay, ax = rng.uniform(0.08, 0.22) * h, rng.uniform(0.08, 0.22) * w
        th = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        r2 = (u / ax) ** 2 + (v / ay) ** 2
        inside = r2 <= 1.0
        mask |= inside
        shade = np.clip(1.0 - 0.35 * r2, 0, 1)
        tint = np.array([0.85, 0.45, 0.35]) + rng.uniform(-0.05, 0.05, 3)
        for ch in range(3):
            image[ch][inside] = (tint[ch] * (0.75 + 0.25 * shade) + 0.05 * tex)[inside]
    return np.clip(image, 0, 1), mask.astype(np.float32)


def make_samples(n: int, seed: int, size: tuple[int, int] = (64, 64)) -> list[Sample]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        img, m = make_sample(rng, size)
        # round through 8 bits so in-memory fixtures equal their files
        img = np.round(img * 255) / 255
        out.append(Sample(f"synth{k:04d}", img[None].astype(np.float32),
                          m[None, None].astype(np.float32)))
    return out


def write_dataset(root, n: int, seed: int, size: tuple[int, int] = (64, 64)) -> list[str]:
    """Write ``root/images/<id>.ppm`` and ``root/masks/<id>.pgm``; returns the ids."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in make_samples(n, seed, size):
        write_image(root / "images" / f"{s.id}.ppm", s.image[0])
        write_mask(root / "masks" / f"{s.id}.pgm", s.mask[0, 0])
        ids.append(s.id)
    return ids
