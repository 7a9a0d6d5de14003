"""Samples, dataset directory layout, and resizing to the network input size."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import IMAGE_SUFFIXES, MASK_SUFFIXES, ImageReadError, read_image, read_mask
from .lanczos import lanczos_resize, nearest_resize


class DatasetError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (1, 3, h, w), values in [0, 1]
    mask: np.ndarray  # (1, 1, h, w), values in {0, 1}

    def __post_init__(self):
        if self.image.ndim != 4 or self.mask.ndim != 4:
            raise ValueError(f"{self.id}: image and mask must be 4-D")
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise ValueError(f"{self.id}: image {self.image.shape[2:]} and mask "
                             f"{self.mask.shape[2:]} spatial dims differ")

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


def load_sample(image_path, mask_path, sample_id: str | None = None) -> Sample:
    image = read_image(image_path)
    mask = read_mask(mask_path)
    if image.shape[1:] != mask.shape:
        raise ValueError(f"{image_path}: image is {image.shape[1]}x{image.shape[2]} but mask "
                         f"{mask_path} is {mask.shape[0]}x{mask.shape[1]}")
    return Sample(sample_id or Path(image_path).stem, image[None], mask[None, None])


def _find(directory: Path, stem: str, suffixes) -> Path | None:
    for suf in suffixes:
        p = directory / f"{stem}{suf}"
        if p.exists():
            return p
    return None


def scan_dataset(root) -> dict[str, tuple[Path, Path]]:
    """Map id -> (image path, mask path) for ``root/images`` and ``root/masks``.

    Every problem found is collected and raised together as a DatasetError.
    """
    root = Path(root)
    images, masks = root / "images", root / "masks"
    problems = []
    for d in (images, masks):
        if not d.is_dir():
            problems.append(f"missing directory {d}")
    if problems:
        raise DatasetError(problems)
    found = {}
    for p in sorted(images.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        m = _find(masks, p.stem, MASK_SUFFIXES)
        if m is None:
            problems.append(f"{p.name}: no mask in {masks}")
            continue
        found[p.stem] = (p, m)
    for m in sorted(masks.iterdir()):
        if m.suffix.lower() in MASK_SUFFIXES and m.stem not in found and \
                _find(images, m.stem, IMAGE_SUFFIXES) is None:
            problems.append(f"{m.name}: mask without image")
    if problems:
        raise DatasetError(problems)
    if not found:
        raise DatasetError([f"no images found in {images}"])
    return found


def load_dataset(root, ids=None) -> list[Sample]:
    entries = scan_dataset(root)
    wanted = list(entries) if ids is None else list(ids)
    out, problems = [], []
    for i in wanted:
        if i not in entries:
            problems.append(f"{i}: listed in split but absent from {root}")
            continue
        try:
            out.append(load_sample(*entries[i], sample_id=i))
        except (ImageReadError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        raise DatasetError(problems)
    return out


def resize_sample(s: Sample, size: tuple[int, int], a: int = 3) -> Sample:
    """Lanczos for the image (clipped to [0, 1]), nearest plus re-binarise for the mask."""
    if s.size == tuple(size):
        return s
    img = np.stack([lanczos_resize(ch, size, a) for ch in s.image[0]])
    mask = nearest_resize(s.mask[0, 0], size) >= 0.5
    return Sample(s.id, np.clip(img, 0, 1)[None].astype(np.float32),
                  mask[None, None].astype(np.float32))


def stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([s.image for s in samples]),
            np.concatenate([s.mask for s in samples]))
