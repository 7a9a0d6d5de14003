"""Seeded 80:10:10 train/val/test partition and its text manifest."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..util import atomic_write

SECTIONS = ("train", "val", "test")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def section(self, name: str) -> tuple[str, ...]:
        if name not in SECTIONS:
            raise SplitError(f"unknown split section {name!r}; expected one of {SECTIONS}")
        return getattr(self, name)

    def to_text(self) -> str:
        lines = [f"SPLIT 1 seed={self.seed}"]
        for name in SECTIONS:
            lines.append(f"{name}:")
            lines.extend(self.section(name))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitManifest":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("SPLIT 1 seed="):
            raise SplitError("missing 'SPLIT 1 seed=<n>' header")
        try:
            seed = int(lines[0].split("=", 1)[1])
        except ValueError as e:
            raise SplitError(f"bad seed in header {lines[0]!r}") from e
        parts: dict[str, list[str]] = {}
        current = None
        for ln, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.endswith(":") and line[:-1] in SECTIONS:
                current = line[:-1]
                if current in parts:
                    raise SplitError(f"line {ln}: duplicate section {current!r}")
                parts[current] = []
            elif current is None:
                raise SplitError(f"line {ln}: id before any section header")
            else:
                parts[current].append(line.strip())
        missing = [s for s in SECTIONS if s not in parts]
        if missing:
            raise SplitError(f"missing sections: {', '.join(missing)}")
        seen: set[str] = set()
        for s in SECTIONS:
            dup = seen.intersection(parts[s])
            if dup:
                raise SplitError(f"ids appear in more than one section: {sorted(dup)[:5]}")
            seen.update(parts[s])
        return cls(seed, *(tuple(parts[s]) for s in SECTIONS))


def split_sizes(n: int) -> tuple[int, int, int]:
    n_val = n // 10
    n_test = n // 10
    return n - n_val - n_test, n_val, n_test


def split_dataset(ids, seed: int) -> SplitManifest:
    """Shuffle the (sorted) ids with ``seed``; val and test get floor(n/10) each, the rest trains."""
    ids = sorted(ids)
    if len(ids) < 3:
        raise SplitError(f"need at least 3 samples to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise SplitError("sample ids are not unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]
    n_train, n_val, _ = split_sizes(len(ids))
    return SplitManifest(seed, tuple(shuffled[:n_train]),
                         tuple(shuffled[n_train:n_train + n_val]),
                         tuple(shuffled[n_train + n_val:]))


def write_manifest(path, manifest: SplitManifest) -> None:
    atomic_write(path, manifest.to_text().encode("utf-8"))


def read_manifest(path) -> SplitManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SplitError(f"cannot read split manifest {path}: {e}") from e
    return SplitManifest.from_text(text)
