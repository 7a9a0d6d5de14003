"""DUCK-Net polyp segmentation on a self-contained numpy/numba tensor engine."""

__version__ = "0.1.0"
