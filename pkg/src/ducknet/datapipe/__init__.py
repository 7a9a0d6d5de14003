"""Image/mask I/O, resampling, splits, and augmentation."""
