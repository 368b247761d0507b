"""Synthetic image pairs for demos and self-contained training checks.

Reference frames are smooth random fields (low-resolution noise upsampled
bilinearly) kept inside [0.05, 0.95]; degraded partners are gamma-darkened
and scaled, which a small enhancer can learn to invert.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, resize_bilinear
from .training import ImagePair

__all__ = ["smooth_image", "darkened_pair", "darkened_dataset"]


def smooth_image(rng: np.random.Generator, h: int, w: int) -> Tensor:
    """A (1, 3, h, w) smooth random field in [0.05, 0.95]; h, w multiples of 4."""
    coarse = Tensor(rng.uniform(0.0, 1.0, (1, 3, h // 4, w // 4)))
    smooth = resize_bilinear(resize_bilinear(coarse, 2.0), 2.0)
    return Tensor(0.05 + 0.9 * smooth.data)


def darkened_pair(rng: np.random.Generator, h: int, w: int,
                  pair_id: str = "") -> ImagePair:
    """Reference frame plus a gamma-darkened, dimmed copy of it."""
    high = smooth_image(rng, h, w)
    gamma = rng.uniform(1.8, 2.4)
    scale = rng.uniform(0.25, 0.45)
    low = Tensor(np.clip(scale * high.data ** gamma, 0.0, 1.0))
    return ImagePair(low, high, pair_id)


def darkened_dataset(seed: int, n_pairs: int, h: int, w: int,
                     prefix: str = "pair") -> list[ImagePair]:
    """n_pairs reproducible darkened pairs."""
    rng = np.random.default_rng(seed)
    return [darkened_pair(rng, h, w, f"{prefix}_{i:03d}") for i in range(n_pairs)]
