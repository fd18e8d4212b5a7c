"""
Seeded synthetic 16x16 grayscale images: two Gaussian blobs plus a fixed
high-contrast stripe pattern that drives heavy-tailed activations
"""
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..utils.rng import as_generator

IMAGE_SIZE = 16
# Columns carrying the fixed alternating stripe
STRIPE_COLUMNS = (3, 12)


@dataclass(frozen=True)
class SyntheticDataset:
    n: int
    seed: int = 0
    size: int = IMAGE_SIZE

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"Dataset size must be positive, got {self.n}")
        if self.size < max(STRIPE_COLUMNS) + 1:
            raise ValidationError(f"Image size {self.size} too small for the stripe pattern")

    def images(self) -> np.ndarray:
        """(n, 1, size, size) array with values in [-1, 1]; identical for identical seeds"""
        rng = as_generator(self.seed)
        coords = np.arange(self.size, dtype=np.float64)
        yy, xx = np.meshgrid(coords, coords, indexing="ij")

        centers = rng.uniform(3.0, self.size - 4.0, size=(self.n, 2, 2))
        widths = rng.uniform(1.5, 3.0, size=(self.n, 2))
        amps = rng.uniform(0.6, 1.0, size=(self.n, 2))

        canvas = np.zeros((self.n, self.size, self.size))
        for blob in range(2):
            cy = centers[:, blob, 0, None, None]
            cx = centers[:, blob, 1, None, None]
            sigma = widths[:, blob, None, None]
            canvas += amps[:, blob, None, None] * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))

        images = np.clip(2.0 * canvas - 1.0, -1.0, 1.0)
        stripe = np.where(np.arange(self.size) % 2 == 0, 1.0, -1.0)
        for col in STRIPE_COLUMNS:
            images[:, :, col] = stripe
        return images[:, None, :, :]

    def __len__(self) -> int:
        return self.n
