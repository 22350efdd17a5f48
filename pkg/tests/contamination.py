"""Contaminated correspondence sets for the robust-layer experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from planar_p4pfr.scene import SceneConfig, random_instance

PIXEL_RADIUS = 500.0


@dataclass(eq=False)
class Contaminated:
    world3d: np.ndarray
    image: np.ndarray
    inliers: np.ndarray
    R: np.ndarray
    t: np.ndarray
    f: float
    k: float


def contaminated_instance(seed: int, n_inliers: int = 12, n_outliers: int = 8, sigma: float = 0.5) -> Contaminated:
    """Pixel-scaled scene, Gaussian noise on inliers, uniform outliers in the image box."""
    n = n_inliers + n_outliers
    gt = random_instance(SceneConfig(seed=seed, n_points=n))
    rng = np.random.default_rng([seed, 1])
    s = PIXEL_RADIUS / np.sqrt(np.mean(np.sum(gt.image**2, axis=1)))
    image = gt.image * s + rng.normal(scale=sigma, size=gt.image.shape)
    inliers = np.zeros(n, dtype=bool)
    inliers[rng.permutation(n)[:n_inliers]] = True
    lo, hi = image[inliers].min(axis=0), image[inliers].max(axis=0)
    image[~inliers] = rng.uniform(lo, hi, size=(n_outliers, 2))
    return Contaminated(gt.world3d, image, inliers, gt.R, gt.t, gt.f * s, gt.k / s**2)
