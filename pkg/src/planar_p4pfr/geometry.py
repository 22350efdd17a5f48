"""Small rigid-geometry helpers shared by the solver, simulator and refiner."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ._accel import jit


@dataclass(frozen=True, eq=False)
class PlaneTransform:
    """Rigid map from canonical plane coordinates ``(X, Y, 0)`` to 3D.

    ``p3d = R @ (X, Y, 0) + t``.
    """

    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> "PlaneTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy[:, 0:1] * self.R[:, 0] + xy[:, 1:2] * self.R[:, 1] + self.t

    def to_plane(self, pts3d: np.ndarray) -> np.ndarray:
        local = (np.asarray(pts3d, dtype=np.float64) - self.t) @ self.R
        return local[:, :2].copy()

    def compose_pose(self, R: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Turn a pose acting on plane coordinates into one acting on 3D points."""
        R3 = R @ self.R.T
        return R3, t - R3 @ self.t


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@jit
def so3_exp(w):
    theta = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    K = np.zeros((3, 3))
    K[0, 1] = -w[2]
    K[0, 2] = w[1]
    K[1, 0] = w[2]
    K[1, 2] = -w[0]
    K[2, 0] = -w[1]
    K[2, 1] = w[0]
    if theta < 1e-8:
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_aligning_z(normal: np.ndarray) -> np.ndarray:
    """Smallest rotation taking +z onto the unit vector ``normal`` (normal_z >= 0)."""
    n = np.asarray(normal, dtype=np.float64)
    c = float(n[2])
    v = np.array([-n[1], n[0], 0.0])
    K = skew(v)
    return np.eye(3) + K + (K @ K) / (1.0 + c)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def max_triangle_area(xy: np.ndarray) -> float:
    xy = np.asarray(xy, dtype=np.float64)
    return max((triangle_area(xy[i], xy[j], xy[k]) for i, j, k in combinations(range(len(xy)), 3)), default=0.0)


def diameter(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))
