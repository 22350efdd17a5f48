"""Absolute pose of a camera with unknown focal length and one-parameter
division-model radial distortion from four coplanar points."""

from ._accel import BACKEND
from .errors import P4PError
from .geometry import PlaneTransform
from .poly import Poly, RootSet, real_roots
from .robust import RansacConfig, RobustResult, ransac_pose, refine
from .scene import GroundTruth, SceneConfig, benchmark_histogram, random_instance
from .solver import PoseSolution, SolverOptions, SolveReport, solve, solve_detailed

__all__ = [
    "BACKEND",
    "GroundTruth",
    "P4PError",
    "PlaneTransform",
    "Poly",
    "PoseSolution",
    "RansacConfig",
    "RobustResult",
    "RootSet",
    "SceneConfig",
    "SolveReport",
    "SolverOptions",
    "benchmark_histogram",
    "random_instance",
    "ransac_pose",
    "real_roots",
    "refine",
    "solve",
    "solve_detailed",
]
