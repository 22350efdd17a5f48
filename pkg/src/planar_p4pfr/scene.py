"""Synthetic planar scenes, exact division-model projection and the benchmark.

Generator (documented because the distribution is this package's choice):

* plane points uniform in ``[-world_extent, world_extent]^2``, rejected when
  the largest triangle is smaller than ``min_area_fraction`` of the square;
* camera rotation Haar-uniform, rejected until the optical axis makes an
  angle of at most ``max_view_angle`` with the plane normal (either side);
* the plane centroid sits at depth ``U(depth_range)`` on a ray jittered by up
  to ``center_jitter`` (tangent units) from the optical axis;
* ``f ~ U(f_range)``, ``k ~ U(k_range)`` in normalized image units;
* optionally the whole scene is moved by a random rigid transform so that the
  plane is not ``Z = 0``.

Whole instances are redrawn until every point is in front of the camera and
inside the invertible range of the distortion model.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import GenerationExhausted, P4PError
from .geometry import PlaneTransform, max_triangle_area, random_rotation
from .solver import SolverOptions, DEFAULT_OPTIONS, _distort_ratio, _project, solve_detailed


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_points: int = 4
    world_extent: float = 1.0
    f_range: tuple = (0.5, 5.0)
    k_range: tuple = (-0.6, 0.1)
    depth_range: tuple = (2.0, 10.0)
    max_view_angle: float = 60.0
    center_jitter: float = 0.1
    min_area_fraction: float = 0.01
    random_plane_pose: bool = True
    max_attempts: int = 1000

    def __post_init__(self):
        for name in ("f_range", "k_range", "depth_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.f_range[0] <= 0 or self.depth_range[0] <= 0:
            raise ValueError("f_range and depth_range must be strictly positive")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if not 0.0 <= self.max_view_angle < 90.0:
            raise ValueError("max_view_angle must be in [0, 90) degrees")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    R: np.ndarray
    t: np.ndarray
    f: float
    k: float
    world3d: np.ndarray
    image: np.ndarray
    depths: np.ndarray
    plane: PlaneTransform = field(default_factory=PlaneTransform.identity)


def distort_forward(xu: float, yu: float, k: float):
    """Distorted position of an undistorted point, or ``None`` if there is none.

    Solves ``r_u = r_d / (1 + k r_d^2)`` on the branch continuous with
    ``r_d = r_u`` at ``k = 0``. ``r_d / r_u = 2 / (1 + sqrt(1 - 4 k r_u^2))``
    is the rationalized form of ``(1 - sqrt(1 - 4 k r_u^2)) / (2 k r_u)``.
    """
    rho = _distort_ratio(xu * xu + yu * yu, k)
    if math.isnan(rho):
        return None
    return rho * xu, rho * yu


def undistort(xd: float, yd: float, k: float):
    d = 1.0 + k * (xd * xd + yd * yd)
    return xd / d, yd / d


def project_points(R, t, f, k, world3d) -> np.ndarray:
    """Vectorized :func:`project`; rows are NaN where projection fails."""
    return _project(np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64), float(f), float(k), np.ascontiguousarray(world3d, dtype=np.float64))


def project(R, t, f, k, point3d):
    """Distorted image of one world point, ``None`` behind the camera or off-model."""
    out = project_points(R, t, f, k, np.reshape(point3d, (1, 3)))[0]
    if np.isnan(out[0]):
        return None
    return float(out[0]), float(out[1])


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def random_instance(config: SceneConfig = SceneConfig()) -> GroundTruth:
    """Deterministic random instance for ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    e = config.world_extent
    min_area = config.min_area_fraction * (2.0 * e) ** 2
    cos_max = math.cos(math.radians(config.max_view_angle))
    for _ in range(config.max_attempts):
        xy = rng.uniform(-e, e, size=(config.n_points, 2))
        if max_triangle_area(xy) < min_area:
            continue
        R = random_rotation(rng)
        while abs(R[2, 2]) < cos_max:
            R = random_rotation(rng)
        depth = _uniform(rng, config.depth_range)
        jx, jy = rng.uniform(-config.center_jitter, config.center_jitter, size=2)
        f = _uniform(rng, config.f_range)
        k = _uniform(rng, config.k_range)
        centroid = np.array([xy[:, 0].mean(), xy[:, 1].mean(), 0.0])
        t = depth * np.array([jx, jy, 1.0]) - R @ centroid
        pts = np.column_stack([xy, np.zeros(config.n_points)])
        plane = PlaneTransform.identity()
        if config.random_plane_pose:
            G = random_rotation(rng)
            g = rng.uniform(-5.0, 5.0, size=3)
            plane = PlaneTransform(G, g)
            pts = plane.apply(xy)
            R, t = plane.compose_pose(R, t)
        depths = pts @ R[2] + t[2]
        if not np.all(depths > 0.0):
            continue
        image = project_points(R, t, f, k, pts)
        if not np.all(np.isfinite(image)):
            continue
        return GroundTruth(R=R, t=t, f=f, k=k, world3d=pts, image=image, depths=depths, plane=plane)
    raise GenerationExhausted(f"no valid instance after {config.max_attempts} attempts")


def pose_error(sol, gt: GroundTruth) -> float:
    """Largest relative parameter error of a solution against ground truth.

    Rotation: Frobenius distance; translation and focal length: relative;
    distortion: ``|dk| * mean(r^2)``, the change of the distortion factor at
    a typical image radius (``k`` itself may be ~0).
    """
    r2 = float(np.mean(np.sum(gt.image**2, axis=1)))
    return max(
        float(np.linalg.norm(sol.R - gt.R)),
        float(np.linalg.norm(sol.t - gt.t) / np.linalg.norm(gt.t)),
        abs(sol.f - gt.f) / gt.f,
        abs(sol.k - gt.k) * r2,
    )


@dataclass(eq=False)
class BenchmarkResult:
    bin_left: np.ndarray
    fraction: np.ndarray
    log_errors: np.ndarray  # NaN for failed instances
    solve_us: np.ndarray
    n_solutions: np.ndarray
    gt_error: np.ndarray  # best pose_error against ground truth, NaN on failure
    deflation_ratio: np.ndarray  # max |remainder| / max|det8|
    sextic_degree: np.ndarray

    @property
    def n(self) -> int:
        return self.log_errors.size

    @property
    def fail_count(self) -> int:
        return int(np.sum(np.isnan(self.log_errors)))

    @property
    def fail_rate(self) -> float:
        return self.fail_count / self.n

    def _ok(self):
        return self.log_errors[~np.isnan(self.log_errors)]

    @property
    def median_log10_err(self) -> float:
        ok = self._ok()
        return float(np.median(ok)) if ok.size else math.nan

    @property
    def p99_log10_err(self) -> float:
        ok = self._ok()
        return float(np.percentile(ok, 99)) if ok.size else math.nan

    @property
    def mode_bin(self) -> float:
        return float(self.bin_left[int(np.argmax(self.fraction))])

    @property
    def mean_solve_us(self) -> float:
        return float(np.mean(self.solve_us))

    @property
    def median_solve_us(self) -> float:
        return float(np.median(self.solve_us))

    def summary_lines(self, timing: bool = True) -> list[str]:
        lines = [
            f"median_log10_err={self.median_log10_err:.6f}",
            f"p99_log10_err={self.p99_log10_err:.6f}",
            f"fail_rate={self.fail_rate:.6f}",
        ]
        if timing:
            lines += [f"mean_solve_us={self.mean_solve_us:.3f}", f"median_solve_us={self.median_solve_us:.3f}"]
        return lines

    def write_csv(self, out: IO[str]) -> None:
        out.write("bin_left,fraction\n")
        for left, frac in zip(self.bin_left, self.fraction):
            out.write(f"{float(left)!r},{float(frac)!r}\n")


def histogram_edges(bin_width: float, lo: float, hi: float) -> np.ndarray:
    if not bin_width > 0 or not hi > lo:
        raise ValueError("need bin_width > 0 and hi > lo")
    nbins = int(math.ceil((hi - lo) / bin_width - 1e-9))
    return np.round(lo + bin_width * np.arange(nbins), 12)


def benchmark_histogram(
    n: int,
    config: SceneConfig = SceneConfig(),
    bin_width: float = 0.2,
    range: tuple = (-20.0, -3.0),
    options: SolverOptions = DEFAULT_OPTIONS,
    progress=None,
) -> BenchmarkResult:
    """Solve ``n`` random instances (seeds ``config.seed + i``) and histogram errors.

    The error of an instance is the best solution's max reprojection error in
    the solver's normalized image units (RMS image radius sqrt(2)). Its log10 is
    clamped into ``range``; failures (no solution or an exception) are counted
    separately, so bin fractions sum to ``1 - fail_rate``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = range
    bin_left = histogram_edges(bin_width, lo, hi)
    nb = bin_left.size
    counts = np.zeros(nb, dtype=np.int64)
    log_errors = np.full(n, np.nan)
    solve_us = np.zeros(n)
    n_solutions = np.zeros(n, dtype=np.int64)
    gt_error = np.full(n, np.nan)
    deflation_ratio = np.full(n, np.nan)
    sextic_degree = np.full(n, -1, dtype=np.int64)
    base = dict(config.__dict__)
    # untimed warm-up so one-off compilation or cache loading is not measured
    warm = random_instance(config)
    try:
        solve_detailed(warm.world3d, warm.image, options)
    except P4PError:
        pass
    for i in np.arange(n):
        base["seed"] = config.seed + int(i)
        gt = random_instance(SceneConfig(**base))
        t0 = time.perf_counter_ns()
        try:
            report = solve_detailed(gt.world3d, gt.image, options)
        except P4PError:
            report = None
        solve_us[i] = (time.perf_counter_ns() - t0) * 1e-3
        if progress is not None:
            progress(i)
        if report is None:
            continue
        n_solutions[i] = len(report.solutions)
        if report.det8 is not None:
            scale = float(np.max(np.abs(report.det8.coeffs)))
            deflation_ratio[i] = max(abs(r) for r in report.deflation_remainders) / scale
            sextic_degree[i] = report.beta_poly.degree()
        if not report.solutions:
            continue
        best = report.solutions[0]
        err = best.max_reproj_err * report.normalization.image_scale
        v = math.log10(err) if err > 0.0 else -math.inf
        v = min(max(v, lo), hi)
        log_errors[i] = v
        counts[min(int(math.floor((v - lo) / bin_width)), nb - 1)] += 1
        gt_error[i] = min(pose_error(s, gt) for s in report.solutions)
    return BenchmarkResult(
        bin_left=bin_left, fraction=counts / n, log_errors=log_errors, solve_us=solve_us,
        n_solutions=n_solutions, gt_error=gt_error, deflation_ratio=deflation_ratio,
        sextic_degree=sextic_degree,
    )
