"""Hypothesize-and-verify pose estimation over many correspondences.

The minimal solver proposes up to six poses per random 4-subset. Hypotheses
are ranked by inlier count, then by MSAC cost (squared error truncated at the
threshold). The winner is optionally polished by Gauss-Newton on its inliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import P4PError
from .geometry import max_triangle_area, so3_exp
from .solver import (
    DEFAULT_OPTIONS,
    PoseSolution,
    SolverOptions,
    _as_xy,
    _reproj_errors,
    canonicalize_plane,
    solve_planar,
)

GN_ITERS = 10
MAX_HALVINGS = 20
SINGULAR_TOL = 1e-12
REMASK_ROUNDS = 5
# points this far inside the widened gate join the refinement set
REFINE_GATE = 2.0


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 1000
    inlier_threshold: float = 2.0
    confidence: float = 0.999
    seed: int = 0
    refine: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(eq=False)
class RobustResult:
    solution: PoseSolution
    inlier_mask: np.ndarray
    iterations_run: int
    score_history: list = field(default_factory=list)

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def _errors(R, t, f, k, world3d, image) -> np.ndarray:
    err = _reproj_errors(np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64), float(f), float(k), world3d, image)
    return np.where(np.isfinite(err), err, np.inf)


def _msac_cost(err: np.ndarray, thr: float) -> float:
    return float(np.sum(np.minimum(err, thr) ** 2))


def _max_iters_needed(inlier_ratio: float, confidence: float, sample_size: int = 4) -> float:
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 1.0
    if good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log1p(-good)


def ransac_pose(world3d, image, config: RansacConfig = RansacConfig(), options: SolverOptions = DEFAULT_OPTIONS) -> RobustResult | None:
    """Best pose for ``n >= 4`` coplanar correspondences, or ``None``.

    ``None`` means no hypothesis reached four inliers. Deterministic for a
    given ``config.seed``.
    """
    world3d = _as_xy(world3d, 3, "world points")
    image = _as_xy(image, 2, "image points")
    n = world3d.shape[0]
    if n < 4 or image.shape[0] != n:
        raise ValueError("need n >= 4 matching world and image points")
    world2d, plane, _ = canonicalize_plane(world3d, options)
    rng = np.random.default_rng(config.seed)
    thr = config.inlier_threshold
    diam2 = float(np.max(np.sum((world2d[:, None] - world2d[None]) ** 2, axis=-1)))
    min_area = options.area_tol * diam2

    best = None  # (count, cost, solution, mask)
    history = []
    needed = float(config.max_iters)
    it = 0
    draws = 0
    while it < min(config.max_iters, needed) and draws < 10 * config.max_iters:
        draws += 1
        idx = np.sort(rng.choice(n, size=4, replace=False))
        if max_triangle_area(world2d[idx]) <= min_area:
            continue
        it += 1
        try:
            report = solve_planar(world2d[idx], image[idx], plane, options)
        except P4PError:
            continue
        for sol in report.solutions:
            err = _errors(sol.R, sol.t, sol.f, sol.k, world3d, image)
            mask = err <= thr
            count = int(mask.sum())
            cost = _msac_cost(err, thr)
            if best is None or count > best[0] or (count == best[0] and cost < best[1] - 1e-12 * thr * thr * n):
                best = (count, cost, sol, mask)
                history.append((it, count, cost))
                needed = _max_iters_needed(count / n, config.confidence)
    if best is None or best[0] < 4:
        return None
    count, cost, sol, mask = best
    if config.refine and count > 4:
        sol, mask = _refine_and_remask(sol, world3d, image, mask, thr)
    # report errors for the whole set, and a mask consistent with them
    err = _errors(sol.R, sol.t, sol.f, sol.k, world3d, image)
    sol = _with_errors(sol, world3d, err)
    return RobustResult(solution=sol, inlier_mask=err <= thr, iterations_run=it, score_history=history)


def _refine_and_remask(sol, world3d, image, mask, thr):
    """Alternate Gauss-Newton on the gated set and re-gating.

    A point left out of a fit is predicted worse than the points in it, so the
    refinement set is gated at ``REFINE_GATE * thr``; the final mask uses ``thr``.
    A round is kept only if it does not lose inliers.
    """
    gate = REFINE_GATE * thr
    fit_set = _errors(sol.R, sol.t, sol.f, sol.k, world3d, image) <= gate
    for _ in range(REMASK_ROUNDS):
        if fit_set.sum() < 4:
            break
        new = refine(sol, world3d, image, fit_set)
        err = _errors(new.R, new.t, new.f, new.k, world3d, image)
        new_mask = err <= thr
        if new_mask.sum() < mask.sum():
            break
        new_fit = err <= gate
        sol, mask = new, new_mask
        if np.array_equal(new_fit, fit_set):
            break
        fit_set = new_fit
    return sol, mask


def _with_errors(sol: PoseSolution, world3d, err) -> PoseSolution:
    depths = world3d @ sol.R[2] + sol.t[2]
    return PoseSolution(
        R=sol.R, t=sol.t, f=sol.f, k=sol.k, beta=sol.beta, w=sol.w, depths=depths,
        max_reproj_err=float(np.max(err)), reproj_errors=err, P=sol.P,
    )


# --------------------------------------------------------------------------
# Gauss-Newton


def reprojection_residuals(R, t, f, k, world3d, image) -> np.ndarray:
    """Stacked ``(x_proj - x_obs, y_proj - y_obs)`` per point; NaN where undefined."""
    world3d = np.asarray(world3d, dtype=np.float64)
    Xc = world3d @ np.asarray(R).T + t
    u = f * Xc[:, :2] / Xc[:, 2:3]
    s = np.sum(u * u, axis=1)
    disc = 1.0 - 4.0 * k * s
    rho = np.where(disc >= 0.0, 2.0 / (1.0 + np.sqrt(np.abs(disc))), np.nan)
    rho = np.where(Xc[:, 2] > 0.0, rho, np.nan)
    return (rho[:, None] * u - image).ravel()


def reprojection_jacobian(R, t, f, k, world3d, image) -> np.ndarray:
    """Jacobian of :func:`reprojection_residuals`, shape ``(2n, 8)``.

    Columns: rotation increment ``d`` with ``R <- exp(d) R``, then ``t``, ``f``, ``k``.
    """
    world3d = np.asarray(world3d, dtype=np.float64)
    RX = world3d @ np.asarray(R).T
    Xc = RX + t
    Z = Xc[:, 2]
    a = Xc[:, 0] / Z
    b = Xc[:, 1] / Z
    u = f * np.column_stack([a, b])
    s = np.sum(u * u, axis=1)
    q = np.sqrt(1.0 - 4.0 * k * s)
    rho = 2.0 / (1.0 + q)
    g = 4.0 / (q * (1.0 + q) ** 2)
    rho_s = k * g
    rho_k = s * g

    n = world3d.shape[0]
    # d(distorted)/d(u) = rho I + 2 rho_s u u^T
    Dd = rho[:, None, None] * np.eye(2) + 2.0 * rho_s[:, None, None] * u[:, :, None] * u[:, None, :]
    # d(u)/d(Xc) = f/Z [[1, 0, -a], [0, 1, -b]]
    Du = np.zeros((n, 2, 3))
    Du[:, 0, 0] = f / Z
    Du[:, 1, 1] = f / Z
    Du[:, 0, 2] = -f * a / Z
    Du[:, 1, 2] = -f * b / Z
    DdXc = Dd @ Du
    # d(Xc)/d(rotation increment) = -[R X]_x
    skewRX = np.zeros((n, 3, 3))
    skewRX[:, 0, 1] = -RX[:, 2]
    skewRX[:, 0, 2] = RX[:, 1]
    skewRX[:, 1, 0] = RX[:, 2]
    skewRX[:, 1, 2] = -RX[:, 0]
    skewRX[:, 2, 0] = -RX[:, 1]
    skewRX[:, 2, 1] = RX[:, 0]
    J = np.empty((n, 2, 8))
    J[:, :, 0:3] = -DdXc @ skewRX
    J[:, :, 3:6] = DdXc
    J[:, :, 6] = (Dd @ np.column_stack([a, b])[:, :, None])[:, :, 0]
    J[:, :, 7] = rho_k[:, None] * u
    return J.reshape(2 * n, 8)


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def _cost(R, t, f, k, world3d, image) -> float:
    r = reprojection_residuals(R, t, f, k, world3d, image)
    c = float(r @ r)
    return c if math.isfinite(c) else math.inf


def refine(initial: PoseSolution, world3d, image, inlier_mask=None, max_iters: int = GN_ITERS) -> PoseSolution:
    """Gauss-Newton on the summed squared reprojection error of the inliers.

    Never returns a pose with a higher inlier cost than ``initial``; returns
    ``initial`` itself when the normal equations are singular.
    """
    world3d = _as_xy(world3d, 3, "world points")
    image = _as_xy(image, 2, "image points")
    mask = np.ones(world3d.shape[0], dtype=bool) if inlier_mask is None else np.asarray(inlier_mask, dtype=bool)
    if mask.sum() < 4:
        raise ValueError("refine needs at least 4 inliers")
    W, I = world3d[mask], image[mask]
    R = np.asarray(initial.R, dtype=np.float64)
    t = np.asarray(initial.t, dtype=np.float64)
    f, k = float(initial.f), float(initial.k)
    cost = _cost(R, t, f, k, W, I)
    if not math.isfinite(cost):
        return initial
    improved = False
    for _ in range(max_iters):
        if cost == 0.0:
            break
        r = reprojection_residuals(R, t, f, k, W, I)
        J = reprojection_jacobian(R, t, f, k, W, I)
        scale = np.linalg.norm(J, axis=0)
        if not np.all(np.isfinite(J)) or np.any(scale == 0.0):
            break
        Js = J / scale
        sv = np.linalg.svd(Js, compute_uv=False)
        if sv[-1] <= SINGULAR_TOL * sv[0]:
            break
        step = -np.linalg.lstsq(Js, r, rcond=None)[0] / scale
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            d = lam * step
            R_new = _orthonormalize(so3_exp(d[0:3]) @ R)
            t_new, f_new, k_new = t + d[3:6], f + d[6], k + d[7]
            c_new = _cost(R_new, t_new, f_new, k_new, W, I) if f_new > 0.0 else math.inf
            if c_new < cost:
                break
            lam *= 0.5
        else:
            break
        R, t, f, k, cost = R_new, t_new, f_new, k_new, c_new
        improved = True
    if not improved:
        return initial
    err = _errors(R, t, f, k, world3d, image)
    return PoseSolution(
        R=R, t=t, f=f, k=k, beta=math.nan, w=math.nan, depths=world3d @ R[2] + t[2],
        max_reproj_err=float(np.max(err)), reproj_errors=err, P=None,
    )


def inlier_cost(sol: PoseSolution, world3d, image, inlier_mask=None) -> float:
    """Summed squared reprojection error over the masked points."""
    world3d = _as_xy(world3d, 3, "world points")
    image = _as_xy(image, 2, "image points")
    if inlier_mask is not None:
        m = np.asarray(inlier_mask, dtype=bool)
        world3d, image = world3d[m], image[m]
    return _cost(sol.R, sol.t, sol.f, sol.k, world3d, image)
