"""Four-point planar absolute pose with unknown focal length and radial distortion.

Camera model: ``lambda_i * (x_i, y_i, 1 + k*r_i^2) = diag(1, 1, w) [r1 r2 t] (X_i, Y_i, 1)``
with ``w = 1/f`` and the division-model distortion centred at the image origin.

Pipeline (all in a normalized frame):

1. the cross-product row free of ``k`` and ``w`` gives four linear equations
   on the first two camera rows; their 2D nullspace is ``n1 + beta*n2``;
2. three points give ``C p3 = D (beta, k*beta, k, 1)``, so the third row is
   ``p3 = M (beta, k*beta, k, 1)``;
3. the fourth point gives ``k`` as a ratio of two linear functions of beta;
4. equal-norm / orthogonal columns give ``B(beta) (w^2, 1)^T = 0``;
   ``det B`` has the squared k-denominator as a factor and deflates to a
   sextic in beta;
5. each real root yields ``w^2`` and ``k`` by back-substitution and a pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ._accel import jit
from .errors import (
    CheiralityFailed,
    DeflationFailed,
    DegenerateInstance,
    DegenerateScene,
    DenominatorVanishes,
    DistortionSingular,
    EigenFailure,
    NegativeFocalSquared,
    NotCoplanar,
    RankDeficient,
    RowsInconsistent,
    SingularC,
)
from .geometry import PlaneTransform
from .poly import (
    HQR_MAX_ITS as _HQR_MAX_ITS,
    RESIDUAL_TOL,
    ROOT_MERGE_TOL,
    TRIM_TOL,
    Poly,
    _convolve,
    _deflate_stable,
    _eigvals,
    _select_real,
    _trim_len,
)

SQRT2 = math.sqrt(2.0)
TRIPLES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
_TRIPLE_IDX = np.array(TRIPLES, dtype=np.int64)
_FOURTH_IDX = np.array([3, 2, 1, 0], dtype=np.int64)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerance registry. Everything relative unless noted."""

    coplanarity_tol: float = 1e-6
    collinear_tol: float = 1e-9
    rank_tol: float = 1e-10
    area_tol: float = 1e-8
    det_tol: float = 1e-12
    q_tol: float = 1e-14
    deflate_tol: float = 1e-8
    w2_min: float = 1e-14
    den_tol: float = 1e-12
    w2_consistency_tol: float = 1e-3
    im_tol: float = 1e-6
    polish_iters: int = 2
    newton_iters: int = 3
    trim_tol: float = TRIM_TOL
    root_merge_tol: float = ROOT_MERGE_TOL
    residual_tol: float = RESIDUAL_TOL
    normalize_eps: float = 1e-14

    @cached_property
    def as_array(self) -> np.ndarray:
        """Packed for the compiled pipeline; order matches ``_solve_all``."""
        return np.array([
            self.rank_tol, self.area_tol, self.det_tol, self.q_tol, self.deflate_tol,
            self.w2_min, self.den_tol, self.w2_consistency_tol, self.im_tol,
            self.polish_iters, self.newton_iters, self.trim_tol, self.root_merge_tol,
            self.residual_tol, self.normalize_eps,
        ], dtype=np.float64)


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True, eq=False)
class Normalization:
    """``X_n = world_scale * (X + world_shift)``, ``x_n = image_scale * x``."""

    world_shift: np.ndarray
    world_scale: float
    image_scale: float

    def world(self, xy):
        return self.world_scale * (np.asarray(xy, dtype=np.float64) + self.world_shift)

    def world_inverse(self, xy_n):
        return np.asarray(xy_n, dtype=np.float64) / self.world_scale - self.world_shift

    def image(self, xy):
        return self.image_scale * np.asarray(xy, dtype=np.float64)

    def image_inverse(self, xy_n):
        return np.asarray(xy_n, dtype=np.float64) / self.image_scale

    def denormalize(self, R, t_n, f_n, k_n):
        """Map a normalized-frame pose to the un-normalized plane frame."""
        shift3 = np.array([self.world_shift[0], self.world_shift[1], 0.0])
        t = t_n / self.world_scale + R @ shift3
        return R, t, f_n / self.image_scale, k_n * self.image_scale**2


@dataclass(frozen=True, eq=False)
class NullspaceBasis:
    """``(p11, p12, p14, p21, p22, p24) = n1 + beta * n2``."""

    n1: np.ndarray
    n2: np.ndarray
    singular_values: np.ndarray
    matrix: np.ndarray

    def rows12(self, beta: float) -> np.ndarray:
        return (self.n1 + beta * self.n2).reshape(2, 3)


@dataclass(frozen=True, eq=False)
class Row2System:
    """``C (p31, p32, p34)^T = D (beta, k*beta, k, 1)^T`` and ``M = C^-1 D``.

    ``use_y[i]`` records that point i contributed its first cross-product row
    (``y``-coordinate) instead of the second, whichever coordinate is larger.
    """

    C: np.ndarray
    D: np.ndarray
    M: np.ndarray
    use_y: np.ndarray
    triple: tuple = (0, 1, 2)


@dataclass(frozen=True)
class KRational:
    """Fourth-point constraint ``q31 k b + q32 k + q33 b + q34 = 0``."""

    q31: float
    q32: float
    q33: float
    q34: float

    def k(self, beta: float) -> float:
        return -(self.q33 * beta + self.q34) / (self.q31 * beta + self.q32)

    @property
    def denominator(self) -> Poly:
        return Poly([self.q32, self.q31])

    def as_array(self) -> np.ndarray:
        return np.array([self.q31, self.q32, self.q33, self.q34])


@dataclass(frozen=True, eq=False)
class BetaPolyMatrix:
    """``[[q11, q12], [q21, q22]](beta) @ (w^2, 1) = 0``; entries degree <= 4."""

    q11: Poly
    q12: Poly
    q21: Poly
    q22: Poly

    def as_array(self) -> np.ndarray:
        return np.vstack([self.q11.coeffs, self.q12.coeffs, self.q21.coeffs, self.q22.coeffs])

    def __call__(self, beta: float) -> np.ndarray:
        return np.array([[self.q11(beta), self.q12(beta)], [self.q21(beta), self.q22(beta)]])


@dataclass(frozen=True, eq=False)
class Candidate:
    beta: float
    w: float
    k: float
    P: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseSolution:
    """A physical solution in the caller's frame and units.

    ``x ~ f * (R X + t)`` up to division-model distortion ``k``. ``beta``, ``w``
    and ``P`` are the solver internals in the normalized frame (NaN / None
    after refinement).
    """

    R: np.ndarray
    t: np.ndarray
    f: float
    k: float
    beta: float
    w: float
    depths: np.ndarray
    max_reproj_err: float
    reproj_errors: np.ndarray
    P: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Rejection:
    beta: float
    reason: str
    message: str = ""


@dataclass(eq=False)
class SolveReport:
    solutions: list
    rejections: list = field(default_factory=list)
    beta_poly: Poly | None = None
    roots: np.ndarray | None = None
    deflation_remainders: tuple = ()
    det8: Poly | None = None
    world_n: np.ndarray | None = None
    image_n: np.ndarray | None = None
    normalization: Normalization | None = None
    plane: PlaneTransform | None = None




# --------------------------------------------------------------------------
# kernels


@jit
def _row3_matrix(world, image):
    A = np.zeros((world.shape[0], 6))
    for i in range(world.shape[0]):
        X = world[i, 0]
        Y = world[i, 1]
        x = image[i, 0]
        y = image[i, 1]
        A[i, 0] = y * X
        A[i, 1] = y * Y
        A[i, 2] = y
        A[i, 3] = -x * X
        A[i, 4] = -x * Y
        A[i, 5] = -x
    return A


@jit
def _nullspace2(A):
    _, s, vt = np.linalg.svd(A)
    return vt[4].copy(), vt[5].copy(), s


@jit
def _row_terms(world, image, n1, n2):
    """Per point: ``cvec . p3 = drow . (beta, k beta, k, 1)``.

    Uses the row-2 constraint ``(1+k r^2)(p1.U) = x (p3.U)`` or, when
    ``|y| > |x|``, the row-1 one ``(1+k r^2)(p2.U) = y (p3.U)``.
    """
    m = world.shape[0]
    cvec = np.zeros((m, 3))
    drow = np.zeros((m, 4))
    use_y = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        X = world[i, 0]
        Y = world[i, 1]
        x = image[i, 0]
        y = image[i, 1]
        r2 = x * x + y * y
        if abs(y) > abs(x):
            o = 3
            c = y
            use_y[i] = True
        else:
            o = 0
            c = x
        a = n1[o] * X + n1[o + 1] * Y + n1[o + 2]
        b = n2[o] * X + n2[o + 1] * Y + n2[o + 2]
        cvec[i, 0] = c * X
        cvec[i, 1] = c * Y
        cvec[i, 2] = c
        drow[i, 0] = b
        drow[i, 1] = r2 * b
        drow[i, 2] = r2 * a
        drow[i, 3] = a
    return cvec, drow, use_y


@jit
def _beta_matrix(n1, n2, M, q):
    """Rows q11, q12, q21, q22 as ascending coefficient vectors of length 5.

    ``q = (q31, q32, q33, q34)``; ``den = q31 b + q32``, ``num = -(q33 b + q34)``.
    """
    q31, q32, q33, q34 = q[0], q[1], q[2], q[3]
    # den * (beta, k beta, k, 1) as quadratics in beta
    E = np.zeros((4, 3))
    E[0, 1] = q32
    E[0, 2] = q31
    E[1, 1] = -q34
    E[1, 2] = -q33
    E[2, 0] = -q34
    E[2, 1] = -q33
    E[3, 0] = q32
    E[3, 1] = q31
    P31 = np.zeros(3)
    P32 = np.zeros(3)
    for m in range(4):
        for j in range(3):
            P31[j] += M[0, m] * E[m, j]
            P32[j] += M[1, m] * E[m, j]
    # linear entries of the first two rows: (const, slope)
    a11 = (n1[0], n2[0])
    a12 = (n1[1], n2[1])
    a21 = (n1[3], n2[3])
    a22 = (n1[4], n2[4])
    dot = np.zeros(3)
    dif = np.zeros(3)
    for i in range(2):
        for j in range(2):
            dot[i + j] += a11[i] * a12[j] + a21[i] * a22[j]
            dif[i + j] += a11[i] * a11[j] + a21[i] * a21[j] - a12[i] * a12[j] - a22[i] * a22[j]
    den2 = np.array([q32 * q32, 2.0 * q31 * q32, q31 * q31])
    out = np.zeros((4, 5))
    for i in range(3):
        for j in range(3):
            out[0, i + j] += dot[i] * den2[j]
            out[1, i + j] += P31[i] * P32[j]
            out[2, i + j] += dif[i] * den2[j]
            out[3, i + j] += P31[i] * P31[j] - P32[i] * P32[j]
    return out


@jit
def _eval_rows(B, beta):
    v = np.zeros(4)
    for r in range(4):
        acc = 0.0
        for i in range(4, -1, -1):
            acc = acc * beta + B[r, i]
        v[r] = acc
    return v


@jit
def _system(beta, k, u, n1, n2, M, q):
    """Residuals, Jacobian and term scales of the three equations in (beta, k, w^2).

    Order: fourth-point constraint, orthogonality, equal norm.
    """
    p11 = n1[0] + beta * n2[0]
    p12 = n1[1] + beta * n2[1]
    p21 = n1[3] + beta * n2[3]
    p22 = n1[4] + beta * n2[4]
    A = p11 * p12 + p21 * p22
    dA = n2[0] * p12 + p11 * n2[1] + n2[3] * p22 + p21 * n2[4]
    Bq = p11 * p11 + p21 * p21 - p12 * p12 - p22 * p22
    dBq = 2.0 * (p11 * n2[0] + p21 * n2[3] - p12 * n2[1] - p22 * n2[4])
    a = M[0, 0] * beta + M[0, 1] * k * beta + M[0, 2] * k + M[0, 3]
    b = M[1, 0] * beta + M[1, 1] * k * beta + M[1, 2] * k + M[1, 3]
    a_b = M[0, 0] + M[0, 1] * k
    b_b = M[1, 0] + M[1, 1] * k
    a_k = M[0, 1] * beta + M[0, 2]
    b_k = M[1, 1] * beta + M[1, 2]
    F = np.empty(3)
    J = np.zeros((3, 3))
    S = np.empty(3)
    F[0] = q[0] * k * beta + q[1] * k + q[2] * beta + q[3]
    F[1] = u * A + a * b
    F[2] = u * Bq + a * a - b * b
    J[0, 0] = q[0] * k + q[2]
    J[0, 1] = q[0] * beta + q[1]
    J[1, 0] = u * dA + a_b * b + a * b_b
    J[1, 1] = a_k * b + a * b_k
    J[1, 2] = A
    J[2, 0] = u * dBq + 2.0 * (a * a_b - b * b_b)
    J[2, 1] = 2.0 * (a * a_k - b * b_k)
    J[2, 2] = Bq
    S[0] = abs(q[0] * k * beta) + abs(q[1] * k) + abs(q[2] * beta) + abs(q[3])
    S[1] = abs(u * A) + abs(a * b)
    S[2] = abs(u * Bq) + a * a + b * b
    return F, J, S


@jit
def _scaled_norm(F, S):
    r = 0.0
    for i in range(3):
        if S[i] > 0.0:
            r = max(r, abs(F[i]) / S[i])
        elif F[i] != 0.0:
            return np.inf
    return r


@jit
def _newton_system(beta, k, u, n1, n2, M, q, iters):
    F, J, S = _system(beta, k, u, n1, n2, M, q)
    r = _scaled_norm(F, S)
    for _ in range(iters):
        if r < 1e-16:
            break
        det = np.linalg.det(J)
        if det == 0.0 or not np.isfinite(det):
            break
        step = np.linalg.solve(J, -F)
        nb, nk, nu = beta + step[0], k + step[1], u + step[2]
        F2, J2, S2 = _system(nb, nk, nu, n1, n2, M, q)
        r2 = _scaled_norm(F2, S2)
        if not r2 < r:
            break
        beta, k, u, F, J, r = nb, nk, nu, F2, J2, r2
    return beta, k, u


@jit
def _recover(beta, B, q, n1, n2, M, den_tol, w2_min, w2_consistency_tol, newton_iters):
    """Back-substitution for one root. Status: 0 ok, 1 den, 2 w2<=0, 3 rows.

    Returns ``(status, beta, w, k, P)``; with ``newton_iters > 0`` the triple
    ``(beta, k, w^2)`` is first polished on the unreduced equations.
    """
    P = np.zeros((3, 3))
    den = q[0] * beta + q[1]
    if abs(den) <= den_tol * (abs(q[0] * beta) + abs(q[1])):
        return 1, beta, 0.0, 0.0, P
    v = _eval_rows(B, beta)
    if abs(v[0]) >= abs(v[2]):
        w2 = -v[1] / v[0]
    else:
        w2 = -v[3] / v[2]
    k = -(q[2] * beta + q[3]) / den
    if newton_iters > 0 and w2 > w2_min:
        beta, k, w2 = _newton_system(beta, k, w2, n1, n2, M, q, newton_iters)
        den = q[0] * beta + q[1]
        if abs(den) <= den_tol * (abs(q[0] * beta) + abs(q[1])):
            return 1, beta, 0.0, 0.0, P
        v = _eval_rows(B, beta)
    if abs(v[0]) >= abs(v[2]):
        o1, o2 = v[2], v[3]
    else:
        o1, o2 = v[0], v[1]
    if not (w2 > w2_min):
        return 2, beta, 0.0, k, P
    if abs(o1 * w2 + o2) > w2_consistency_tol * (abs(o1) * w2 + abs(o2)):
        return 3, beta, 0.0, k, P
    for j in range(3):
        P[0, j] = n1[j] + beta * n2[j]
        P[1, j] = n1[3 + j] + beta * n2[3 + j]
    z0, z1, z2 = beta, k * beta, k
    for j in range(3):
        P[2, j] = M[j, 0] * z0 + M[j, 1] * z1 + M[j, 2] * z2 + M[j, 3]
    return 0, beta, np.sqrt(w2), k, P


@jit
def _extract(P, w, k, world, image):
    """Pose from a camera matrix in the normalized frame.

    Status: 0 ok, 4 distortion singular, 5 mixed depth signs.
    Returns (status, R, t, depths-in-P-scale).
    """
    R = np.eye(3)
    t = np.zeros(3)
    n = world.shape[0]
    lam = np.zeros(n)
    for i in range(n):
        x = image[i, 0]
        y = image[i, 1]
        dist = 1.0 + k * (x * x + y * y)
        if not (dist > 0.0):
            return 4, R, t, lam
        lam[i] = (P[2, 0] * world[i, 0] + P[2, 1] * world[i, 1] + P[2, 2]) / dist
    npos = 0
    for i in range(n):
        if lam[i] > 0.0:
            npos += 1
    if npos == 0:
        sgn = -1.0
    elif npos == n:
        sgn = 1.0
    else:
        return 5, R, t, lam
    Pn = P.copy() * sgn
    for j in range(3):
        Pn[2, j] /= w
    c1 = Pn[:, 0].copy()
    c2 = Pn[:, 1].copy()
    s = 0.5 * (np.sqrt(np.sum(c1 * c1)) + np.sqrt(np.sum(c2 * c2)))
    A = np.zeros((3, 2))
    A[:, 0] = c1 / s
    A[:, 1] = c2 / s
    # nearest orthonormal pair: A (A^T A)^(-1/2), closed form for 2x2
    G = A.T @ A
    detG = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    sq = np.sqrt(detG)
    tau = np.sqrt(G[0, 0] + G[1, 1] + 2.0 * sq)
    S = np.zeros((2, 2))
    S[0, 0] = (G[0, 0] + sq) / tau
    S[1, 1] = (G[1, 1] + sq) / tau
    S[0, 1] = G[0, 1] / tau
    S[1, 0] = G[1, 0] / tau
    detS = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    Si = np.zeros((2, 2))
    Si[0, 0] = S[1, 1] / detS
    Si[1, 1] = S[0, 0] / detS
    Si[0, 1] = -S[0, 1] / detS
    Si[1, 0] = -S[1, 0] / detS
    Q = A @ Si
    r1 = Q[:, 0].copy()
    r2 = Q[:, 1].copy()
    R[:, 0] = r1
    R[:, 1] = r2
    R[:, 2] = np.cross(r1, r2)
    t = Pn[:, 2] / s
    return 0, R, t, lam * sgn


@jit
def _distort_ratio(s, k):
    # r_d / r_u for squared undistorted radius s; NaN outside the invertible range
    disc = 1.0 - 4.0 * k * s
    if disc < 0.0:
        return np.nan
    return 2.0 / (1.0 + np.sqrt(disc))


@jit
def _project(R, t, f, k, pts):
    n = pts.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        X = R[0, 0] * pts[i, 0] + R[0, 1] * pts[i, 1] + R[0, 2] * pts[i, 2] + t[0]
        Y = R[1, 0] * pts[i, 0] + R[1, 1] * pts[i, 1] + R[1, 2] * pts[i, 2] + t[1]
        Z = R[2, 0] * pts[i, 0] + R[2, 1] * pts[i, 1] + R[2, 2] * pts[i, 2] + t[2]
        if not (Z > 0.0):
            out[i, 0] = np.nan
            out[i, 1] = np.nan
            continue
        xu = f * X / Z
        yu = f * Y / Z
        rho = _distort_ratio(xu * xu + yu * yu, k)
        out[i, 0] = rho * xu
        out[i, 1] = rho * yu
    return out


@jit
def _reproj_errors(R, t, f, k, pts, image):
    proj = _project(R, t, f, k, pts)
    n = pts.shape[0]
    err = np.empty(n)
    for i in range(n):
        dx = proj[i, 0] - image[i, 0]
        dy = proj[i, 1] - image[i, 1]
        err[i] = np.sqrt(dx * dx + dy * dy)
    return err


@jit
def _canonical_frame(pts):
    """Plane fit: ``(xy, R, t, max out-of-plane residual, 2nd singular value, diameter)``."""
    n = pts.shape[0]
    centroid = np.zeros(3)
    for i in range(n):
        centroid += pts[i]
    centroid /= n
    X = pts - centroid
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    normal = vt[2].copy()
    if normal[2] < 0.0:
        normal = -normal
    zmin = pts[0, 2]
    zmax = pts[0, 2]
    for i in range(n):
        zmin = min(zmin, pts[i, 2])
        zmax = max(zmax, pts[i, 2])
    if (normal[0] == 0.0 and normal[1] == 0.0) or zmax == zmin:
        normal[0] = 0.0
        normal[1] = 0.0
        normal[2] = 1.0
    # smallest rotation taking +z to the normal
    K = np.zeros((3, 3))
    K[0, 2] = normal[0]
    K[1, 2] = normal[1]
    K[2, 0] = -normal[0]
    K[2, 1] = -normal[1]
    R = np.eye(3) + K + (K @ K) / (1.0 + normal[2])
    offset = normal[0] * centroid[0] + normal[1] * centroid[1] + normal[2] * centroid[2]
    t = offset * normal
    residual = 0.0
    for i in range(n):
        residual = max(residual, abs(X[i, 0] * normal[0] + X[i, 1] * normal[1] + X[i, 2] * normal[2]))
    diam2 = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = pts[i] - pts[j]
            diam2 = max(diam2, d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    xy = np.empty((n, 2))
    for i in range(n):
        d = pts[i] - t
        xy[i, 0] = d[0] * R[0, 0] + d[1] * R[1, 0] + d[2] * R[2, 0]
        xy[i, 1] = d[0] * R[0, 1] + d[1] * R[1, 1] + d[2] * R[2, 1]
    return xy, R, t, residual, s[1], np.sqrt(diam2)


@jit
def _normalize(world, image):
    n = world.shape[0]
    shift = np.zeros(2)
    for i in range(n):
        shift[0] -= world[i, 0]
        shift[1] -= world[i, 1]
    shift /= n
    wsum = 0.0
    isum = 0.0
    for i in range(n):
        dx = world[i, 0] + shift[0]
        dy = world[i, 1] + shift[1]
        wsum += dx * dx + dy * dy
        isum += image[i, 0] * image[i, 0] + image[i, 1] * image[i, 1]
    w_rms = np.sqrt(wsum / n)
    i_rms = np.sqrt(isum / n)
    ws = np.sqrt(2.0) / w_rms if w_rms > 0.0 else 0.0
    iscale = np.sqrt(2.0) / i_rms if i_rms > 0.0 else 0.0
    world_n = np.empty((n, 2))
    image_n = np.empty((n, 2))
    for i in range(n):
        world_n[i, 0] = ws * (world[i, 0] + shift[0])
        world_n[i, 1] = ws * (world[i, 1] + shift[1])
        image_n[i, 0] = iscale * image[i, 0]
        image_n[i, 1] = iscale * image[i, 1]
    return world_n, image_n, shift, ws, iscale, w_rms, i_rms


@jit
def _select_triple(world):
    """Indices of the largest-area triangle (earliest wins ties) and the rest."""
    best = 0
    best_area = -1.0
    for c in range(4):
        i, j, k = _TRIPLE_IDX[c, 0], _TRIPLE_IDX[c, 1], _TRIPLE_IDX[c, 2]
        area = 0.5 * abs(
            (world[j, 0] - world[i, 0]) * (world[k, 1] - world[i, 1])
            - (world[j, 1] - world[i, 1]) * (world[k, 0] - world[i, 0])
        )
        if area > best_area * (1.0 + 1e-12) and area > best_area:
            best = c
            best_area = area
    diam2 = 0.0
    for i in range(4):
        for j in range(i + 1, 4):
            dx = world[i, 0] - world[j, 0]
            dy = world[i, 1] - world[j, 1]
            diam2 = max(diam2, dx * dx + dy * dy)
    return best, best_area, diam2


@jit
def _k_coeffs(cvec, drow, M):
    """``(q31, q32, q33, q34)`` and the magnitude of the terms they came from."""
    v = np.empty(4)
    scale = 0.0
    for m in range(4):
        lhs = cvec[0] * M[0, m] + cvec[1] * M[1, m] + cvec[2] * M[2, m]
        v[m] = drow[m] - lhs
        scale = max(scale, max(abs(drow[m]), abs(lhs)))
    q = np.empty(4)
    q[0] = v[1]
    q[1] = v[2]
    q[2] = v[0]
    q[3] = v[3]
    return q, scale


@jit
def _sextic(B, q):
    det8 = _convolve(B[0], B[3]) - _convolve(B[1], B[2])
    q1, rem1 = _deflate_stable(det8, q[1], q[0])
    q2, rem2 = _deflate_stable(q1, q[1], q[0])
    rems = np.empty(2)
    rems[0] = rem1
    rems[1] = rem2
    return q2, det8, rems


@jit
def _finalize(R_n, t_n, w, k_n, shift, ws, iscale, Rp, tp, world2d, image):
    """Normalized-frame pose to caller frame; status 0 ok, 4 distortion, 5 depth."""
    n = world2d.shape[0]
    shift3 = np.zeros(3)
    shift3[0] = shift[0]
    shift3[1] = shift[1]
    t_plane = t_n / ws + R_n @ shift3
    f = (1.0 / w) / iscale
    k = k_n * iscale * iscale
    R = R_n @ Rp.T
    t = t_plane - R @ tp
    pts = np.empty((n, 3))
    for i in range(n):
        pts[i] = Rp[:, 0] * world2d[i, 0] + Rp[:, 1] * world2d[i, 1] + tp
    depths = pts @ R[2] + t[2]
    err = np.full(n, np.nan)
    for i in range(n):
        if not (depths[i] > 0.0):
            return 5, R, t, f, k, depths, err
    err = _reproj_errors(R, t, f, k, pts, image)
    for i in range(n):
        if not np.isfinite(err[i]):
            return 4, R, t, f, k, depths, err
    return 0, R, t, f, k, depths, err


@jit
def _solve_all(world2d, image, Rp, tp, opts):
    """Whole pipeline for four points in plane coordinates.

    ``status``: 0 ok, 10 collapsed points, 11 rank deficient, 12 collinear,
    13 singular C, 14 degenerate fourth point, 15 deflation, 16 eigensolver.
    Per-root ``codes`` use the ``_recover``/``_extract`` statuses.
    """
    nroot_max = 6
    sextic = np.zeros(7)
    det8 = np.zeros(9)
    rems = np.zeros(2)
    roots = np.zeros(0)
    codes = np.zeros(0, dtype=np.int64)
    betas = np.zeros(nroot_max)
    ws_ = np.zeros(nroot_max)
    kns = np.zeros(nroot_max)
    Ps = np.zeros((nroot_max, 3, 3))
    Rs = np.zeros((nroot_max, 3, 3))
    ts = np.zeros((nroot_max, 3))
    fs = np.zeros(nroot_max)
    ks = np.zeros(nroot_max)
    depths = np.zeros((nroot_max, 4))
    errs = np.zeros((nroot_max, 4))
    world_n, image_n, shift, wsc, isc, w_rms, i_rms = _normalize(world2d, image)
    out_norm = (shift, wsc, isc)
    if not (w_rms >= opts[14] and i_rms >= opts[14]):
        return 10, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    A = _row3_matrix(world_n, image_n)
    n1, n2, sv = _nullspace2(A)
    if not sv[3] > opts[0] * sv[0]:
        return 11, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    c, area, diam2 = _select_triple(world_n)
    if not area > opts[1] * diam2:
        return 12, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    tri = _TRIPLE_IDX[c]
    fourth = _FOURTH_IDX[c]
    cvec, drow, _ = _row_terms(world_n, image_n, n1, n2)
    C = np.empty((3, 3))
    D = np.empty((3, 4))
    for r in range(3):
        C[r] = cvec[tri[r]]
        D[r] = drow[tri[r]]
    detC = np.linalg.det(C)
    if not abs(detC) > opts[2] * np.sqrt(np.sum(C * C)) ** 3:
        return 13, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    M = np.linalg.solve(C, D)
    q, qscale = _k_coeffs(cvec[fourth], drow[fourth], M)
    if not np.max(np.abs(q)) > opts[3] * qscale:
        return 14, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    B = _beta_matrix(n1, n2, M, q)
    sextic, det8, rems = _sextic(B, q)
    dscale = np.max(np.abs(det8))
    if not (abs(rems[0]) <= opts[4] * dscale and abs(rems[1]) <= opts[4] * dscale):
        return 15, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    L = _trim_len(sextic, opts[11])
    if L < 2:
        return 0, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    c_trim = sextic[:L].copy()
    wr, wi, ok = _eigvals(c_trim, _HQR_MAX_ITS)
    if not ok:
        return 16, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm
    roots, _, _ = _select_real(c_trim, wr, wi, opts[8], int(opts[9]), opts[12], opts[13])
    m = roots.shape[0]
    codes = np.zeros(m, dtype=np.int64)
    for i in range(m):
        st, beta, w, kn, P = _recover(roots[i], B, q, n1, n2, M, opts[6], opts[5], opts[7], int(opts[10]))
        betas[i] = beta
        ws_[i] = w
        kns[i] = kn
        Ps[i] = P
        if st != 0:
            codes[i] = st
            continue
        st, Rn, tn, _ = _extract(P, w, kn, world_n, image_n)
        if st != 0:
            codes[i] = st
            continue
        st, R, t, f, k, dep, err = _finalize(Rn, tn, w, kn, shift, wsc, isc, Rp, tp, world2d, image)
        codes[i] = st
        Rs[i] = R
        ts[i] = t
        fs[i] = f
        ks[i] = k
        depths[i] = dep
        errs[i] = err
    return 0, sextic, det8, rems, roots, codes, betas, ws_, kns, Ps, Rs, ts, fs, ks, depths, errs, out_norm


_RECOVER_ERRORS = {1: DenominatorVanishes, 2: NegativeFocalSquared, 3: RowsInconsistent}
_EXTRACT_ERRORS = {4: DistortionSingular, 5: CheiralityFailed}
_STAGE_ERRORS = {
    10: (DegenerateScene, "points collapse to a single location"),
    11: (RankDeficient, "k/w-free constraints have rank < 4"),
    12: (DegenerateScene, "all four points are collinear"),
    13: (SingularC, "row-2 system is singular (collinear triple or degenerate image)"),
    14: (DegenerateInstance, "fourth-point constraint vanishes identically"),
    15: (DeflationFailed, "deflation remainder exceeds tolerance"),
    16: (EigenFailure, "QR iteration did not converge"),
}


# --------------------------------------------------------------------------
# stages


def _as_xy(a, cols: int, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != cols:
        raise ValueError(f"{name} must have shape (n, {cols}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def canonicalize_plane(world3d, options: SolverOptions = DEFAULT_OPTIONS):
    """Fit the plane through the points and express them in it.

    Returns ``(world2d, plane, residual)`` where ``plane.apply(world2d)``
    reproduces the inputs up to the max out-of-plane ``residual``. Points
    already in ``Z = c`` map with ``R = I``, ``t = (0, 0, c)``.
    """
    pts = _as_xy(world3d, 3, "world points")
    if pts.shape[0] < 3:
        raise DegenerateScene("need at least three world points")
    xy, R, t, residual, s1, diam = _canonical_frame(pts)
    if diam == 0.0:
        raise DegenerateScene("world points coincide")
    if s1 <= options.collinear_tol * diam:
        raise DegenerateScene("world points are collinear")
    if residual > options.coplanarity_tol * diam:
        raise NotCoplanar(f"out-of-plane residual {residual:.3g} exceeds tolerance")
    return xy, PlaneTransform(R, t), float(residual)


def normalize_points(world, image, options: SolverOptions = DEFAULT_OPTIONS):
    """Centre and scale the world points, scale (never shift) the image points.

    Both sets end up with RMS norm sqrt(2). Returns ``(world_n, image_n, norm)``.
    """
    world = _as_xy(world, 2, "world points")
    image = _as_xy(image, 2, "image points")
    world_n, image_n, shift, ws, iscale, w_rms, i_rms = _normalize(world, image)
    if w_rms < options.normalize_eps or i_rms < options.normalize_eps:
        raise DegenerateScene("points collapse to a single location")
    return world_n, image_n, Normalization(shift, float(ws), float(iscale))


def row3_nullspace(world, image, options: SolverOptions = DEFAULT_OPTIONS) -> NullspaceBasis:
    """Orthonormal basis of the solutions of the four k- and w-free equations."""
    world = _as_xy(world, 2, "world points")
    image = _as_xy(image, 2, "image points")
    A = _row3_matrix(world, image)
    n1, n2, s = _nullspace2(A)
    if not s[3] > options.rank_tol * s[0]:
        raise RankDeficient("k/w-free constraints have rank < 4")
    return NullspaceBasis(n1, n2, s, A)


def select_triple(world, options: SolverOptions = DEFAULT_OPTIONS):
    """Largest-area triangle among the four points, ties to the earliest triple.

    Returns ``(triple, fourth)`` as index tuple and int.
    """
    world = _as_xy(world, 2, "world points")
    if world.shape[0] != 4:
        raise ValueError("select_triple needs exactly four points")
    c, area, diam2 = _select_triple(world)
    if not area > options.area_tol * diam2:
        raise DegenerateScene("all four points are collinear")
    return TRIPLES[c], int(_FOURTH_IDX[c])


def build_row2_system(world_triple, image_triple, basis: NullspaceBasis, options: SolverOptions = DEFAULT_OPTIONS) -> Row2System:
    world_triple = _as_xy(world_triple, 2, "world triple")
    image_triple = _as_xy(image_triple, 2, "image triple")
    C, D, use_y = _row_terms(world_triple, image_triple, basis.n1, basis.n2)
    if not abs(np.linalg.det(C)) > options.det_tol * np.linalg.norm(C) ** 3:
        raise SingularC("row-2 system is singular (collinear triple or degenerate image)")
    return Row2System(C=C, D=D, M=np.linalg.solve(C, D), use_y=use_y)


def k_rational(world4th, image4th, basis: NullspaceBasis, sys: Row2System, options: SolverOptions = DEFAULT_OPTIONS) -> KRational:
    """Fourth-point constraint, linear in k, beta and k*beta.

    The third camera row enters through ``M`` and is linear in
    ``(beta, k*beta, k, 1)``, so no higher terms appear.
    """
    w4 = _as_xy(np.reshape(world4th, (1, 2)), 2, "world point")
    i4 = _as_xy(np.reshape(image4th, (1, 2)), 2, "image point")
    cvec, drow, _ = _row_terms(w4, i4, basis.n1, basis.n2)
    q, scale = _k_coeffs(cvec[0], drow[0], sys.M)
    if not np.max(np.abs(q)) > options.q_tol * scale:
        raise DegenerateInstance("fourth-point constraint vanishes identically")
    return KRational(*(float(v) for v in q))


def build_beta_matrix(basis: NullspaceBasis, sys: Row2System, kr: KRational) -> BetaPolyMatrix:
    """Orthogonality and equal-norm constraints times den(beta)^2.

    ``q11 = (p11 p12 + p21 p22) den^2``, ``q12 = (den p31)(den p32)``,
    ``q21 = (p11^2 + p21^2 - p12^2 - p22^2) den^2``, ``q22 = (den p31)^2 - (den p32)^2``.
    """
    B = _beta_matrix(basis.n1, basis.n2, sys.M, kr.as_array())
    return BetaPolyMatrix(Poly(B[0]), Poly(B[1]), Poly(B[2]), Poly(B[3]))


def deflated_determinant(bm: BetaPolyMatrix, kr: KRational):
    """``(sextic, det8, (rem1, rem2))``: ``det B`` divided twice by ``q31 b + q32``.

    Each division runs in the direction that is stable for the divisor's root
    (see :func:`poly.poly_deflate_linear_stable`).
    """
    sextic, det8, rems = _sextic(bm.as_array(), kr.as_array())
    return Poly(sextic), Poly(det8), (float(rems[0]), float(rems[1]))


def beta_polynomial(bm: BetaPolyMatrix, kr: KRational, options: SolverOptions = DEFAULT_OPTIONS) -> Poly:
    """``det B`` with the double k-denominator factor divided out (degree <= 6)."""
    sextic, det8, rems = deflated_determinant(bm, kr)
    scale = float(np.max(np.abs(det8.coeffs)))
    if any(abs(r) > options.deflate_tol * scale for r in rems):
        raise DeflationFailed(f"deflation remainders {rems} exceed tolerance")
    return sextic


def recover_candidate(beta: float, bm: BetaPolyMatrix, kr: KRational, basis: NullspaceBasis, sys: Row2System, options: SolverOptions = DEFAULT_OPTIONS) -> Candidate:
    """``w`` from the better-pivoted row of ``B(beta)``, ``k`` from the fourth point.

    Raises a :class:`CandidateRejected` subclass for non-physical roots.
    """
    status, beta2, w, k, P = _recover(
        float(beta), bm.as_array(), kr.as_array(), basis.n1, basis.n2, sys.M,
        options.den_tol, options.w2_min, options.w2_consistency_tol, options.newton_iters,
    )
    if status:
        raise _RECOVER_ERRORS[status](f"beta={beta:.17g}", beta=float(beta))
    return Candidate(beta=float(beta2), w=float(w), k=float(k), P=P)


def extract_pose(P, w: float, k: float, world, image, normalization: Normalization | None = None, plane: PlaneTransform | None = None, beta: float = float("nan")) -> PoseSolution:
    """Rotation, translation, focal length and distortion from ``P``, ``w``, ``k``.

    ``world``/``image`` are the points ``P`` was solved on. With
    ``normalization`` and ``plane`` the result is mapped back to the caller's
    frame and units; reprojection errors are in the caller's image units.
    """
    if not w > 0.0:
        raise NegativeFocalSquared("w must be positive", beta=beta)
    world = _as_xy(world, 2, "world points")
    image = _as_xy(image, 2, "image points")
    P = np.ascontiguousarray(P, dtype=np.float64)
    status, R_n, t_n, _ = _extract(P, float(w), float(k), world, image)
    if status:
        raise _EXTRACT_ERRORS[status](f"beta={beta:.17g}", beta=beta)
    norm = normalization or Normalization(np.zeros(2), 1.0, 1.0)
    plane = plane or PlaneTransform.identity()
    status, R, t, f, kk, depths, err = _finalize(
        R_n, t_n, float(w), float(k), norm.world_shift, norm.world_scale, norm.image_scale,
        plane.R, plane.t, norm.world_inverse(world), norm.image_inverse(image),
    )
    if status:
        raise _EXTRACT_ERRORS[status](f"beta={beta:.17g}", beta=beta)
    return PoseSolution(
        R=R, t=t, f=float(f), k=float(kk), beta=float(beta), w=float(w), depths=depths,
        max_reproj_err=float(np.max(err)), reproj_errors=err, P=P.copy(),
    )


def reprojection_error(sol: PoseSolution, world3d, image) -> np.ndarray:
    """Distances between observed and reprojected (distorted) image points."""
    pts = _as_xy(world3d, 3, "world points")
    img = _as_xy(image, 2, "image points")
    err = _reproj_errors(np.asarray(sol.R, dtype=np.float64), np.asarray(sol.t, dtype=np.float64), float(sol.f), float(sol.k), pts, img)
    if not np.all(np.isfinite(err)):
        raise DistortionSingular("forward distortion has no real solution for some point")
    return err


def solve_planar(world2d, image, plane: PlaneTransform | None = None, options: SolverOptions = DEFAULT_OPTIONS) -> SolveReport:
    """Solve from points already expressed in plane coordinates."""
    world2d = _as_xy(world2d, 2, "world points")
    image = _as_xy(image, 2, "image points")
    if world2d.shape[0] != 4 or image.shape[0] != 4:
        raise ValueError("need exactly 4 points")
    plane = plane or PlaneTransform.identity()
    (status, sextic, det8, rems, roots, codes, betas, ws, kns, Ps, Rs, ts, fs, ks, depths, errs,
     (shift, wsc, isc)) = _solve_all(world2d, image, plane.R, plane.t, options.as_array)
    if status:
        cls, msg = _STAGE_ERRORS[status]
        raise cls(msg)
    norm = Normalization(shift, float(wsc), float(isc))
    report = SolveReport(
        solutions=[], roots=roots, beta_poly=Poly(sextic), det8=Poly(det8),
        deflation_remainders=(float(rems[0]), float(rems[1])),
        world_n=norm.world(world2d), image_n=norm.image(image), normalization=norm, plane=plane,
    )
    for i, code in enumerate(codes):
        if code:
            cls = _RECOVER_ERRORS.get(code) or _EXTRACT_ERRORS[code]
            report.rejections.append(Rejection(float(roots[i]), cls.kind, f"beta={roots[i]:.17g}"))
            continue
        err = errs[i].copy()
        report.solutions.append(PoseSolution(
            R=Rs[i].copy(), t=ts[i].copy(), f=float(fs[i]), k=float(ks[i]), beta=float(betas[i]),
            w=float(ws[i]), depths=depths[i].copy(), max_reproj_err=float(err.max()),
            reproj_errors=err, P=Ps[i].copy(),
        ))
    report.solutions.sort(key=lambda s: s.max_reproj_err)
    return report


def solve_detailed(world3d, image, options: SolverOptions = DEFAULT_OPTIONS) -> SolveReport:
    """:func:`solve` plus the intermediate polynomial, roots and rejections."""
    world3d = _as_xy(world3d, 3, "world points")
    image = _as_xy(image, 2, "image points")
    if world3d.shape[0] != 4 or image.shape[0] != 4:
        raise ValueError("need exactly 4 points")
    world2d, plane, _ = canonicalize_plane(world3d, options)
    report = solve_planar(world2d, image, plane, options)
    # errors against the caller's 3D points rather than their plane coordinates
    for i, sol in enumerate(report.solutions):
        err = _reproj_errors(sol.R, sol.t, sol.f, sol.k, world3d, image)
        report.solutions[i] = replace(sol, reproj_errors=err, max_reproj_err=float(err.max()))
    report.solutions.sort(key=lambda s: s.max_reproj_err)
    return report


def solve(world3d, image, options: SolverOptions = DEFAULT_OPTIONS) -> list[PoseSolution]:
    """All physical poses for four coplanar correspondences, best first.

    ``world3d`` is (4, 3), ``image`` is (4, 2) distorted image coordinates with
    the distortion centre at the origin. Returns 0 to 6 solutions sorted by
    max reprojection error.
    """
    return solve_detailed(world3d, image, options).solutions


def constraint_residuals(P, w: float, k: float, world, image) -> np.ndarray:
    """Relative residuals of the solver's equations at a normalized-frame solution.

    Returns ``[f1, f2, rows...]``: orthogonality, equal norm, then both
    k-dependent cross-product rows for every point, each divided by the
    magnitude of its largest term.
    """
    P = np.asarray(P, dtype=np.float64)
    v1 = np.array([w * P[0, 0], w * P[1, 0], P[2, 0]])
    v2 = np.array([w * P[0, 1], w * P[1, 1], P[2, 1]])
    f1 = abs(v1 @ v2) / max(np.sum(np.abs(v1 * v2)), 1e-300)
    f2 = abs(v1 @ v1 - v2 @ v2) / max(v1 @ v1 + v2 @ v2, 1e-300)
    out = [f1, f2]
    for (X, Y), (x, y) in zip(np.asarray(world), np.asarray(image)):
        U = np.array([X, Y, 1.0])
        dist = 1.0 + k * (x * x + y * y)
        v = P @ U
        scale = max((abs(dist) + abs(x) + abs(y)) * np.linalg.norm(v), 1e-300)
        out.append(abs(dist * v[0] - x * v[2]) / scale)
        out.append(abs(dist * v[1] - y * v[2]) / scale)
    return np.array(out)
