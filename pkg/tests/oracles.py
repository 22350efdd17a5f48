"""Independent reference computations used by the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from planar_p4pfr import solver as S


@dataclass
class Staged:
    world2d: np.ndarray
    plane: object
    world_n: np.ndarray
    image_n: np.ndarray
    norm: object
    basis: object
    triple: tuple
    fourth: int
    sys: object
    kr: object
    bm: object
    sextic: object


def run_stages(world3d, image, options=S.DEFAULT_OPTIONS) -> Staged:
    world2d, plane, _ = S.canonicalize_plane(world3d, options)
    wn, im, norm = S.normalize_points(world2d, image, options)
    basis = S.row3_nullspace(wn, im, options)
    triple, fourth = S.select_triple(wn, options)
    idx = list(triple)
    sys = S.build_row2_system(wn[idx], im[idx], basis, options)
    kr = S.k_rational(wn[fourth], im[fourth], basis, sys, options)
    bm = S.build_beta_matrix(basis, sys, kr)
    sextic = S.beta_polynomial(bm, kr, options)
    return Staged(world2d, plane, wn, im, norm, basis, triple, fourth, sys, kr, bm, sextic)


@dataclass
class NormalizedTruth:
    beta: float
    w: float
    k: float
    P: np.ndarray  # scaled so rows 1-2 equal n1 + beta*n2
    rows12_residual: float


def normalized_truth(st: Staged, gt) -> NormalizedTruth:
    """Ground-truth camera expressed in the solver's normalized frame."""
    R2 = gt.R @ st.plane.R
    t2 = gt.R @ st.plane.t + gt.t
    ws, s_img, shift = st.norm.world_scale, st.norm.image_scale, st.norm.world_shift
    f_n = gt.f * s_img
    k_n = gt.k / s_img**2
    cols = np.column_stack([R2[:, 0], R2[:, 1], ws * (t2 - R2[:, 0] * shift[0] - R2[:, 1] * shift[1])])
    P = np.diag([1.0, 1.0, 1.0 / f_n]) @ cols
    v = np.concatenate([P[0], P[1]])
    A = np.column_stack([st.basis.n1, st.basis.n2])
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = np.linalg.norm(A @ coef - v) / np.linalg.norm(v)
    P = P / coef[0]
    return NormalizedTruth(beta=coef[1] / coef[0], w=1.0 / f_n, k=k_n, P=P, rows12_residual=resid)


def pose_close(a, b, tol):
    """Relative agreement of (R, t, f, k) between two poses."""
    scale_k = max(abs(a.k), abs(b.k), 1e-300)
    return (
        np.linalg.norm(a.R - b.R) <= tol
        and np.linalg.norm(a.t - b.t) <= tol * np.linalg.norm(b.t)
        and abs(a.f - b.f) <= tol * abs(b.f)
        and abs(a.k - b.k) <= tol * scale_k + 1e-300
    )


def matched(sols_a, sols_b, tol, key=lambda s: s):
    """Every pose in ``sols_a`` has a partner in ``sols_b`` and vice versa."""
    if len(sols_a) != len(sols_b):
        return False
    return all(any(pose_close(key(a), b, tol) for b in sols_b) for a in sols_a)


def sign_change_roots(det8, den, lo=-50.0, hi=50.0, n=1_000_000):
    """Brute-force real roots of det8/den^2 on [lo, hi] by sampling and bisection."""

    def g(x):
        return np.polyval(det8[::-1], x) / np.polyval(den[::-1], x) ** 2

    xs = np.linspace(lo, hi, n)
    ys = g(xs)
    roots = [x for x, y in zip(xs, ys) if y == 0.0]
    idx = np.nonzero(np.sign(ys[:-1]) * np.sign(ys[1:]) < 0)[0]
    a, b = xs[idx].copy(), xs[idx + 1].copy()
    ga = ys[idx].copy()
    for _ in range(60):
        m = 0.5 * (a + b)
        gm = g(m)
        left = np.sign(gm) == np.sign(ga)
        a = np.where(left, m, a)
        ga = np.where(left, gm, ga)
        b = np.where(left, b, m)
    return np.sort(np.concatenate([roots, 0.5 * (a + b)]))
