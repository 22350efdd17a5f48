import math

import numpy as np
import pytest

from planar_p4pfr import solver as S
from planar_p4pfr.errors import (
    CandidateRejected,
    CheiralityFailed,
    DegenerateScene,
    DenominatorVanishes,
    NegativeFocalSquared,
    NotCoplanar,
    RankDeficient,
    SingularC,
)
from planar_p4pfr.geometry import random_rotation, so3_exp
from planar_p4pfr.poly import Poly, real_roots
from planar_p4pfr.scene import SceneConfig, pose_error, project_points, random_instance

from oracles import matched, normalized_truth, run_stages

SEEDS = range(40)


@pytest.fixture(scope="module")
def instances():
    return [random_instance(SceneConfig(seed=s)) for s in SEEDS]


# -- canonicalize_plane ----------------------------------------------------


def test_plane_already_z0():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 2, 0], [0, 1, 0]], dtype=float)
    xy, plane, res = S.canonicalize_plane(pts)
    np.testing.assert_array_equal(plane.R, np.eye(3))
    np.testing.assert_array_equal(plane.t, np.zeros(3))
    assert res == 0.0
    np.testing.assert_array_equal(xy, pts[:, :2])


def test_plane_offset_z5():
    pts = np.array([[0, 0, 5], [1, 0, 5], [1, 2, 5], [0, 1, 5]], dtype=float)
    xy, plane, res = S.canonicalize_plane(pts)
    np.testing.assert_array_equal(plane.t, [0, 0, 5])
    assert res == 0.0
    np.testing.assert_allclose(plane.apply(xy), pts, atol=1e-15)


def test_plane_rotated_square_congruent(rng):
    square = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    for _ in range(20):
        G = random_rotation(rng)
        pts = square @ G.T + rng.normal(size=3)
        xy, plane, res = S.canonicalize_plane(pts)
        assert res <= 1e-12
        d_in = np.linalg.norm(square[:, None, :2] - square[None, :, :2], axis=-1)
        d_out = np.linalg.norm(xy[:, None] - xy[None], axis=-1)
        np.testing.assert_allclose(d_out, d_in, atol=1e-12)
        np.testing.assert_allclose(plane.apply(xy), pts, atol=1e-12)
        np.testing.assert_allclose(plane.R.T @ plane.R, np.eye(3), atol=1e-14)


def test_plane_errors():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.1]])
    with pytest.raises(NotCoplanar):
        S.canonicalize_plane(pts)
    with pytest.raises(DegenerateScene):
        S.canonicalize_plane(np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3.0]]))


# -- normalize_points ----------------------------------------------------


def test_normalize_fixpoint():
    sq = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
    wn, im, norm = S.normalize_points(sq, sq)
    assert norm.world_scale == pytest.approx(1.0, abs=1e-15)
    assert norm.image_scale == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(norm.world_shift, [0, 0])


def test_normalize_world_square():
    w = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
    _, _, norm = S.normalize_points(w, w)
    np.testing.assert_allclose(norm.world_shift, [-1, -1])
    assert norm.world_scale == pytest.approx(1.0, rel=1e-15)


def test_normalize_image_scaled_by_100():
    sq = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
    _, im, norm = S.normalize_points(sq, 100 * sq)
    assert norm.image_scale == pytest.approx(0.01, rel=1e-15)
    np.testing.assert_allclose(im, sq, rtol=1e-15)


def test_normalize_round_trip(rng):
    w = rng.normal(size=(4, 2)) * 7 + 3
    i = rng.normal(size=(4, 2)) * 0.01
    wn, im, norm = S.normalize_points(w, i)
    np.testing.assert_allclose(norm.world_inverse(wn), w, rtol=1e-14, atol=1e-14 * np.abs(w).max())
    np.testing.assert_allclose(norm.image_inverse(im), i, rtol=1e-14)
    np.testing.assert_allclose(np.sqrt(np.mean(np.sum(im**2, 1))), math.sqrt(2), rtol=1e-14)


def test_normalize_collapsed():
    with pytest.raises(DegenerateScene):
        S.normalize_points(np.ones((4, 2)), np.eye(4)[:, :2])


def test_normalization_denormalize_scaling():
    norm = S.Normalization(np.array([0.5, -1.0]), 2.0, 0.01)
    R = np.eye(3)
    _, t, f, k = norm.denormalize(R, np.array([0.0, 0.0, 4.0]), 3.0, 0.2)
    assert f == pytest.approx(300.0)
    assert k == pytest.approx(0.2e-4)
    np.testing.assert_allclose(t, [0.5, -1.0, 2.0])


# -- row3_nullspace ------------------------------------------------------


def test_nullspace_ground_truth_in_span(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        b = st.basis
        assert abs(np.linalg.norm(b.n1) - 1) <= 1e-12 and abs(np.linalg.norm(b.n2) - 1) <= 1e-12
        assert abs(b.n1 @ b.n2) <= 1e-12
        scale = np.linalg.norm(b.matrix)
        assert np.max(np.abs(b.matrix @ b.n1)) <= 1e-12 * scale
        assert np.max(np.abs(b.matrix @ b.n2)) <= 1e-12 * scale
        assert normalized_truth(st, gt).rows12_residual <= 1e-10


def test_nullspace_duplicate_correspondence(instances):
    gt = instances[0]
    world, _, _ = S.canonicalize_plane(gt.world3d)
    image = gt.image.copy()
    world[3], image[3] = world[1], image[1]
    with pytest.raises(RankDeficient):
        S.row3_nullspace(world, image)


def test_nullspace_point_at_image_origin(instances):
    gt = instances[0]
    world, _, _ = S.canonicalize_plane(gt.world3d)
    image = gt.image.copy()
    image[2] = 0.0
    with pytest.raises(RankDeficient):
        S.row3_nullspace(world, image)


# -- select_triple -------------------------------------------------------


def test_select_triple_examples():
    assert S.select_triple(np.array([[0, 0], [1, 0], [0, 1], [10, 10]], dtype=float)) == ((1, 2, 3), 0)
    tri, fourth = S.select_triple(np.array([[0, 0], [1, 0], [2, 0], [0.5, 1]]))
    assert 3 in tri and fourth != 3
    assert S.select_triple(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)) == ((0, 1, 2), 3)


def test_select_triple_all_collinear():
    with pytest.raises(DegenerateScene):
        S.select_triple(np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]]))


# -- build_row2_system / k_rational -------------------------------------


def test_row2_definition_and_ground_truth(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        C, D, M = st.sys.C, st.sys.D, st.sys.M
        assert np.linalg.norm(C @ M - D) <= 1e-12 * np.linalg.norm(D)
        tr = normalized_truth(st, gt)
        z = np.array([tr.beta, tr.k * tr.beta, tr.k, 1.0])
        p3 = tr.P[2, [0, 1, 2]]
        assert np.linalg.norm(M @ z - p3) <= 1e-9 * np.linalg.norm(p3)
        assert st.kr.k(tr.beta) == pytest.approx(tr.k, abs=1e-9 * max(1.0, abs(tr.k)))


def test_row2_k_zero_sanity():
    for seed in range(10):
        gt = random_instance(SceneConfig(seed=seed, k_range=(0.0, 0.0)))
        st = run_stages(gt.world3d, gt.image)
        tr = normalized_truth(st, gt)
        p3 = tr.P[2]
        assert np.linalg.norm(st.sys.M @ [tr.beta, 0, 0, 1] - p3) <= 1e-10 * np.linalg.norm(p3)
        q = st.kr
        assert abs(q.q33 * tr.beta + q.q34) <= 1e-10 * (abs(q.q33 * tr.beta) + abs(q.q34))


def test_row2_collinear_triple(instances):
    gt = instances[1]
    st = run_stages(gt.world3d, gt.image)
    world = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(SingularC):
        S.build_row2_system(world, st.image_n[:3], st.basis)


def test_k_rational_scaling(instances):
    gt = instances[2]
    for s in (0.05, 30.0):
        base = S.solve(gt.world3d, gt.image)
        scaled = S.solve(gt.world3d, gt.image * s)
        best = min(scaled, key=lambda sol: np.linalg.norm(sol.R - base[0].R))
        assert best.k == pytest.approx(base[0].k / s**2, rel=1e-8)
        assert best.f == pytest.approx(base[0].f * s, rel=1e-8)


# -- build_beta_matrix / beta_polynomial ---------------------------------


def _f12(st, beta, w):
    k = st.kr.k(beta)
    p12 = (st.basis.n1 + beta * st.basis.n2).reshape(2, 3)
    p3 = st.sys.M @ [beta, k * beta, k, 1.0]
    v1 = np.array([w * p12[0, 0], w * p12[1, 0], p3[0]])
    v2 = np.array([w * p12[0, 1], w * p12[1, 1], p3[1]])
    return v1 @ v2, v1 @ v1 - v2 @ v2, v1, v2


def test_beta_matrix_ground_truth(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        tr = normalized_truth(st, gt)
        B = st.bm(tr.beta)
        # relative to the size of the column products the rows are built from
        _, _, v1, v2 = _f12(st, tr.beta, tr.w)
        d2 = st.kr.denominator(tr.beta) ** 2
        for row in B:
            r = row[0] * tr.w**2 + row[1]
            assert abs(r) <= 1e-8 * d2 * (v1 @ v1 + v2 @ v2)
        assert all(len(p) <= 5 for p in (st.bm.q11, st.bm.q12, st.bm.q21, st.bm.q22))


def test_beta_matrix_direct_evaluation(instances, rng):
    for gt in instances[:10]:
        st = run_stages(gt.world3d, gt.image)
        den = st.kr.denominator
        for beta in rng.uniform(-3, 3, size=5):
            w = rng.uniform(0.2, 2.0)
            f1, f2, v1, v2 = _f12(st, beta, w)
            B = st.bm(beta)
            d2 = den(beta) ** 2
            scale = d2 * (np.abs(v1) @ np.abs(v2) + v1 @ v1 + v2 @ v2)
            assert abs(B[0, 0] * w * w + B[0, 1] - d2 * f1) <= 1e-10 * scale
            assert abs(B[1, 0] * w * w + B[1, 1] - d2 * f2) <= 1e-10 * scale


def test_beta_matrix_zero_n2(instances):
    gt = instances[3]
    st = run_stages(gt.world3d, gt.image)
    basis = S.NullspaceBasis(st.basis.n1, np.zeros(6), st.basis.singular_values, st.basis.matrix)
    idx = list(st.triple)
    sys = S.build_row2_system(st.world_n[idx], st.image_n[idx], basis)
    kr = S.k_rational(st.world_n[st.fourth], st.image_n[st.fourth], basis, sys)
    bm = S.build_beta_matrix(basis, sys, kr)
    for p in (bm.q11, bm.q12, bm.q21, bm.q22):
        assert p.degree() <= 0


def test_beta_polynomial_factorization(instances, rng):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        sextic, det8, rems = S.deflated_determinant(st.bm, st.kr)
        assert sextic.degree() == 6
        den = st.kr.denominator
        for beta in rng.uniform(-5, 5, size=10):
            lhs, rhs = det8(beta), sextic(beta) * den(beta) ** 2
            assert abs(lhs - rhs) <= 1e-9 * np.max(np.abs(det8.coeffs)) * (1 + abs(beta)) ** 8
        tr = normalized_truth(st, gt)
        c = sextic.coeffs
        assert abs(sextic(tr.beta)) <= 1e-8 * np.max(np.abs(c)) * (1 + abs(tr.beta)) ** 6


def test_deflation_remainders_1000():
    worst = 0.0
    for seed in range(1000):
        gt = random_instance(SceneConfig(seed=seed))
        rep = S.solve_detailed(gt.world3d, gt.image)
        worst = max(worst, max(map(abs, rep.deflation_remainders)) / np.max(np.abs(rep.det8.coeffs)))
    assert worst <= 1e-8


# -- recover_candidate / extract_pose ------------------------------------


def test_recover_true_root(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        tr = normalized_truth(st, gt)
        cand = S.recover_candidate(tr.beta, st.bm, st.kr, st.basis, st.sys)
        assert cand.w == pytest.approx(tr.w, rel=1e-8)
        assert cand.k == pytest.approx(tr.k, rel=1e-8, abs=1e-8)


def test_recover_rejections(instances):
    gt = instances[4]
    st = run_stages(gt.world3d, gt.image)
    one = Poly([1.0])
    fake = S.BetaPolyMatrix(one, one, one, one)
    beta = 0.37 if abs(st.kr.denominator(0.37)) > 1e-3 else 1.37
    with pytest.raises(NegativeFocalSquared):
        S.recover_candidate(beta, fake, st.kr, st.basis, st.sys)
    with pytest.raises(DenominatorVanishes):
        S.recover_candidate(-st.kr.q32 / st.kr.q31, st.bm, st.kr, st.basis, st.sys)


def test_extract_identity_camera():
    world = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    image = world / 5.0
    P = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 5.0]])
    sol = S.extract_pose(P, 1.0, 0.0, world, image)
    np.testing.assert_allclose(sol.R, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sol.t, [0, 0, 5], atol=1e-15)
    np.testing.assert_allclose(sol.depths, 5.0)
    neg = S.extract_pose(-P, 1.0, 0.0, world, image)
    np.testing.assert_array_equal(neg.R, sol.R)
    np.testing.assert_array_equal(neg.t, sol.t)
    np.testing.assert_array_equal(neg.depths, sol.depths)


def test_extract_mixed_depths():
    world = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    P = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, -0.5]])
    with pytest.raises(CheiralityFailed):
        S.extract_pose(P, 1.0, 0.0, world, world)


def test_extract_generated(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        tr = normalized_truth(st, gt)
        sol = S.extract_pose(tr.P, tr.w, tr.k, st.world_n, st.image_n, st.norm, st.plane, tr.beta)
        assert np.linalg.norm(sol.R - gt.R) <= 1e-7
        assert np.linalg.norm(sol.t - gt.t) <= 1e-7 * np.linalg.norm(gt.t)


# -- solve -------------------------------------------------------------


def test_solve_ground_truth_found(instances):
    for gt in instances:
        rep = S.solve_detailed(gt.world3d, gt.image)
        assert 1 <= len(rep.solutions) <= 6
        errs = [s.max_reproj_err * rep.normalization.image_scale for s in rep.solutions]
        assert errs == sorted(errs)
        assert min(pose_error(s, gt) for s in rep.solutions) <= 1e-6
        best = min(rep.solutions, key=lambda s: pose_error(s, gt))
        assert best.max_reproj_err * rep.normalization.image_scale <= 1e-9


def test_solve_three_collinear_points():
    world = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0.5, 1.5, 0]])
    R = so3_exp(np.array([0.3, -0.2, 0.1]))
    t = np.array([0.0, 0.0, 6.0]) - R @ [1, 0.5, 0]
    image = project_points(R, t, 2.0, -0.2, world)
    sols = S.solve(world, image)
    assert any(np.linalg.norm(s.R - R) <= 1e-8 and abs(s.f - 2.0) <= 1e-8 for s in sols)


def test_staged_pipeline_matches_fused(instances):
    for gt in instances:
        st = run_stages(gt.world3d, gt.image)
        rep = S.solve_detailed(gt.world3d, gt.image)
        np.testing.assert_allclose(st.sextic.coeffs, rep.beta_poly.coeffs, rtol=1e-12, atol=1e-14 * np.abs(st.sextic.coeffs).max())
        staged = []
        for beta in real_roots(st.sextic).real_roots:
            try:
                c = S.recover_candidate(beta, st.bm, st.kr, st.basis, st.sys)
                staged.append(S.extract_pose(c.P, c.w, c.k, st.world_n, st.image_n, st.norm, st.plane, c.beta))
            except CandidateRejected:
                pass
        assert matched(staged, rep.solutions, 1e-9)


def test_solve_input_validation():
    with pytest.raises(ValueError):
        S.solve(np.zeros((3, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        S.solve(np.full((4, 3), np.nan), np.zeros((4, 2)))


# -- reprojection_error ------------------------------------------------


def test_reprojection_error(instances):
    gt = instances[5]
    sol = S.solve(gt.world3d, gt.image)[0]
    assert np.all(S.reprojection_error(sol, gt.world3d, gt.image) <= 1e-9 * np.sqrt(np.mean(np.sum(gt.image**2, 1))))
    off = S.PoseSolution(sol.R, sol.t * 1.1, sol.f, sol.k, sol.beta, sol.w, sol.depths, 0.0, np.zeros(4))
    assert np.all(S.reprojection_error(off, gt.world3d, gt.image) > 0)


def test_reprojection_error_pinhole():
    gt = random_instance(SceneConfig(seed=11, k_range=(0.0, 0.0)))
    sol = S.PoseSolution(gt.R, gt.t * 1.02, gt.f, 0.0, math.nan, math.nan, gt.depths, 0.0, np.zeros(4))
    Xc = gt.world3d @ gt.R.T + gt.t * 1.02
    pin = gt.f * Xc[:, :2] / Xc[:, 2:]
    expect = np.linalg.norm(pin - gt.image, axis=1)
    np.testing.assert_allclose(S.reprojection_error(sol, gt.world3d, gt.image), expect, rtol=1e-13)
