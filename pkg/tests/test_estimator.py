"""Test minimal solvers, residuals, LO-RANSAC and the frame check."""

import numpy as np
import pytest

from wxbs.core import LocalAffineFrame
from wxbs.estimator import (
    RansacParams,
    TwoViewModel,
    adaptive_iterations,
    fundamental_solve,
    homography_dlt,
    laf_check,
    laf_check_arrays,
    loransac,
    model_distance,
    normalize_model,
    residual,
    sampson,
    symmetric_epipolar,
)
from wxbs.exceptions import (
    DegenerateConfiguration,
    InsufficientData,
    ModelKindError,
    NoModelFound,
)
from wxbs.utils import apply_homography, skew
from tests.data import similarity, two_camera_scene


def true_fundamental(scene) -> np.ndarray:
    F = np.linalg.inv(scene.K2).T @ skew(scene.t) @ scene.R @ np.linalg.inv(scene.K1)
    return normalize_model(F)


def close_up_to_sign(A: np.ndarray, B: np.ndarray) -> float:
    return min(np.linalg.norm(A - B), np.linalg.norm(A + B))


def test_model():
    with pytest.raises(ModelKindError):
        TwoViewModel("affine", np.eye(3))
    m = TwoViewModel("homography", np.eye(3).ravel(), [3, 1])
    assert m.M.shape == (3, 3)
    assert m.num_inliers == 2


def test_normalize_model():
    M = normalize_model(-np.diag([3.0, 1.0, 1.0]))
    assert np.linalg.norm(M) == pytest.approx(1.0)
    assert M[0, 0] > 0
    with pytest.raises(DegenerateConfiguration):
        normalize_model(np.zeros((3, 3)))


def test_ransac_params():
    with pytest.raises(ValueError):
        RansacParams(inlier_threshold=0)
    with pytest.raises(ValueError):
        RansacParams(confidence=1.0)
    with pytest.raises(ValueError):
        RansacParams(plane_fraction=0.95, homography_fraction=0.9)


def test_homography_dlt():
    H = similarity(20.0, 1.3, 15.0, -4.0)
    H[2, :2] = (1e-4, -2e-4)
    u = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 80.0], [120.0, 90.0]])
    v = apply_homography(H, u)
    assert close_up_to_sign(homography_dlt(u, v), normalize_model(H)) < 1e-9
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 200, size=(30, 2))
    est = homography_dlt(u, apply_homography(H, u))
    assert close_up_to_sign(est, normalize_model(H)) < 1e-9
    with pytest.raises(InsufficientData):
        homography_dlt(u[:3], u[:3])
    line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 5.0]])
    with pytest.raises(DegenerateConfiguration):
        homography_dlt(line, line)


def test_seven_point_monte_carlo():
    for seed in range(50):
        scene = two_camera_scene(7, seed=seed)
        Fs = fundamental_solve(scene.u, scene.v, "7pt")
        assert 1 <= len(Fs) <= 3
        F_true = true_fundamental(scene)
        assert min(close_up_to_sign(F, F_true) for F in Fs) < 1e-5
        for F in Fs:
            assert abs(np.linalg.det(F)) < 1e-8
            assert np.linalg.norm(F) == pytest.approx(1.0)


def test_eight_point():
    scene = two_camera_scene(60, seed=1)
    (F,) = fundamental_solve(scene.u, scene.v)
    assert close_up_to_sign(F, true_fundamental(scene)) < 1e-6
    assert np.linalg.matrix_rank(F, tol=1e-8) == 2
    assert np.max(model_distance(("fundamental", F), scene.u, scene.v)) < 1e-6
    with pytest.raises(InsufficientData):
        fundamental_solve(scene.u[:7], scene.v[:7], "8pt")
    with pytest.raises(InsufficientData):
        fundamental_solve(scene.u[:8], scene.v[:8], "7pt")
    with pytest.raises(ValueError):
        fundamental_solve(scene.u, scene.v, "5pt")  # type: ignore[arg-type]


def test_residuals():
    scene = two_camera_scene(40, seed=2)
    F = true_fundamental(scene)
    rng = np.random.default_rng(2)
    v = scene.v + rng.normal(scale=2.0, size=scene.v.shape)
    sym = symmetric_epipolar(F, scene.u, v)
    samp = sampson(F, scene.u, v)
    # 1/a + 1/b >= 4 / (a + b)
    assert (sym >= 4 * samp - 1e-9).all()
    model = ("fundamental", F)
    np.testing.assert_allclose(residual(model, scene.u, v, "sampson"), samp)
    np.testing.assert_allclose(model_distance(model, scene.u, v), np.sqrt(sym / 2))
    H = similarity(10.0, 1.0, 5.0, 5.0)
    u = rng.uniform(0, 100, size=(10, 2))
    v = apply_homography(H, u) + [3.0, 4.0]
    t = residual(("homography", H), u, v, "symmetric_transfer")
    # Forward error 5, backward error 5 for a rotation
    np.testing.assert_allclose(t, 5.0)
    with pytest.raises(ModelKindError):
        residual(("homography", H), u, u, "sampson")
    with pytest.raises(ModelKindError):
        residual(("fundamental", F), u, u, "symmetric_transfer")
    with pytest.raises(ModelKindError):
        residual(("fundamental", F), u, u, "algebraic")


def test_adaptive_iterations():
    assert adaptive_iterations(1.0, 4, 0.99) == 1
    assert adaptive_iterations(0.5, 4, 0.99) == 72
    assert adaptive_iterations(0.0, 7, 0.99) > 10**9


def with_outliers(u, v, n_out, seed):
    rng = np.random.default_rng(seed)
    uo = rng.uniform(0, 640, size=(n_out, 2))
    vo = rng.uniform(0, 480, size=(n_out, 2))
    return np.concatenate([u, uo]), np.concatenate([v, vo])


def test_loransac_homography():
    rng = np.random.default_rng(3)
    H = similarity(-35.0, 0.8, 100.0, 40.0)
    u = rng.uniform(0, 400, size=(60, 2))
    v = apply_homography(H, u) + rng.normal(scale=0.3, size=(60, 2))
    u, v = with_outliers(u, v, 40, seed=4)
    m = loransac(u, v, "homography")
    assert m.kind == "homography"
    inl = set(m.inliers.tolist())
    assert set(range(60)) <= inl
    assert len(inl - set(range(60))) <= 2
    assert m.score == m.num_inliers
    # Same seed, same answer
    m2 = loransac(u, v, "homography")
    np.testing.assert_array_equal(m.M, m2.M)
    np.testing.assert_array_equal(m.inliers, m2.inliers)
    no_lo = loransac(u, v, "homography", RansacParams(lo_enabled=False, seed=7))
    assert no_lo.num_inliers >= 55


def test_loransac_fundamental():
    scene = two_camera_scene(100, seed=5)
    rng = np.random.default_rng(5)
    v = scene.v + rng.normal(scale=0.3, size=scene.v.shape)
    u, v = with_outliers(scene.u, v, 25, seed=6)
    for request in ("fundamental", "auto"):
        m = loransac(u, v, request)
        assert m.kind == "fundamental"
        inl = set(m.inliers.tolist())
        assert len(inl & set(range(100))) >= 95
        assert len(inl - set(range(100))) <= 3
        assert abs(np.linalg.det(m.M)) < 1e-8


def test_loransac_planar_auto():
    scene = two_camera_scene(80, seed=8, planar=True)
    u, v = with_outliers(scene.u, scene.v, 20, seed=9)
    m = loransac(u, v, "auto")
    assert m.kind == "homography"
    assert set(range(80)) <= set(m.inliers.tolist())


def test_loransac_truncated_score():
    rng = np.random.default_rng(10)
    H = similarity(5.0, 1.1, 3.0, 3.0)
    u = rng.uniform(0, 300, size=(40, 2))
    v = apply_homography(H, u)
    m = loransac(u, v, "homography", RansacParams(truncated_score=True))
    assert m.num_inliers == 40
    assert m.score == pytest.approx(40.0)


def test_loransac_failures():
    u = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InsufficientData):
        loransac(u, u, "homography")
    with pytest.raises(ModelKindError):
        loransac(u, u, "affine")
    square = np.array(
        [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0], [30.0, 60.0]]
    )
    moved = square.copy()
    moved[4] += (100.0, 0.0)
    with pytest.raises(NoModelFound):
        loransac(square, moved, "homography")


def test_laf_check():
    H = ("homography", similarity(0.0, 1.0, 10.0, 0.0))
    A = np.array([[4.0, 0.0], [1.0, 2.0]])
    good = LocalAffineFrame(50.0, 50.0, A)
    good2 = LocalAffineFrame(60.0, 50.0, A)
    wrong_shape = LocalAffineFrame(60.0, 50.0, A @ np.diag([3.0, 1.0]))
    wrong_center = LocalAffineFrame(80.0, 50.0, A)
    keep = laf_check(H, [good, good, good], [good2, wrong_shape, wrong_center], 2.0)
    assert keep == [0]
    assert laf_check(H, [], [], 2.0) == []
    with pytest.raises(ValueError):
        laf_check(H, [good], [], 2.0)
    nothing = np.zeros((0, 2))
    assert laf_check_arrays(H, nothing, [], nothing, [], 2.0).shape == (0,)
