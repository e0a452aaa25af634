"""Test the evaluation metrics."""

import numpy as np
import pytest

from wxbs.estimator import TwoViewModel, model_distance, normalize_model
from wxbs.evalkit import (
    CameraIntrinsics,
    DepthReprojection,
    GtCorrespondenceSet,
    covisibility,
    gt_errors,
    maa,
    pair_verdicts,
    pose_error,
    pose_from_fundamental,
    recall_curve,
    recall_from_errors,
    repeatability_and_ms,
    rotation_angle,
    summarize_recall,
    turntable_gt_F,
)
from wxbs.exceptions import DegenerateConfiguration, InsufficientData
from wxbs.utils import skew
from tests.data import project, random_rotation, similarity, two_camera_scene


def rot_z(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_intrinsics():
    K = CameraIntrinsics(f=35.0, FR_x=36.0, FR_y=24.0, m=720, n=480).matrix()
    np.testing.assert_allclose(K, [[700.0, 0, 360], [0, 700.0, 240], [0, 0, 1]])
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 1, 1, 1)


def test_recall():
    np.testing.assert_allclose(
        recall_from_errors([0.5, 1.0, 3.0, 10.0], [1, 2, 5, 20]), [0.25, 0.5, 0.75, 1.0]
    )
    with pytest.raises(InsufficientData):
        recall_from_errors([], [1])
    H = similarity(0.0, 1.0, 2.0, 0.0)
    u = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 5.0]])
    v = u + [2.0, 0.0]
    v[2] += (0.0, 4.0)
    gt = GtCorrespondenceSet(u, v, category="easy")
    model = TwoViewModel("homography", H)
    np.testing.assert_allclose(gt_errors(gt, model), [0.0, 0.0, 4.0])
    np.testing.assert_allclose(recall_curve(gt, model, [1.0, 5.0]), [2 / 3, 1.0])
    with pytest.raises(InsufficientData):
        nothing = np.zeros((0, 2))
        recall_curve(GtCorrespondenceSet(nothing, nothing), model, [1])
    with pytest.raises(ValueError):
        GtCorrespondenceSet(u, v[:2])
    hard = GtCorrespondenceSet(u, v, category="hard")
    curves, cats = summarize_recall([gt, hard, hard], [model, model, None], [1.0, 5.0])
    assert len(curves) == 3
    np.testing.assert_array_equal(curves[2], [0.0, 0.0])
    np.testing.assert_allclose(cats["easy"], [2 / 3, 1.0])
    np.testing.assert_allclose(cats["hard"], [1 / 3, 0.5])


def test_maa():
    assert maa([0.5, 5.0, np.inf]) == pytest.approx(16 / 30)
    assert maa([0.0]) == 1.0
    assert maa([np.nan, np.inf]) == 0.0
    # Thresholds are inclusive
    assert maa([1.0], max_thr=2.0) == 1.0
    assert maa([3.0], max_thr=4.0, step=2.0) == 0.5
    with pytest.raises(InsufficientData):
        maa([])
    with pytest.raises(ValueError):
        maa([1.0], max_thr=10.0, step=3.0)


def test_pose_error():
    R = random_rotation(np.random.default_rng(0))
    t = np.array([1.0, 0.2, -0.3])
    assert pose_error(R, t, R, 3 * t) == pytest.approx(0.0, abs=1e-5)
    assert pose_error(R, t, R, -t) == pytest.approx(180.0)
    assert pose_error(rot_z(10.0), t, np.eye(3), t) == pytest.approx(10.0)
    assert rotation_angle(rot_z(-30.0)) == pytest.approx(30.0)
    with pytest.raises(DegenerateConfiguration):
        pose_error(R, np.zeros(3), R, t)


def test_pose_from_fundamental():
    for seed in range(5):
        scene = two_camera_scene(40, seed=seed)
        E = skew(scene.t) @ scene.R
        F = np.linalg.inv(scene.K2).T @ E @ np.linalg.inv(scene.K1)
        R, t = pose_from_fundamental(F, scene.K1, scene.K2, scene.u, scene.v)
        assert np.linalg.norm(t) == pytest.approx(1.0)
        assert np.linalg.det(R) == pytest.approx(1.0)
        assert pose_error(R, t, scene.R, scene.t) < 1e-3


def test_pose_from_fundamental_errors():
    scene = two_camera_scene(10)
    with pytest.raises(DegenerateConfiguration):
        pose_from_fundamental(np.eye(3), scene.K1, scene.K2, scene.u, scene.v)
    F = skew(scene.t) @ scene.R
    with pytest.raises(InsufficientData):
        pose_from_fundamental(F, scene.K1, scene.K2, np.zeros((0, 2)), np.zeros((0, 2)))


@pytest.mark.parametrize("phi", [5.0, 30.0, -60.0])
def test_turntable(phi):
    cam = CameraIntrinsics(f=35.0, FR_x=36.0, FR_y=24.0, m=640, n=480)
    K = cam.matrix()
    r = 4.0
    a = np.radians(phi)
    c, s = np.cos(a), np.sin(a)
    R = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    t = r * np.array([s, 0.0, 1.0 - c])
    rng = np.random.default_rng(1)
    # An object around the turntable axis, in front of both cameras
    X = np.array([0.0, 0.0, r]) + rng.uniform(-0.5, 0.5, size=(30, 3))
    u = project(K, np.eye(3), np.zeros(3), X)
    v = project(K, R, t, X)
    F = turntable_gt_F(cam, phi, r)
    assert np.linalg.norm(F) == pytest.approx(1.0)
    assert np.max(model_distance(("fundamental", F), u, v)) < 1e-6
    # The fundamental matrix does not depend on the object distance
    np.testing.assert_allclose(turntable_gt_F(cam, phi, 1.0), F, atol=1e-9)
    # The camera centre stays at distance r from the axis
    centre = -R.T @ t
    assert np.linalg.norm(centre - [0.0, 0.0, r]) == pytest.approx(r)
    with pytest.raises(DegenerateConfiguration):
        turntable_gt_F(cam, 0.0)


def test_covisibility():
    k1 = np.array([[0.0, 0.0], [50.0, 40.0], [10.0, 10.0]])
    k2 = np.array([[0.0, 0.0], [100.0, 50.0]])
    assert covisibility(k1, k2, (100, 100), (100, 100)) == pytest.approx(0.2)
    assert covisibility(k1, k2, (100, 100), (200, 200)) == pytest.approx(0.125)
    assert covisibility(k1, np.zeros((0, 2)), (100, 100), (100, 100)) == 0.0
    assert covisibility(k2, k2, (10, 10), (10, 10)) == 1.0


def test_repeatability():
    pts1 = np.array([[10.0, 10.0], [20.0, 20.0], [30.0, 30.0], [500.0, 500.0]])
    H = normalize_model(similarity(0.0, 1.0, 5.0, 0.0))
    pts2 = np.array([[15.5, 10.0], [25.0, 21.0], [90.0, 90.0]])
    rep = repeatability_and_ms(pts1, pts2, H, (100, 100), matches=[(0, 0), (2, 2)])
    # Three of four points project inside; two have a partner within 3 pixels
    assert rep.correspondences == 2
    assert rep.repeatability == pytest.approx(2 / 3)
    assert rep.correct_matches == 1
    assert rep.matching_score == pytest.approx(1 / 3)
    # One-to-one pairing
    crowded = np.array([[15.0, 10.0], [15.5, 10.0]])
    rep = repeatability_and_ms(pts1[:1], crowded, H, (100, 100))
    assert rep.correspondences == 1
    assert rep.repeatability == 1.0
    assert repeatability_and_ms(pts1[3:], pts2, H, (100, 100)).repeatability == 0.0
    rep = repeatability_and_ms(pts1, pts2, H, (100, 100), dims1=(20, 20))
    assert rep.correspondences == 1


def depth_map(pts: np.ndarray, z: np.ndarray, shape=(480, 640)) -> np.ndarray:
    depth = np.zeros(shape)
    cols = np.round(pts[:, 0]).astype(int)
    rows = np.round(pts[:, 1]).astype(int)
    inside = (cols >= 0) & (rows >= 0) & (cols < shape[1]) & (rows < shape[0])
    depth[rows[inside], cols[inside]] = z[inside]
    return depth


def alone_in_pixel(pts: np.ndarray) -> np.ndarray:
    # Indices of points sharing no pixel, so depth lookups are exact
    keys = np.round(pts).astype(int) @ [1, 1000]
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    return np.sort(first[counts == 1])


def test_depth_reprojection():
    scene = two_camera_scene(40, seed=3)
    keep = alone_in_pixel(scene.u)
    u, v, X = scene.u[keep], scene.v[keep], scene.X[keep]
    to2 = DepthReprojection(depth_map(u, X[:, 2]), scene.K1, scene.K2, scene.R, scene.t)
    np.testing.assert_allclose(to2(u), v, atol=1e-6)
    # No depth, outside the map, or no point at all
    assert np.isinf(to2([[0.4, 0.4], [-5.0, 10.0], [np.nan, 1.0]])).all()
    z2 = (X @ scene.R.T + scene.t)[:, 2]
    to1 = to2.inverse(depth_map(v, z2))
    inside2 = (v >= 0).all(axis=1) & (v[:, 0] <= 639) & (v[:, 1] <= 479)
    inside2[np.setdiff1d(np.arange(len(v)), alone_in_pixel(v))] = False
    assert inside2.sum() > 0
    np.testing.assert_allclose(to1(v[inside2]), u[inside2], atol=1e-6)
    with pytest.raises(ValueError):
        DepthReprojection(np.zeros(5), scene.K1, scene.K2, scene.R, scene.t)


def test_repeatability_with_depth():
    scene = two_camera_scene(30, seed=5)
    keep = alone_in_pixel(scene.u)
    u, v, X = scene.u[keep], scene.v[keep], scene.X[keep]
    to2 = DepthReprojection(depth_map(u, X[:, 2]), scene.K1, scene.K2, scene.R, scene.t)
    inside2 = (v >= 0).all(axis=1) & (v[:, 0] <= 639) & (v[:, 1] <= 479)
    rep = repeatability_and_ms(u, v, to2, (640, 480), pixel_thr=1.0)
    assert rep.correspondences == inside2.sum()
    assert rep.repeatability == 1.0
    # Shuffled keypoints in image 2 still pair up one-to-one
    order = np.random.default_rng(0).permutation(len(v))
    matches = [(int(i), int(j)) for j, i in enumerate(order)]
    rep = repeatability_and_ms(u, v[order], to2, (640, 480), matches=matches)
    assert rep.repeatability == 1.0
    assert rep.matching_score == 1.0
    with pytest.raises(ValueError):
        repeatability_and_ms(u, v, to2, (640, 480), dims1=(640, 480))
    with pytest.raises(ValueError):
        repeatability_and_ms(u, v, np.eye(2), (640, 480))


def test_pair_verdicts():
    H = TwoViewModel("homography", np.eye(3))
    u = np.arange(24, dtype=float).reshape(12, 2)
    v = u.copy()
    v[:2] += (10.0, 0.0)
    verdict = pair_verdicts(u, v, H)
    assert verdict.correct == 10
    assert verdict.solved
    assert verdict.median_error == 0.0
    assert verdict.median_ok
    v[:8] += (0.0, 20.0)
    verdict = pair_verdicts(u, v, GtCorrespondenceSet(u, v, H))
    assert verdict.correct == 4
    assert not verdict.solved
    assert not verdict.median_ok
    empty = pair_verdicts(np.zeros((0, 2)), np.zeros((0, 2)), H)
    assert empty.correct == 0
    assert empty.median_error == np.inf
    with pytest.raises(InsufficientData):
        pair_verdicts(u, v, GtCorrespondenceSet(u, v))
