"""Test affine shape adaptation and orientation assignment."""

import numpy as np
import pytest

from wxbs.core import Image, LocalAffineFrame, Patch
from wxbs.shape import (
    AdaptationStatus,
    BaumbergParams,
    adapt_lafs,
    baumberg_adapt,
    dominant_orientation,
    orient_lafs,
)
from tests.data import blob_image, smooth_texture


def test_params():
    with pytest.raises(ValueError):
        BaumbergParams(max_iter=0)
    with pytest.raises(ValueError):
        BaumbergParams(max_elongation=1.0)


def test_isotropic_blob():
    img = blob_image((64, 64), [(32.0, 32.0)], sigma=4.0)
    res = baumberg_adapt(img, LocalAffineFrame(32.0, 32.0, 4.0 * np.eye(2), 1.0))
    assert res.accepted
    assert res.status is AdaptationStatus.CONVERGED
    assert res.iterations <= 3
    np.testing.assert_allclose(res.shape, np.eye(2), atol=0.05)
    assert np.linalg.det(res.shape) == pytest.approx(1.0, abs=1e-6)
    assert np.linalg.det(res.laf.A) == pytest.approx(16.0)


def test_anisotropic_blob():
    img = blob_image((80, 80), [(40.0, 40.0)], cov=np.diag([6.0**2, 3.0**2]))
    sigma = np.sqrt(18.0)
    res = baumberg_adapt(img, LocalAffineFrame(40.0, 40.0, sigma * np.eye(2), 1.0))
    assert res.accepted
    assert res.shape[0, 1] == 0.0
    assert np.linalg.det(res.shape) == pytest.approx(1.0, abs=1e-6)
    s = np.linalg.svd(res.shape, compute_uv=False)
    assert s[0] / s[1] == pytest.approx(2.0, rel=0.1)
    # The long axis is horizontal
    S = res.shape @ res.shape.T
    assert S[0, 0] > S[1, 1]


def test_affine_covariance():
    # The same blob seen through a shear is adapted to the sheared shape
    W = np.array([[1.0, 0.6], [0.0, 1.0]])
    cov = W @ np.diag([4.0**2, 4.0**2]) @ W.T
    img = blob_image((96, 96), [(48.0, 48.0)], cov=cov)
    sigma = np.sqrt(np.sqrt(np.linalg.det(cov)))
    res = baumberg_adapt(img, LocalAffineFrame(48.0, 48.0, sigma * np.eye(2), 1.0))
    assert res.accepted
    expected = cov / np.sqrt(np.linalg.det(cov))
    got = res.shape @ res.shape.T
    np.testing.assert_allclose(got, expected, atol=0.1 * np.abs(expected).max())


def test_too_elongated():
    img = blob_image((128, 128), [(64.0, 64.0)], cov=np.diag([12.0**2, 1.5**2]))
    sigma = np.sqrt(12.0 * 1.5)
    res = baumberg_adapt(img, LocalAffineFrame(64.0, 64.0, sigma * np.eye(2), 1.0))
    assert not res.accepted
    assert res.status is AdaptationStatus.TOO_ELONGATED
    assert res.laf is None


def test_at_border():
    img = blob_image((64, 64), [(3.0, 32.0)], sigma=4.0)
    res = baumberg_adapt(img, LocalAffineFrame(3.0, 32.0, 4.0 * np.eye(2), 1.0))
    assert res.status is AdaptationStatus.AT_BORDER


def test_not_converged():
    img = smooth_texture((96, 96), seed=1)
    laf = LocalAffineFrame(48.0, 48.0, 5.0 * np.eye(2), 1.0)
    res = baumberg_adapt(img, laf, BaumbergParams(max_iter=1, convergence_eps=1e-9))
    assert res.status is AdaptationStatus.NOT_CONVERGED
    assert res.iterations == 1


def test_adapt_lafs():
    img = blob_image((64, 64), [(32.0, 32.0)], sigma=4.0)
    lafs = [
        LocalAffineFrame(32.0, 32.0, 4.0 * np.eye(2), 1.0, 3, "hessian"),
        LocalAffineFrame(2.0, 2.0, 4.0 * np.eye(2), 1.0, 3, "hessian"),
    ]
    out = adapt_lafs(img, lafs)
    assert len(out) == 1
    assert out[0].view_id == 3
    assert out[0].detector == "hessian"


def ramp(side: int = 19) -> np.ndarray:
    return np.tile(np.arange(side) * 0.01, (side, 1))


def circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


def test_orientation_ramp():
    angles = dominant_orientation(Patch(ramp()))
    assert len(angles) == 1
    assert circular_distance(angles[0], 0.0) <= np.deg2rad(10)
    rotated = dominant_orientation(Patch(np.rot90(ramp())))
    assert len(rotated) == 1
    assert circular_distance(rotated[0], angles[0]) == pytest.approx(
        np.pi / 2, abs=np.deg2rad(10)
    )


def test_orientation_constant():
    assert dominant_orientation(Patch(np.full((19, 19), 0.5))) == [0.0]
    with pytest.raises(ValueError):
        dominant_orientation(Patch(np.zeros((8, 8))))


def test_orientation_properties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        angles = dominant_orientation(Patch(rng.random((19, 19))))
        assert 1 <= len(angles) <= 4
        assert all(0 <= a < 2 * np.pi for a in angles)


def test_orient_lafs():
    img = blob_image((64, 64), [(32.0, 32.0)], sigma=4.0)
    data = img.data.copy()
    # Make the blob lopsided so that it has a dominant direction
    data[:, 32:] += 0.1
    lafs = [LocalAffineFrame(32.0, 32.0, 4.0 * np.eye(2), 1.0)]
    out = orient_lafs(Image(data), lafs)
    assert 1 <= len(out) <= 4
    for f in out:
        assert f.x == 32.0
        assert np.linalg.det(f.A) == pytest.approx(16.0)
    assert orient_lafs(img, []) == []
