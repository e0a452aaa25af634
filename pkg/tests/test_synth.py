"""Test affine view synthesis and the step ladder."""

import numpy as np
import pytest
from scipy import ndimage

from wxbs.core import FeatureSet, Image, LocalAffineFrame
from wxbs.exceptions import DegenerateConfiguration, ImageTooSmall
from wxbs.synth import (
    LADDERS,
    StepConfig,
    SynthViewSpec,
    backproject_features,
    backproject_lafs,
    default_steps,
    gen_views,
    parse_ladder,
    select_steps,
    synth_view,
    tilt_phis,
)
from wxbs.utils import apply_homography
from tests.data import smooth_texture


def test_view_spec():
    with pytest.raises(ValueError):
        SynthViewSpec(S=1.5)
    with pytest.raises(ValueError):
        SynthViewSpec(t=0.5)
    with pytest.raises(ValueError):
        SynthViewSpec(phi=180.0)
    assert SynthViewSpec().is_identity
    spec = SynthViewSpec(0.5, 2.0, 90.0)
    np.testing.assert_allclose(spec.linear, [[0.0, -0.25], [0.5, 0.0]], atol=1e-12)


def test_step_config():
    with pytest.raises(ValueError):
        StepConfig(tilts=(2.0, 4.0))
    StepConfig(tilts=(2.0, 4.0), tilt_only=True)
    with pytest.raises(ValueError):
        StepConfig(detector="harris")  # type: ignore[arg-type]
    with pytest.raises(ValueError):
        StepConfig(scales=())
    with pytest.raises(ValueError):
        StepConfig(delta_phi_base=0)
    assert StepConfig(tilts=[1, 2]).tilts == (1.0, 2.0)
    assert StepConfig(detector="dog", descriptor="halfsift").pool == "dog/halfsift"


def test_identity_view():
    img = smooth_texture((40, 50))
    view, A = synth_view(img, SynthViewSpec())
    assert view is img
    np.testing.assert_array_equal(A, np.eye(3))


def test_tilt_phis():
    assert tilt_phis(1.0, 72.0) == [0.0]
    assert tilt_phis(2.0, 72.0) == pytest.approx([0.0, 36.0, 72.0, 108.0, 144.0])
    assert tilt_phis(4.0, 360.0) == pytest.approx([0.0, 90.0])
    # 180 itself is excluded
    assert tilt_phis(2.0, 120.0) == pytest.approx([0.0, 60.0, 120.0])


def test_gen_views():
    step2 = default_steps()[1]
    views = gen_views(step2)
    assert len(views) == 1 + 3 + 5
    assert views[0].is_identity
    assert [(v.t, v.phi) for v in views[1:4]] == pytest.approx(
        [(5.0, 0.0), (5.0, 72.0), (5.0, 144.0)]
    )
    assert len(gen_views(default_steps()[2])) == 3
    # Duplicate scales and tilts give each view once
    assert len(gen_views(StepConfig(scales=(1, 1), tilts=(1, 1)))) == 1


def test_gen_views_enumeration():
    hard = StepConfig(5, "hessaff", tilts=(1, 2, 4, 6, 8), delta_phi_base=60)
    # 180 degrees in steps of 60 / t: 1 + 6 + 12 + 18 + 24
    views = gen_views(hard)
    assert len(views) == 61
    assert sum(1 for v in views if v.t == 8.0) == 24
    assert max(v.phi for v in views) == pytest.approx(172.5)
    # Tilt 10 adds 30 more
    assert len(gen_views(default_steps()[6])) == 91


@pytest.mark.parametrize(
    "spec",
    [
        SynthViewSpec(1.0, 1.0, 30.0),
        SynthViewSpec(0.5, 1.0, 0.0),
        SynthViewSpec(1.0, 2.0, 45.0),
    ],
)
def test_view_geometry(spec):
    img = smooth_texture((64, 80), seed=1, sigma=4.0)
    view, A = synth_view(img, spec)
    height, width = view.data.shape
    corners = np.array([[0, 0], [79, 0], [0, 63], [79, 63]], dtype=float)
    mapped = apply_homography(A, corners)
    assert (mapped >= -1e-6).all()
    assert (mapped[:, 0] <= width).all()
    assert (mapped[:, 1] <= height).all()
    np.testing.assert_allclose(A[:2, :2], spec.linear)
    if spec.S == 1 and spec.t == 1:
        # Pure rotation: view(A p) = img(p) away from the border
        rng = np.random.default_rng(2)
        p = rng.uniform(16, 48, size=(50, 2))
        q = apply_homography(A, p)
        got = ndimage.map_coordinates(view.data, [q[:, 1], q[:, 0]], order=1)
        want = ndimage.map_coordinates(img.data, [p[:, 1], p[:, 0]], order=1)
        np.testing.assert_allclose(got, want, atol=0.02)


def test_tilt_halves_width():
    img = smooth_texture((64, 80), seed=3)
    view, A = synth_view(img, SynthViewSpec(1.0, 2.0, 0.0))
    height, width = view.data.shape
    assert height == 64
    assert abs(width - 40) <= 1
    np.testing.assert_allclose(A, np.diag([0.5, 1.0, 1.0]))


def test_tilt_antialiasing():
    # Vertical grating at 0.4 cycles/px, far above the Nyquist limit of a
    # view shrunk 4 times horizontally
    x = np.arange(256)
    grating = Image(np.tile(0.5 + 0.4 * np.cos(2 * np.pi * 0.4 * x), (32, 1)))
    view, _ = synth_view(grating, SynthViewSpec(t=4.0))
    naive = grating.data[:, ::4]
    # Away from the replicated border all remaining variation is aliasing
    aliased = view.data[:, 4:-4].var()
    naive_aliased = naive[:, 4:-4].var()
    assert naive_aliased > 0.01
    assert aliased * 10 <= naive_aliased


def test_view_too_small():
    img = Image(np.zeros((20, 20)))
    with pytest.raises(ImageTooSmall):
        synth_view(img, SynthViewSpec(S=0.5))
    with pytest.raises(ImageTooSmall):
        synth_view(img, SynthViewSpec(t=2.0))


def test_backproject():
    spec = SynthViewSpec(0.5, 2.0, 30.0)
    A = spec.A_view(100, 80)
    laf = LocalAffineFrame(20.0, 30.0, [[2.0, 0.0], [0.5, 1.5]], 0.7, 0, "dog")
    mapped = apply_homography(A, [[laf.x, laf.y]])[0]
    in_view = LocalAffineFrame(mapped[0], mapped[1], A[:2, :2] @ laf.A, 0.7, 0, "dog")
    (back,) = backproject_lafs([in_view], A, view_id=4)
    assert back.x == pytest.approx(20.0)
    assert back.y == pytest.approx(30.0)
    np.testing.assert_allclose(back.A, laf.A, atol=1e-12)
    assert back.view_id == 4
    assert back.detector == "dog"
    fs = backproject_features(FeatureSet.from_lafs([in_view], np.ones((1, 3))), A, 4)
    np.testing.assert_allclose(fs.centers, [[20.0, 30.0]])
    np.testing.assert_allclose(fs.A[0], laf.A, atol=1e-12)
    assert fs.view_id.tolist() == [4]
    with pytest.raises(DegenerateConfiguration):
        backproject_lafs([laf], np.diag([1.0, 0.0, 1.0]))


def test_default_steps():
    steps = default_steps()
    assert [s.step_id for s in steps] == list(range(1, 8))
    for s in steps:
        assert 1.0 in s.tilts
    assert steps[0].tilts == (1.0,)
    assert steps[6].delta_phi_base == 60


def test_ladders():
    assert parse_ladder("1-7") == [1, 2, 3, 4, 5, 6, 7]
    assert parse_ladder("2,4,7") == [2, 4, 7]
    assert parse_ladder("5,1-7") == [5, 1, 2, 3, 4, 6, 7]
    for ladder in LADDERS:
        assert select_steps(default_steps(), ladder)
    for bad in ("", "1,,2", "a", "3-1", "1-b"):
        with pytest.raises(ValueError):
            parse_ladder(bad)
    with pytest.raises(ValueError):
        select_steps(default_steps(), "8")
    assert [s.step_id for s in select_steps(default_steps(), "3-7")] == [3, 4, 5, 6, 7]
    assert len(select_steps(default_steps())) == 7
