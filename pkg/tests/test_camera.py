import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endodepth.camera import (
    CameraIntrinsics,
    PinholeIntrinsics,
    distort_angle,
    largest_valid_rectangle,
    project,
    undistort_angle,
    undistort_image,
    unproject,
)
from endodepth.errors import DomainError, NumericalError

# Distorted angle at theta = pi/6 for the reference coefficients, evaluated
# with 40-digit arithmetic.
THETA_D_30DEG = 0.5036166525994048771466594475307403042419


def test_on_axis_point_maps_to_principal_point(reference_camera):
    u, v = project(np.array([0.0, 0.0, 1.0]), reference_camera)
    assert (u, v) == (reference_camera.cx, reference_camera.cy)


def test_principal_point_unprojects_to_optical_axis(reference_camera):
    ray = unproject(np.array([reference_camera.cx, reference_camera.cy]), reference_camera)
    np.testing.assert_allclose(ray, [0.0, 0.0, 1.0], atol=1e-15)


def test_thirty_degree_point_radius_matches_high_precision_oracle(reference_camera):
    theta = np.pi / 6
    point = np.array([np.sin(theta), 0.0, np.cos(theta)])
    u, _ = project(point, reference_camera)
    assert u - reference_camera.cx == pytest.approx(reference_camera.fx * THETA_D_30DEG, rel=1e-12)
    assert distort_angle(theta, reference_camera.k) == pytest.approx(THETA_D_30DEG, rel=1e-14)


def test_grid_round_trip_rmse(reference_camera):
    th = np.linspace(0.01, 1.2, 20)
    ph = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    T, P = np.meshgrid(th, ph)
    rays = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    pix = project(rays, reference_camera)
    back = project(unproject(pix, reference_camera), reference_camera)
    assert np.sqrt(np.mean(np.sum((back - pix) ** 2, axis=-1))) < 1e-6


def test_random_pixel_round_trip(reference_camera, rng):
    pix = rng.uniform([0, 0], [reference_camera.width - 1, reference_camera.height - 1], (4000, 2))
    pix = pix[reference_camera.in_view(pix)][:1000]
    assert len(pix) == 1000
    back = project(unproject(pix, reference_camera), reference_camera)
    assert np.abs(back - pix).max() < 1e-6


def test_zero_distortion_matches_equidistant_closed_form():
    cam = CameraIntrinsics(300.0, 310.0, 200.0, 150.0, (0, 0, 0, 0), 400, 300)
    pix = np.array([[250.0, 100.0], [10.0, 290.0], [399.0, 0.0]])
    x, y = (pix[:, 0] - 200.0) / 300.0, (pix[:, 1] - 150.0) / 310.0
    theta, phi = np.hypot(x, y), np.arctan2(y, x)
    expected = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)
    np.testing.assert_allclose(unproject(pix, cam), expected, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.3), st.floats(-np.pi, np.pi), st.floats(1e-3, 10.0))
def test_unproject_project_gives_parallel_ray(theta, phi, scale):
    cam = CameraIntrinsics(717.21, 717.48, 735.37, 552.80,
                           (-0.13893, -1.2396e-3, 9.1258e-4, -4.0716e-5), 1440, 1080)
    x = scale * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    ray = unproject(project(x, cam), cam)
    np.testing.assert_allclose(ray, x / np.linalg.norm(x), rtol=1e-8, atol=1e-8)


def test_undistort_angle_inverts_distortion(reference_camera):
    theta = np.linspace(0, reference_camera.max_theta * 0.99, 500)
    back, ok = undistort_angle(distort_angle(theta, reference_camera.k), reference_camera.k)
    assert ok.all()
    np.testing.assert_allclose(back, theta, atol=1e-12)


def test_zero_vector_is_a_domain_error(reference_camera):
    with pytest.raises(DomainError):
        project(np.zeros(3), reference_camera)


def test_point_behind_camera_is_a_domain_error(reference_camera):
    with pytest.raises(DomainError):
        project(np.array([1.0, 0.0, -0.1]), reference_camera)


def test_root_finder_failure_reports_pixel():
    # Strongly non-monotone distortion: no angle reaches far-out pixels.
    cam = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, (-0.5, 0.0, 0.0, 0.0), 2000, 2000)
    with pytest.raises(NumericalError) as err:
        unproject(np.array([[1999.0, 1999.0]]), cam)
    assert err.value.location is not None


@pytest.mark.parametrize("kwargs", [dict(fx=0.0), dict(fy=-1.0), dict(cx=500.0), dict(cy=-1.0)])
def test_invalid_intrinsics_rejected(kwargs):
    base = dict(fx=100.0, fy=100.0, cx=50.0, cy=50.0, k=(0, 0, 0, 0), width=100, height=100)
    with pytest.raises(DomainError):
        CameraIntrinsics(**{**base, **kwargs})


def test_undistort_image_identity_for_pinhole_like_camera():
    cam = CameraIntrinsics(60.0, 60.0, 31.5, 23.5, (0, 0, 0, 0), 64, 48)
    # A tiny field of view makes the equidistant and pinhole models agree to
    # second order; use a linear ramp so bilinear resampling is exact.
    target = PinholeIntrinsics(60.0, 60.0, 31.5, 23.5, 64, 48)
    vv, uu = np.mgrid[0:48, 0:64].astype(float)
    img = 0.001 * uu + 0.002 * vv
    out, valid = undistort_image(img, cam, target)
    x = (uu - 31.5) / 60.0
    y = (vv - 23.5) / 60.0
    r = np.hypot(x, y)
    scale = np.where(r > 0, np.arctan(r) / np.where(r > 0, r, 1), 1.0)
    expected = 0.001 * (x * scale * 60 + 31.5) + 0.002 * (y * scale * 60 + 23.5)
    assert valid.all()
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_undistort_marks_outside_source_invalid(reference_camera):
    # The left-edge ray of this wide pinhole is 88 degrees off axis and lands
    # left of the source image.
    target = PinholeIntrinsics(20.0, 20.0, 735.0, 550.0, 1440, 1080)
    _, valid = undistort_image(np.ones(reference_camera.shape), reference_camera, target)
    assert valid[550, 735] and not valid[550, 0]


def test_largest_valid_rectangle():
    mask = np.zeros((6, 8), dtype=bool)
    mask[1:5, 2:7] = True
    mask[0, 0] = True
    assert largest_valid_rectangle(mask) == (1, 2, 4, 5)
