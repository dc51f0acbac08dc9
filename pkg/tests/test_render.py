import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endodepth.errors import DomainError
from endodepth.photomodel import (
    GRAY,
    Lambertian,
    PhotometricModel,
    SpecularLobe,
    canonical_intensity,
    predict_intensity,
)
from endodepth.render import (
    CalibrationPattern,
    CurvedSheet,
    Pose,
    RotatedPlane,
    Scene,
    StepPlanes,
    Tube,
    auto_gain,
    make_trajectory,
    ray_cast,
    render,
    render_calibration_sequence,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def cone_rays(alpha, phi):
    return np.stack([np.sin(alpha) * np.cos(phi), np.sin(alpha) * np.sin(phi), np.cos(alpha)], -1)


# -- ray casting -----------------------------------------------------------

def test_frontal_plane_on_axis():
    d, n, valid = ray_cast(Scene(RotatedPlane(0.05)), np.array([[0.0, 0.0, 1.0]]))
    assert valid[0]
    assert d[0] == pytest.approx(0.05, abs=1e-15)
    np.testing.assert_allclose(n[0], [0.0, 0.0, -1.0], atol=1e-15)


def test_tilted_plane_matches_closed_form(rng):
    tilt = np.radians(30.0)
    plane = RotatedPlane(0.05, 0.0, tilt)
    rays = unit(np.column_stack([rng.uniform(-0.4, 0.4, (50, 2)), np.ones(50)]))
    d, n, valid = ray_cast(Scene(plane), rays)
    # Plane through (0, 0, 0.05) with normal (-sin t, 0, -cos t) after rotation about y:
    # n . x = n . p0  ->  d = (n . p0) / (n . r)
    normal = np.array([-np.sin(tilt), 0.0, -np.cos(tilt)])
    expected = (normal @ [0.0, 0.0, 0.05]) / (rays @ normal)
    assert valid.all()
    np.testing.assert_allclose(d, expected, rtol=1e-13)
    np.testing.assert_allclose(n, np.tile(normal, (50, 1)), atol=1e-15)


def test_tube_on_axis_closed_form():
    tube = Tube(radius=0.03, length=1.0, cap_length=0.1)
    alpha = np.radians(np.linspace(5.0, 85.0, 17))
    phi = np.linspace(0.0, 2 * np.pi, 17, endpoint=False)
    d, n, valid = ray_cast(Scene(tube), cone_rays(alpha, phi))
    assert valid.all()
    np.testing.assert_allclose(d, 0.03 / np.sin(alpha), rtol=1e-12)
    # wall normal points radially inward
    inward = -np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    np.testing.assert_allclose(n, inward, atol=1e-10)


SURFACES = [
    RotatedPlane(0.05, np.radians(10.0), np.radians(25.0)),
    CurvedSheet(0.05, 0.01, 0.08),
    Tube(0.025, 0.055, np.radians(5.0), np.radians(8.0), cap_length=0.065),
    Tube(0.025, 0.055, haustra_amplitude=0.2, haustra_period=0.02),
    StepPlanes(0.04, 0.06, 0.1),
]


@pytest.mark.parametrize("surface", SURFACES, ids=lambda s: type(s).__name__)
def test_hits_lie_on_the_surface(surface, rng):
    rays = unit(np.column_stack([rng.uniform(-0.8, 0.8, (300, 2)), np.ones(300)]))
    d, n, valid = ray_cast(Scene(surface), rays)
    assert valid.all()
    pts = rays * d[:, None]
    assert np.abs(surface.implicit(pts)).max() < 1e-10
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)
    assert np.all(np.sum(n * rays, axis=-1) < 0)  # facing the camera


def test_ray_cast_keeps_leading_shape():
    rays = unit(np.ones((4, 5, 3)))
    d, n, valid = ray_cast(Scene(RotatedPlane(0.05)), rays)
    assert d.shape == (4, 5) and n.shape == (4, 5, 3) and valid.shape == (4, 5)


def test_ray_parallel_to_plane_is_invalid():
    d, _, valid = ray_cast(Scene(RotatedPlane(0.05)), np.array([[1.0, 0.0, 0.0]]))
    assert not valid[0] and np.isnan(d[0])


def test_tube_rejects_camera_outside():
    with pytest.raises(DomainError):
        Tube(0.01, offset=(0.02, 0.0))


# -- rendering -------------------------------------------------------------

def _normals_from_points(points):
    """Central-difference normals of a gridded point cloud, oriented toward the camera."""
    du = points[1:-1, 2:] - points[1:-1, :-2]
    dv = points[2:, 1:-1] - points[:-2, 1:-1]
    n = unit(np.cross(du, dv))
    flip = np.sum(n * points[1:-1, 1:-1], axis=-1) > 0
    n[flip] *= -1
    return n


@pytest.mark.parametrize("surface", SURFACES[:3], ids=["plane", "sheet", "tube"])
def test_normals_agree_with_depth_differences(surface, simple_camera, scene_model):
    frame = render(Scene(surface, 0.6), simple_camera, scene_model)
    rays, _ = simple_camera.ray_grid()
    pts = rays * frame.gt_depth_euclidean[..., None]
    fd = _normals_from_points(pts)
    m = frame.mask
    interior = m[1:-1, 1:-1] & m[2:, 1:-1] & m[:-2, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2]
    if isinstance(surface, Tube):
        # The cap closes in an apex where the normal is discontinuous; like a
        # silhouette, differences across it say nothing about the normals.
        apex = np.unravel_index(np.argmax(frame.gt_depth_euclidean), m.shape)
        rows, cols = np.mgrid[1:m.shape[0] - 1, 1:m.shape[1] - 1]
        interior &= np.hypot(rows - apex[0], cols - apex[1]) > 6
    cos = np.clip(np.sum(fd * frame.gt_normals[1:-1, 1:-1], axis=-1), -1, 1)
    angle = np.degrees(np.arccos(cos))[interior]
    assert interior.sum() > 1000
    assert angle.max() < 0.5


def test_frame_fields_consistent(simple_camera, scene_model):
    frame = render(Scene(SURFACES[0], 0.6), simple_camera, scene_model)
    rays, _ = simple_camera.ray_grid()
    m = frame.mask
    np.testing.assert_allclose(frame.gt_depth_z[m], frame.gt_depth_euclidean[m] * rays[..., 2][m])
    assert np.all(frame.image[~m] == 0) and np.all(frame.gt_depth_euclidean[~m] == 0)
    assert frame.shape == simple_camera.shape


def test_noiseless_render_reproduced_by_model(simple_camera, scene_model):
    frame = render(Scene(SURFACES[2], 0.6), simple_camera, scene_model)
    rays, _ = simple_camera.ray_grid()
    m = frame.mask
    pts = rays[m] * frame.gt_depth_euclidean[m][:, None]
    again = predict_intensity(pts, frame.gt_normals[m], frame.model)
    assert np.array_equal(again, frame.clean_image[m])


def test_frontal_plane_canonical_intensity(simple_camera):
    model = PhotometricModel(2.5, 2.2, (0.01,))
    frame = render(Scene(RotatedPlane(0.05), 0.6), simple_camera, model)
    rays, _ = simple_camera.ray_grid()
    m = frame.mask
    d = frame.gt_depth_euclidean[m]
    cos_theta = rays[..., 2][m]  # frontal plane: incidence angle equals off-axis angle
    canon = canonical_intensity(frame.image[m], rays[m], frame.model)
    np.testing.assert_allclose(canon * d**2, cos_theta, rtol=1e-10)
    # on the optical axis the canonical intensity is exactly 1/d^2
    centre = np.argmin(np.hypot(*(rays[m][:, :2]).T))
    assert canon[centre] * d[centre] ** 2 == pytest.approx(cos_theta[centre], rel=1e-12)


def test_tube_darkest_pixel_is_deepest(simple_camera, scene_model):
    frame = render(Scene(SURFACES[2], 0.6), simple_camera, scene_model)
    m = frame.mask
    img = np.where(m, frame.image, np.inf)
    depth = np.where(m, frame.gt_depth_euclidean, -np.inf)
    darkest = np.unravel_index(np.argmin(img), img.shape)
    deepest = np.unravel_index(np.argmax(depth), depth.shape)
    assert np.hypot(darkest[0] - deepest[0], darkest[1] - deepest[1]) <= 1.5


def test_noise_std_matches_sigma(simple_camera):
    model = PhotometricModel(2.5, 2.2, (0.01,))
    scene = Scene(RotatedPlane(0.05), 0.6)
    sigma = 3.0
    frame = render(scene, simple_camera, model, noise_sigma=sigma, seed=4)
    m = frame.mask & (frame.clean_image > 0.1) & (frame.clean_image < 0.9)
    resid = (frame.image - frame.clean_image)[m] * GRAY
    assert m.sum() > 10000
    assert abs(resid.std() - sigma) < 0.05 * sigma


def test_render_is_reproducible(simple_camera, scene_model):
    scene = Scene(SURFACES[1], 0.6)
    a = render(scene, simple_camera, scene_model, noise_sigma=2.0, seed=9)
    b = render(scene, simple_camera, scene_model, noise_sigma=2.0, seed=9)
    c = render(scene, simple_camera, scene_model, noise_sigma=2.0, seed=10)
    assert np.array_equal(a.image, b.image)
    assert not np.array_equal(a.image, c.image)


def test_render_clamps_to_unit_range(simple_camera):
    bright = PhotometricModel(2.5, 2.2, (10.0,))
    frame = render(Scene(RotatedPlane(0.05), 0.6), simple_camera, bright, noise_sigma=5.0)
    assert frame.image.min() >= 0.0 and frame.image.max() <= 1.0


# -- calibration sequences -------------------------------------------------

def test_pattern_points_count_and_extent():
    pattern = CalibrationPattern(n_points=500)
    pts = pattern.sample_points()
    assert pts.shape == (500, 3)
    assert np.all(np.abs(pts[:, 0]) <= pattern.width / 2 - pattern.margin)
    assert np.all(np.abs(pts[:, 1]) <= pattern.height / 2 - pattern.margin)
    assert np.all(pts[:, 2] == 0)


def test_frontal_pose_equals_model_prediction(reference_camera):
    pose = Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, 0.05]))
    model = PhotometricModel(2.5, 2.2, (1.0,), sigma_o=1e-3)
    pattern = CalibrationPattern(n_points=100)
    obs = render_calibration_sequence(pattern, [pose], model, reference_camera)
    assert len(obs) == 100
    np.testing.assert_allclose(obs.normals, np.tile([0.0, 0.0, -1.0], (100, 1)), atol=1e-15)
    expected = predict_intensity(obs.points, obs.normals, model) * GRAY
    np.testing.assert_allclose(obs.intensity, np.clip(expected, 0, GRAY), rtol=1e-14)


def test_gain_decreases_as_camera_approaches():
    _, distances = make_trajectory(30)
    gains = auto_gain(distances, 1.0, 3.0)
    assert gains[0] == pytest.approx(1.0) and gains[-1] == pytest.approx(3.0)
    closer = np.argsort(distances)
    assert np.all(np.diff(gains[closer]) > 0)


def test_specular_lobe_brightens_near_perpendicular_views(reference_camera):
    poses, distances = make_trajectory(10)
    gains = tuple(auto_gain(distances))
    model = PhotometricModel(2.5, 2.2, gains, sigma_o=1e-3)
    lambertian = render_calibration_sequence(CalibrationPattern(brdf=Lambertian(1.0)),
                                             poses, model, reference_camera)
    glossy = render_calibration_sequence(
        CalibrationPattern(brdf=SpecularLobe(1.0, 0.15, np.radians(15.0))),
        poses, model, reference_camera)
    view = -unit(lambertian.points)
    theta = np.degrees(np.arccos(np.sum(view * lambertian.normals, axis=-1)))
    near = theta < 10
    assert near.sum() > 50
    unsaturated = glossy.intensity < GRAY
    assert np.all(glossy.intensity[near & unsaturated] > lambertian.intensity[near & unsaturated])


def test_out_of_view_frame_is_dropped(reference_camera):
    visible = Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, 0.05]))
    behind = Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, -0.05]))
    model = PhotometricModel(2.5, 2.2, (1.0, 1.0), sigma_o=1e-3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        obs = render_calibration_sequence(CalibrationPattern(n_points=20), [visible, behind],
                                          model, reference_camera)
    assert list(obs.frames) == [0]
    assert any("frame 1" in str(w.message) for w in caught)


def test_pattern_never_visible_is_an_error(reference_camera):
    behind = Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, -0.05]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DomainError):
            render_calibration_sequence(CalibrationPattern(n_points=20), [behind],
                                        PhotometricModel(), reference_camera)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.1), st.floats(-40.0, 40.0), st.floats(-40.0, 40.0))
def test_plane_hits_satisfy_equation(distance, tx, ty):
    plane = RotatedPlane(distance, np.radians(tx), np.radians(ty))
    rays = unit(np.array([[0.0, 0.0, 1.0], [0.1, 0.05, 1.0], [-0.2, 0.1, 1.0]]))
    d, _, valid = ray_cast(Scene(plane), rays)
    assert valid.all()
    assert np.abs(plane.implicit(rays * d[:, None])).max() < 1e-12
