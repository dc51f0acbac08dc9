import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endodepth.errors import DomainError
from endodepth.photomodel import (
    KNOT_ANGLES,
    BrdfTable,
    Lambertian,
    PhotometricModel,
    SpecularLobe,
    canonical_intensity,
    predict_intensity,
    radiance,
    spread,
)

# Term-by-term evaluation with 40-digit arithmetic: point 30 degrees off axis
# at 5 cm, normal tilted 20 degrees from the view ray, k = 2.5, k_d = 0.6,
# gamma = 2.2, g = 1.5.
OFF_AXIS_ORACLE = 7.123794361382637916272819458928124457744
HALF_POW_2_5 = 0.1767766952966368811002110905262122598212

unit = PhotometricModel(k=2.5, gamma=1.0, gains=(1.0,), brdf=Lambertian(np.pi))


def _rotate_about_y(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]])


def test_spread_is_one_on_axis():
    assert spread(0.0, 7.3) == 1.0


def test_spread_at_sixty_degrees():
    assert spread(np.radians(60), 2.5) == pytest.approx(HALF_POW_2_5, rel=1e-14)


def test_spread_wider_than_natural_vignetting():
    alpha = np.radians(np.linspace(0.01, 89, 2000))
    assert np.all(spread(alpha, 2.5) > np.cos(alpha) ** 4)


@pytest.mark.parametrize("alpha", [np.pi / 2, 2.0, -0.1])
def test_spread_domain(alpha):
    with pytest.raises(DomainError):
        spread(alpha, 2.5)


def test_unity_on_axis():
    assert predict_intensity(np.array([0, 0, 1.0]), np.array([0, 0, -1.0]), unit) == pytest.approx(1.0)


def test_inverse_square():
    assert predict_intensity(np.array([0, 0, 2.0]), np.array([0, 0, -1.0]), unit) == pytest.approx(0.25)


def test_off_axis_value_matches_high_precision_oracle():
    model = PhotometricModel(2.5, 2.2, (1.5,), Lambertian(0.6))
    direction = np.array([np.sin(np.radians(30)), 0.0, np.cos(np.radians(30))])
    x = 0.05 * direction
    n = _rotate_about_y(-direction, np.radians(20))
    assert predict_intensity(x, n, model) == pytest.approx(OFF_AXIS_ORACLE, rel=1e-13)


def test_back_facing_is_dark():
    assert predict_intensity(np.array([0, 0, 1.0]), np.array([0, 0, 1.0]), unit) == 0.0


def test_too_close_is_a_domain_error():
    with pytest.raises(DomainError):
        predict_intensity(np.array([0, 0, 1e-5]), np.array([0, 0, -1.0]), unit)


def test_frontal_canonical_intensity_is_inverse_square():
    model = PhotometricModel(2.5, 2.2, (0.3,), Lambertian(0.6))
    d = 0.042
    intensity = predict_intensity(np.array([0, 0, d]), np.array([0, 0, -1.0]), model)
    assert canonical_intensity(intensity, np.array([0, 0, 1.0]), model) == pytest.approx(1 / d**2, rel=1e-12)


def test_canonical_of_zero_is_zero():
    assert canonical_intensity(0.0, np.array([0.1, 0, 1.0]), unit) == 0.0


def test_canonical_needs_nonzero_gain_and_brdf():
    with pytest.raises(DomainError):
        canonical_intensity(0.5, np.array([0, 0, 1.0]), unit.with_brdf(BrdfTable((0.0,) * 15)))


@settings(max_examples=200, deadline=None)
@given(
    k=st.floats(0, 6), gamma=st.floats(0.5, 3.0), gain=st.floats(0.01, 10), albedo=st.floats(0.05, 1),
    alpha=st.floats(0, 1.2), phi=st.floats(-np.pi, np.pi), dist=st.floats(0.005, 0.3), tilt=st.floats(0, 1.4),
)
def test_forward_then_canonical_round_trip(k, gamma, gain, albedo, alpha, phi, dist, tilt):
    model = PhotometricModel(k, gamma, (gain,), Lambertian(albedo))
    ray = np.array([np.sin(alpha) * np.cos(phi), np.sin(alpha) * np.sin(phi), np.cos(alpha)])
    n = _rotate_about_y(-ray, tilt)
    n /= np.linalg.norm(n)
    intensity = predict_intensity(dist * ray, n, model)
    cos_theta = float(np.dot(-ray, n))
    assert canonical_intensity(intensity, ray, model) == pytest.approx(cos_theta / dist**2, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(gamma=st.floats(0.3, 4.0), dist=st.floats(0.01, 0.2))
def test_gamma_round_trip(gamma, dist):
    model = PhotometricModel(2.5, gamma, (0.7,), Lambertian(0.6))
    x, n = np.array([0.01, 0.0, dist]), np.array([0.0, 0.0, -1.0])
    linear = radiance(x, n, model)
    assert predict_intensity(x, n, model) ** gamma == pytest.approx(linear, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(1e-3, 1e3))
def test_sigma_gain_gauge_is_exact(c):
    gains = (0.5, 1.5, 3.0)
    a = PhotometricModel(2.5, 2.2, gains, Lambertian(0.6), sigma_o=1.0)
    b = PhotometricModel(2.5, 2.2, tuple(g / c for g in gains), Lambertian(0.6), sigma_o=c)
    x, n = np.array([0.01, -0.02, 0.05]), np.array([0.0, 0.3, -1.0]) / np.hypot(0.3, 1.0)
    for t in range(3):
        assert predict_intensity(x, n, b, t) == pytest.approx(predict_intensity(x, n, a, t), rel=1e-14)


def test_intensity_strictly_decreases_with_distance():
    model = PhotometricModel(2.5, 2.2, (1.0,), Lambertian(0.6))
    ray = np.array([0.2, 0.1, 1.0]) / np.linalg.norm([0.2, 0.1, 1.0])
    n = -ray
    values = [predict_intensity(d * ray, n, model) for d in np.linspace(0.01, 0.5, 200)]
    assert np.all(np.diff(values) < 0)


def test_constant_table_matches_lambertian():
    theta = np.linspace(0, np.pi / 2, 1001)
    np.testing.assert_allclose(BrdfTable.constant(1 / np.pi)(theta), Lambertian(1.0)(theta), rtol=1e-12)


def test_table_returns_knots_exactly():
    knots = tuple(np.linspace(0.5, 0.1, 15))
    assert tuple(BrdfTable(knots)(KNOT_ANGLES)) == knots


def test_table_validation():
    with pytest.raises(DomainError):
        BrdfTable((0.1,) * 14)
    with pytest.raises(DomainError):
        BrdfTable((0.1,) * 14 + (-0.1,))


def test_brdf_derivatives_match_finite_differences():
    theta = np.linspace(0.05, 1.5, 40) + 0.003
    h = 1e-7
    for brdf in (Lambertian(0.6), SpecularLobe(1.0, 0.3, np.radians(20)),
                 BrdfTable(tuple(np.linspace(0.4, 0.2, 15)))):
        fd = (brdf(theta + h) - brdf(theta - h)) / (2 * h)
        np.testing.assert_allclose(brdf.derivative(theta), fd, atol=1e-6)


@pytest.mark.parametrize("kwargs", [dict(k=-1), dict(gamma=0), dict(gains=(1.0, 0.0)), dict(sigma_o=0)])
def test_model_validation(kwargs):
    with pytest.raises(DomainError):
        PhotometricModel(**kwargs)


def test_missing_frame_gain():
    with pytest.raises(DomainError):
        PhotometricModel(gains=(1.0,)).gain(3)
