"""Simplified endoscope image-formation model.

A single virtual light sits at the optical centre and points along the
camera's forward axis, so light spread and vignetting collapse into one
radial factor ``cos(alpha)**k``, and the BRDF only depends on the incidence
angle ``theta`` between the surface normal and the direction back to the
camera. The predicted (gamma-encoded) intensity of a surface point ``x`` is

    I = (sigma_o * cos(alpha)**k / |x|**2 * f_r(theta) * cos(theta) * g_t) ** (1 / gamma)

Intensities are normalised so that 1.0 corresponds to gray level 255.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError

MIN_DISTANCE = 1e-4  # metres
N_KNOTS = 15
KNOT_ANGLES = np.linspace(0.0, np.pi / 2, N_KNOTS)
GRAY = 255.0


class Brdf:
    """Reflectance as a function of incidence angle only."""

    def __call__(self, theta):
        raise NotImplementedError

    def derivative(self, theta):
        """d f_r / d theta."""
        raise NotImplementedError

    def at_normal(self):
        return float(self(0.0))


@dataclass(frozen=True)
class Lambertian(Brdf):
    albedo: float = 1.0

    def __post_init__(self):
        if not self.albedo > 0:
            raise DomainError("albedo must be positive")

    def __call__(self, theta):
        return np.full(np.shape(theta), self.albedo / np.pi)

    def derivative(self, theta):
        return np.zeros(np.shape(theta))


@dataclass(frozen=True)
class BrdfTable(Brdf):
    """Fifteen reflectance samples on [0, 90] degrees, linearly interpolated."""

    knots: tuple

    def __post_init__(self):
        knots = tuple(float(v) for v in self.knots)
        if len(knots) != N_KNOTS:
            raise DomainError(f"a BRDF table needs {N_KNOTS} knots, got {len(knots)}")
        if min(knots) < 0:
            raise DomainError("BRDF knots must be non-negative")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def constant(cls, value=1.0 / np.pi):
        return cls((value,) * N_KNOTS)

    @classmethod
    def sample(cls, brdf):
        """Table that interpolates ``brdf`` at the knot angles."""
        return cls(tuple(np.maximum(brdf(KNOT_ANGLES), 0.0)))

    def __call__(self, theta):
        return np.interp(theta, KNOT_ANGLES, self.knots)

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        spacing = KNOT_ANGLES[1]
        idx = np.clip((theta / spacing).astype(int), 0, N_KNOTS - 2)
        knots = np.asarray(self.knots)
        return (knots[idx + 1] - knots[idx]) / spacing

    @staticmethod
    def weights(theta):
        """Interpolation weights, shape (..., 15); f_r(theta) = weights @ knots."""
        theta = np.clip(np.asarray(theta, dtype=float), 0.0, np.pi / 2)
        spacing = KNOT_ANGLES[1]
        pos = theta / spacing
        idx = np.clip(np.floor(pos).astype(int), 0, N_KNOTS - 2)
        frac = pos - idx
        w = np.zeros(theta.shape + (N_KNOTS,))
        np.put_along_axis(w, idx[..., None], (1.0 - frac)[..., None], axis=-1)
        np.put_along_axis(w, (idx + 1)[..., None], frac[..., None], axis=-1)
        return w


@dataclass(frozen=True)
class SpecularLobe(Brdf):
    """Lambertian base plus a Gaussian lobe around normal incidence.

    Stand-in for a glossy printed target; used to generate biased calibration data.
    """

    albedo: float = 1.0
    strength: float = 0.15
    width: float = np.radians(15.0)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.albedo / np.pi + self.strength * np.exp(-0.5 * (theta / self.width) ** 2)

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        lobe = self.strength * np.exp(-0.5 * (theta / self.width) ** 2)
        return -lobe * theta / self.width**2


@dataclass(frozen=True)
class PhotometricModel:
    """Calibrated endoscope photometry: spread exponent, gamma, gains, BRDF."""

    k: float = 2.5
    gamma: float = 2.2
    gains: tuple = (1.0,)
    brdf: Brdf = field(default_factory=Lambertian)
    sigma_o: float = 1.0

    def __post_init__(self):
        gains = tuple(float(g) for g in np.atleast_1d(self.gains))
        object.__setattr__(self, "gains", gains)
        if self.k < 0:
            raise DomainError("spread exponent must be non-negative")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if not self.sigma_o > 0:
            raise DomainError("sigma_o must be positive")
        if not gains or min(gains) <= 0:
            raise DomainError("gains must be positive")

    def gain(self, t=0):
        try:
            return self.gains[t]
        except IndexError:
            raise DomainError(f"no gain for frame {t} ({len(self.gains)} frames)") from None

    def with_brdf(self, brdf):
        return replace(self, brdf=brdf)

    def with_gains(self, gains):
        return replace(self, gains=tuple(gains))


def spread(alpha, k):
    """Joint light-spread and vignetting attenuation ``cos(alpha)**k``."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha >= np.pi / 2):
        raise DomainError("off-axis angle must lie in [0, pi/2)")
    return np.cos(alpha) ** k


def _cos_alpha(x):
    return x[..., 2] / np.linalg.norm(x, axis=-1)


def radiance(x, n, model, t=0):
    """Linear (pre-gamma) signal ``sigma_o mu' f_r cos(theta) g_t / |x|^2``.

    Back-facing geometry (cos(theta) < 0) yields 0.
    """
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    dist = np.linalg.norm(x, axis=-1)
    if np.any(dist < MIN_DISTANCE):
        raise DomainError(f"surface point closer than {MIN_DISTANCE} m to the light")
    if np.any(x[..., 2] <= 0):
        raise DomainError("surface point must lie in front of the camera")
    cos_alpha = x[..., 2] / dist
    view = -x / dist[..., None]
    cos_theta = np.clip(np.sum(view * n, axis=-1), -1.0, 1.0)
    theta = np.arccos(np.clip(cos_theta, 0.0, 1.0))
    shading = model.brdf(theta) * np.maximum(cos_theta, 0.0)
    return model.sigma_o * cos_alpha**model.k / dist**2 * shading * model.gain(t)


def predict_intensity(x, n, model, t=0):
    """Predicted normalised intensity of surface point ``x`` with normal ``n``.

    Not clamped: a poorly scaled model can exceed 1.
    """
    return radiance(x, n, model, t) ** (1.0 / model.gamma)


def canonical_intensity(intensity, ray, model, t=0):
    """Observed intensity with spread, BRDF at normal incidence, gain and gamma removed.

    For the true surface this equals ``cos(theta) / d**2``.
    """
    intensity = np.asarray(intensity, dtype=float)
    ray = np.asarray(ray, dtype=float)
    cos_alpha = ray[..., 2] / np.linalg.norm(ray, axis=-1)
    mu = cos_alpha**model.k
    denom = model.sigma_o * mu * model.brdf.at_normal() * model.gain(t)
    if np.any(denom == 0):
        raise DomainError("spread, BRDF at normal incidence and gain must be non-zero")
    return intensity**model.gamma / denom
