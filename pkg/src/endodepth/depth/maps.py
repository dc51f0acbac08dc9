"""Depth and normal maps, parameterization conversions and per-pixel cost fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import CameraIntrinsics
from ..errors import DomainError
from ..photomodel import canonical_intensity
from .energy import (
    DepthEnergy,
    Parameterization,
    Stencils,
    distance_to_xi,
    normals_from_points,
    xi_to_distance,
)


def ray_grid(intr):
    """Unit rays (H, W, 3) and validity mask for any supported camera."""
    if isinstance(intr, CameraIntrinsics):
        return intr.ray_grid()
    vv, uu = np.mgrid[0:intr.height, 0:intr.width].astype(float)
    rays = intr.unproject(np.stack([uu, vv], axis=-1))
    return rays, np.ones(intr.shape, dtype=bool)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in one parameterization; invalid pixels hold 0."""

    values: np.ndarray
    parameterization: Parameterization
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape:
            raise DomainError("depth values and mask shapes differ")
        if not np.all(np.isfinite(values[mask])) or np.any(values[mask] <= 0):
            raise DomainError("depth values must be finite and positive at valid pixels")
        object.__setattr__(self, "values", np.where(mask, values, 0.0))
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "parameterization", Parameterization.parse(self.parameterization))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals in the camera frame, facing the camera."""

    vectors: np.ndarray
    mask: np.ndarray

    def colour(self):
        """RGB encoding ``(n + 1) / 2`` in [0, 1]; invalid pixels are black."""
        return np.where(self.mask[..., None], (self.vectors + 1.0) / 2.0, 0.0)


def convert_parameterization(depth, target, intr):
    """Exact per-pixel conversion of ``depth`` to the ``target`` parameterization."""
    target = Parameterization.parse(target)
    if target is depth.parameterization:
        return depth
    rays, _ = ray_grid(intr)
    mask = depth.mask
    ray_z = rays[..., 2][mask]
    d, _ = xi_to_distance(depth.values[mask], ray_z, depth.parameterization)
    out = np.zeros(depth.shape)
    out[mask] = distance_to_xi(d, ray_z, target)
    return DepthMap(out, target, mask)


def euclidean(depth, intr):
    return convert_parameterization(depth, Parameterization.EUCLIDEAN, intr)


def initial_depth(image, model, intr, t=0, mask=None):
    """Depth assuming every normal points at the optical centre: ``d = I_c^(-1/2)``.

    Pixels with zero intensity (infinite depth) or outside the camera's
    valid region are invalid.
    """
    image = np.asarray(image, dtype=float)
    rays, valid = ray_grid(intr)
    if image.shape != valid.shape:
        raise DomainError(f"image shape {image.shape} does not match the camera {valid.shape}")
    valid = valid & (image > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    values = np.zeros(image.shape)
    ic = canonical_intensity(image[valid], rays[valid], model, t)
    values[valid] = ic ** -0.5
    return DepthMap(values, Parameterization.EUCLIDEAN, valid)


def normals_from_depth(depth, intr):
    """Normals from central differences of back-projected neighbours.

    One-sided differences are used at mask borders; pixels without a valid
    neighbour on some axis get no normal.
    """
    rays, _ = ray_grid(intr)
    d = euclidean(depth, intr)
    mask = depth.mask
    pts = d.values[mask][:, None] * rays[mask]
    n, ok, _ = normals_from_points(pts, Stencils.from_mask(mask))
    vectors = np.zeros(mask.shape + (3,))
    vectors[mask] = n
    valid = np.zeros_like(mask)
    valid[mask] = ok
    vectors[~valid] = 0.0
    return NormalMap(vectors, valid)


def _energy_for(depth, image, model, intr, config, t):
    rays, _ = ray_grid(intr)
    energy = DepthEnergy(image, depth.mask, rays, model, t, config)
    xi = convert_parameterization(depth, energy.param, intr).values[depth.mask]
    return energy, xi


def photometric_cost(depth, image, model, intr, config, t=0):
    """Per-pixel robust photometric residual cost (grid; 0 at invalid pixels)."""
    energy, xi = _energy_for(depth, image, model, intr, config, t)
    cost, *_ = energy.data_terms(xi, with_grad=False)
    return energy.to_grid(cost)


def regularizer_cost(depth, image, config, intr, model=None):
    """Per-pixel ``g(u) ||D xi(u)||_eps`` in the config's parameterization."""
    from ..photomodel import PhotometricModel

    energy, xi = _energy_for(depth, image, model or PhotometricModel(), intr, config, 0)
    cost, _ = energy.regularizer_terms(xi, with_grad=False)
    return energy.to_grid(cost)
