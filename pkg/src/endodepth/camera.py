"""Fisheye (Kannala-Brandt) and pinhole camera geometry.

The fisheye model maps the off-axis angle ``theta`` of a ray to a distorted
angle ``theta_d = theta * (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)``
and places the pixel at ``(fx theta_d cos(phi) + cx, fy theta_d sin(phi) + cy)``.
Pixel coordinates are (u, v) = (column, row) with integer values at pixel
centres.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import DomainError, NumericalError

NEWTON_MAX_ITER = 20
NEWTON_TOL = 1e-12

# Reference endoscope intrinsics (1440 x 1080 video).
REFERENCE_FISHEYE = dict(
    fx=717.21, fy=717.48, cx=735.37, cy=552.80,
    k=(-0.13893, -1.2396e-3, 9.1258e-4, -4.0716e-5),
    width=1440, height=1080,
)


def distort_angle(theta, k):
    """Distorted angle for off-axis angle ``theta`` (radians)."""
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    k1, k2, k3, k4 = k
    return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))


def _distort_angle_deriv(theta, k):
    t2 = theta * theta
    k1, k2, k3, k4 = k
    return 1.0 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))


def undistort_angle(theta_d, k, max_iter=NEWTON_MAX_ITER, tol=NEWTON_TOL):
    """Invert :func:`distort_angle` by Newton iteration started at ``theta_d``.

    Returns ``(theta, converged)`` where ``converged`` is a boolean array.
    """
    theta_d = np.asarray(theta_d, dtype=float)
    theta = theta_d.copy()
    converged = np.zeros(theta.shape, dtype=bool)
    for _ in range(max_iter):
        f = distort_angle(theta, k) - theta_d
        fp = _distort_angle_deriv(theta, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(converged, 0.0, f / fp)
        theta = theta - step
        converged |= np.abs(step) < tol
        if converged.all():
            break
    converged &= np.isfinite(theta)
    return theta, converged


@dataclass(frozen=True)
class CameraIntrinsics:
    """Kannala-Brandt fisheye intrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    k: tuple = (0.0, 0.0, 0.0, 0.0)
    width: int = 0
    height: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        if len(self.k) != 4:
            raise DomainError("expected four distortion coefficients")
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def shape(self):
        return (self.height, self.width)

    @cached_property
    def max_theta(self):
        """Largest off-axis angle on which the distortion polynomial is monotone."""
        th = np.linspace(0.0, np.pi / 2, 20001)
        bad = np.nonzero(_distort_angle_deriv(th, self.k) <= 0)[0]
        if bad.size:
            return float(th[max(bad[0] - 1, 0)])
        return float(np.pi / 2)

    @cached_property
    def max_theta_d(self):
        return float(distort_angle(self.max_theta, self.k))

    def project(self, points):
        return project(points, self)

    def unproject(self, pixels):
        return unproject(pixels, self)

    def in_view(self, pixels):
        """True for pixels inside the image and inside the model's image circle."""
        pixels = np.asarray(pixels, dtype=float)
        u, v = pixels[..., 0], pixels[..., 1]
        inside = (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)
        rd = np.hypot((u - self.cx) / self.fx, (v - self.cy) / self.fy)
        return inside & (rd < self.max_theta_d)

    @cached_property
    def _ray_grid(self):
        vv, uu = np.mgrid[0:self.height, 0:self.width].astype(float)
        pix = np.stack([uu, vv], axis=-1)
        valid = self.in_view(pix)
        rays = np.zeros(pix.shape[:-1] + (3,))
        rays[valid] = unproject(pix[valid], self)
        rays[~valid] = (0.0, 0.0, 1.0)
        rays.setflags(write=False)
        valid.setflags(write=False)
        return rays, valid

    def ray_grid(self):
        """Unit ray per pixel, shape (H, W, 3), and the validity mask."""
        return self._ray_grid

    def scaled(self, factor):
        """Intrinsics for an image resized by ``factor``."""
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor,
            (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5,
            self.k, int(round(self.width * factor)), int(round(self.height * factor)),
        )


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Distortion-free perspective camera, used as undistortion target."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")

    @property
    def shape(self):
        return (self.height, self.width)

    def project(self, points):
        points = np.asarray(points, dtype=float)
        z = points[..., 2]
        if np.any(z <= 0):
            raise DomainError("pinhole projection needs positive depth")
        return np.stack([self.fx * points[..., 0] / z + self.cx,
                         self.fy * points[..., 1] / z + self.cy], axis=-1)

    def unproject(self, pixels):
        pixels = np.asarray(pixels, dtype=float)
        x = (pixels[..., 0] - self.cx) / self.fx
        y = (pixels[..., 1] - self.cy) / self.fy
        ray = np.stack([x, y, np.ones_like(x)], axis=-1)
        return ray / np.linalg.norm(ray, axis=-1, keepdims=True)

    def in_view(self, pixels):
        pixels = np.asarray(pixels, dtype=float)
        u, v = pixels[..., 0], pixels[..., 1]
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


def project(points, intr):
    """Project camera-frame points (..., 3) to pixels (..., 2).

    The result may fall outside the image; callers filter.
    """
    if isinstance(intr, PinholeIntrinsics):
        return intr.project(points)
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != 3:
        raise DomainError("points must have shape (..., 3)")
    rxy = np.hypot(points[..., 0], points[..., 1])
    norm = np.hypot(rxy, points[..., 2])
    if np.any(norm == 0):
        raise DomainError("cannot project the zero vector")
    theta = np.arctan2(rxy, points[..., 2])
    if np.any(theta >= np.pi / 2):
        raise DomainError("off-axis angle must be below 90 degrees")
    theta_d = distort_angle(theta, intr.k)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rxy > 0, theta_d / np.where(rxy > 0, rxy, 1.0), 0.0)
    u = intr.fx * points[..., 0] * scale + intr.cx
    v = intr.fy * points[..., 1] * scale + intr.cy
    return np.stack([u, v], axis=-1)


def unproject(pixels, intr):
    """Unit ray directions (..., 3) for pixels (..., 2).

    Raises :class:`NumericalError` (with the offending pixel attached) when
    the distortion inversion does not converge, e.g. outside the image circle.
    """
    if isinstance(intr, PinholeIntrinsics):
        return intr.unproject(pixels)
    pixels = np.asarray(pixels, dtype=float)
    if pixels.shape[-1] != 2:
        raise DomainError("pixels must have shape (..., 2)")
    mx = (pixels[..., 0] - intr.cx) / intr.fx
    my = (pixels[..., 1] - intr.cy) / intr.fy
    theta_d = np.hypot(mx, my)
    theta, ok = undistort_angle(theta_d, intr.k)
    ok &= (theta < np.pi / 2) & (theta_d <= intr.max_theta_d)
    if not ok.all():
        bad = pixels.reshape(-1, 2)[np.flatnonzero(~ok.ravel())[0]]
        raise NumericalError(f"unprojection failed at pixel ({bad[0]:.3f}, {bad[1]:.3f})",
                             location=(float(bad[0]), float(bad[1])))
    sin_t = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(theta_d > 0, sin_t / np.where(theta_d > 0, theta_d, 1.0), 0.0)
    return np.stack([mx * s, my * s, np.cos(theta)], axis=-1)


def largest_valid_rectangle(mask):
    """Largest axis-aligned rectangle of True pixels, as (top, left, height, width)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    heights = np.zeros(w, dtype=int)
    best = (0, 0, 0, 0)
    best_area = 0
    for row in range(h):
        heights = np.where(mask[row], heights + 1, 0)
        stack = []
        for col in range(w + 1):
            cur = heights[col] if col < w else 0
            start = col
            while stack and stack[-1][1] >= cur:
                start, hgt = stack.pop()
                area = hgt * (col - start)
                if area > best_area:
                    best_area = area
                    best = (row - hgt + 1, start, hgt, col - start)
            stack.append((start, cur))
    return best


def undistort_image(img, intr, target, mask=None):
    """Resample ``img`` (seen through ``intr``) onto the ``target`` grid.

    Returns ``(image, valid)``; target pixels whose source location falls
    outside the source image (or outside ``mask``) are invalid and hold 0.
    """
    img = np.asarray(img, dtype=float)
    if img.shape[:2] != intr.shape:
        raise DomainError(f"image shape {img.shape[:2]} does not match intrinsics {intr.shape}")
    vv, uu = np.mgrid[0:target.height, 0:target.width].astype(float)
    rays = target.unproject(np.stack([uu, vv], axis=-1))
    ok = rays[..., 2] > np.cos(getattr(intr, "max_theta", np.pi / 2))
    src = np.full(rays.shape[:-1] + (2,), -1.0)
    src[ok] = project(rays[ok], intr)
    valid = ok & intr.in_view(src)
    coords = [src[..., 1], src[..., 0]]
    out = ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    if mask is not None:
        m = ndimage.map_coordinates(np.asarray(mask, dtype=float), coords, order=1, mode="constant")
        valid &= m > 0.999
    out = np.where(valid, out, 0.0)
    return out, valid
