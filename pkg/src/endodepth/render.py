"""Analytic test scenes and forward rendering with the photometric model."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraIntrinsics, project
from .errors import DomainError
from .photomodel import GRAY, Lambertian, PhotometricModel, predict_intensity

log = logging.getLogger(__name__)


def _rotation(tilt_x, tilt_y):
    """Rotation about x by ``tilt_x`` followed by rotation about y by ``tilt_y``."""
    cx, sx = np.cos(tilt_x), np.sin(tilt_x)
    cy, sy = np.cos(tilt_y), np.sin(tilt_y)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    return ry @ rx


def _toward_camera(normals, rays):
    flip = np.sum(normals * rays, axis=-1) > 0
    normals[flip] *= -1
    return normals


def _first_root(fun, rays, t_max, n_samples=400, tol=1e-15, chunk=2048):
    """First positive root of ``fun(t * ray)`` per ray, by sampling then bisection."""
    if len(rays) > chunk:
        return np.concatenate([_first_root(fun, rays[i:i + chunk], t_max, n_samples, tol, chunk)
                               for i in range(0, len(rays), chunk)])
    ts = np.linspace(0.0, t_max, n_samples)[1:]
    vals = fun(rays[:, None, :] * ts[None, :, None])
    sign = np.sign(vals)
    change = sign[:, 1:] * sign[:, :-1] <= 0
    hit = change.any(axis=1)
    first = np.argmax(change, axis=1)
    lo = ts[first]
    hi = ts[first + 1]
    f_lo = vals[np.arange(len(rays)), first]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = fun(rays * mid[:, None])
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(hi, 1.0)):
            break
    return np.where(hit, 0.5 * (lo + hi), np.nan)


class Surface:
    """An analytic surface; ``intersect`` takes unit rays from the optical centre."""

    def intersect(self, rays):
        """Return ``(distance, normal, valid)`` for rays of shape (N, 3)."""
        raise NotImplementedError

    def implicit(self, points):
        """Signed residual of the surface equation (zero on the surface)."""
        raise NotImplementedError


@dataclass(frozen=True)
class RotatedPlane(Surface):
    """Plane through (0, 0, distance), tilted about the x and y axes (radians)."""

    distance: float = 0.05
    tilt_x: float = 0.0
    tilt_y: float = 0.0

    @property
    def normal(self):
        # unit normal facing the camera
        return _rotation(self.tilt_x, self.tilt_y) @ np.array([0.0, 0.0, -1.0])

    def implicit(self, points):
        n = self.normal
        return points @ n - n[2] * self.distance

    def intersect(self, rays):
        n = self.normal
        denom = rays @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = n[2] * self.distance / denom
        valid = np.isfinite(t) & (t > 0) & (denom < 0)
        normals = np.broadcast_to(n, rays.shape).copy()
        return np.where(valid, t, np.nan), normals, valid


@dataclass(frozen=True)
class CurvedSheet(Surface):
    """Height field ``z = distance + amplitude * cos(2 pi x / period)``."""

    distance: float = 0.05
    amplitude: float = 0.01
    period: float = 0.08

    def implicit(self, points):
        x, z = points[..., 0], points[..., 2]
        return z - self.distance - self.amplitude * np.cos(2 * np.pi * x / self.period)

    def intersect(self, rays):
        t_max = 4 * (self.distance + abs(self.amplitude)) / np.maximum(rays[:, 2], 1e-3)
        t = _first_root(self.implicit, rays, t_max.max())
        valid = np.isfinite(t)
        w = 2 * np.pi / self.period
        x = t * rays[:, 0]
        grad = np.stack([self.amplitude * w * np.sin(w * np.nan_to_num(x)),
                         np.zeros_like(t), np.ones_like(t)], axis=-1)
        normals = -grad / np.linalg.norm(grad, axis=-1, keepdims=True)
        return t, _toward_camera(normals, rays), valid


@dataclass(frozen=True)
class Tube(Surface):
    """Cylinder of ``radius`` around an axis through ``offset`` (camera frame).

    The axis direction is +z tilted by ``tilt_x``/``tilt_y``. The cylinder
    runs for ``length`` along the axis and is closed by a tapering cap of
    height ``cap_length`` whose radius follows a quarter cosine, so the wall
    continues smoothly into the cap, every forward ray hits, and the deepest
    point (the cap tip) is seen at grazing incidence, darker than the walls
    around it. With
    ``haustra_amplitude`` > 0 the cylinder radius is modulated as
    ``radius * (1 - amplitude * (1 - cos(2 pi s / period)) / 2)`` along the
    axis coordinate ``s``.
    """

    radius: float = 0.025
    length: float = 0.055
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    offset: tuple = (0.0, 0.0)
    haustra_amplitude: float = 0.0
    haustra_period: float = 0.03
    cap_length: float = 0.065

    def __post_init__(self):
        if np.hypot(*self.offset) >= self.radius:
            raise DomainError("camera must lie inside the tube")
        if not (self.length > 0 and self.cap_length > 0):
            raise DomainError("tube and cap lengths must be positive")

    @property
    def axis(self):
        return _rotation(self.tilt_x, self.tilt_y) @ np.array([0.0, 0.0, 1.0])

    @property
    def origin(self):
        return np.array([self.offset[0], self.offset[1], 0.0])

    @property
    def tip(self):
        """Axis coordinate of the cone tip."""
        return self.length + self.cap_length

    def _local(self, points):
        rel = points - self.origin
        s = rel @ self.axis
        radial = rel - s[..., None] * self.axis
        return s, radial

    def _radius_at(self, s):
        s = np.asarray(s, dtype=float)
        r_end = self.radius
        if self.haustra_amplitude:
            ring = 0.5 * (1 - np.cos(2 * np.pi * np.minimum(s, self.length) / self.haustra_period))
            r_wall = self.radius * (1 - self.haustra_amplitude * ring)
            ring_end = 0.5 * (1 - np.cos(2 * np.pi * self.length / self.haustra_period))
            r_end = self.radius * (1 - self.haustra_amplitude * ring_end)
        else:
            r_wall = np.full(s.shape, self.radius)
        phase = np.clip((s - self.length) / self.cap_length, 0.0, 1.0)
        cap = r_end * np.cos(0.5 * np.pi * phase)
        return np.where(s <= self.length, r_wall, np.where(s <= self.tip, cap, 0.0))

    def implicit(self, points):
        s, radial = self._local(points)
        rho = np.linalg.norm(radial, axis=-1)
        return rho - self._radius_at(s)

    def intersect(self, rays):
        a = self.axis
        o = -self.origin  # camera position relative to the axis origin
        if self.haustra_amplitude == 0:
            rd = rays - (rays @ a)[:, None] * a
            od = o - (o @ a) * a
            ra = rays @ a
            oa = o @ a
            with np.errstate(divide="ignore", invalid="ignore"):
                qa = np.sum(rd * rd, axis=-1)
                disc = (rd @ od) ** 2 - qa * (od @ od - self.radius**2)
                t_cyl = (-(rd @ od) + np.sqrt(disc)) / qa
                on_cyl = np.isfinite(t_cyl) & (oa + t_cyl * ra <= self.length)
            t = t_cyl.copy()
            rest = ~on_cyl
            if rest.any():
                t[rest] = _first_root(self.implicit, rays[rest], 2 * (self.tip + self.radius),
                                      n_samples=800)
        else:
            t_max = 2 * (self.tip + self.radius) + 1e-3
            t = _first_root(self.implicit, rays, t_max, n_samples=800)
        valid = np.isfinite(t) & (t > 0)
        pts = rays * np.where(valid, t, 0.0)[:, None]
        normals = self._gradient(pts)
        normals /= np.maximum(np.linalg.norm(normals, axis=-1, keepdims=True), 1e-300)
        return t, _toward_camera(normals, rays), valid

    def _gradient(self, points):
        s, radial = self._local(points)
        rho = np.linalg.norm(radial, axis=-1, keepdims=True)
        g = radial / np.maximum(rho, 1e-300)
        on_wall = s <= self.length
        phase = np.clip((s - self.length) / self.cap_length, 0.0, 1.0)
        r_end = self._radius_at(self.length)
        slope = np.where(on_wall, 0.0,
                         r_end * 0.5 * np.pi / self.cap_length * np.sin(0.5 * np.pi * phase))
        if self.haustra_amplitude:
            w = 2 * np.pi / self.haustra_period
            dr = self.radius * self.haustra_amplitude * 0.5 * w * np.sin(w * s)
            slope = np.where(on_wall, dr, slope)
        return g + slope[:, None] * self.axis


@dataclass(frozen=True)
class StepPlanes(Surface):
    """Two fronto-parallel half planes meeting at ``x / z = edge_slope``."""

    near: float = 0.04
    far: float = 0.06
    edge_slope: float = 0.0

    def implicit(self, points):
        x, z = points[..., 0], points[..., 2]
        near_side = x < self.edge_slope * z
        return np.where(near_side, z - self.near, z - self.far)

    def intersect(self, rays):
        near_side = rays[:, 0] < self.edge_slope * rays[:, 2]
        t = np.where(near_side, self.near, self.far) / rays[:, 2]
        normals = np.tile([0.0, 0.0, -1.0], (len(rays), 1))
        return t, normals, np.isfinite(t) & (t > 0)


@dataclass(frozen=True)
class Scene:
    surface: Surface
    albedo: float = 1.0
    name: str = ""

    @property
    def brdf(self):
        return Lambertian(self.albedo)


def ray_cast(scene, rays):
    """Distance and camera-facing normal of the closest hit per unit ray.

    ``rays`` may have any leading shape; the result mirrors it. Rays that miss
    are returned with ``valid`` False and NaN distance.
    """
    rays = np.asarray(rays, dtype=float)
    flat = rays.reshape(-1, 3)
    d, n, valid = scene.surface.intersect(flat)
    lead = rays.shape[:-1]
    return d.reshape(lead), n.reshape(lead + (3,)), valid.reshape(lead)


@dataclass
class RenderedFrame:
    image: np.ndarray
    gt_depth_euclidean: np.ndarray
    gt_depth_z: np.ndarray
    gt_normals: np.ndarray
    mask: np.ndarray
    model: PhotometricModel = None
    frame: int = 0
    clean_image: np.ndarray = None

    @property
    def shape(self):
        return self.image.shape


def pixel_noise(shape, sigma, seed):
    """Gaussian noise in normalised units from a counter-based stream keyed by ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    return gen.standard_normal(shape) * (sigma / GRAY)


def render(scene, intr, model, t=0, noise_sigma=0.0, seed=0):
    """Render ``scene`` through ``intr`` with ``model`` (frame ``t``).

    The scene's albedo replaces the model's BRDF. Noise is given in gray
    levels; the noisy image is clamped to [0, 1].
    """
    rays, in_view = intr.ray_grid()
    d, n, hit = ray_cast(scene, rays)
    mask = in_view & hit
    mask &= np.sum(n * rays, axis=-1) < 0
    render_model = model.with_brdf(scene.brdf)
    clean = np.zeros(intr.shape)
    pts = rays[mask] * d[mask][:, None]
    clean[mask] = predict_intensity(pts, n[mask], render_model, t)
    image = clean
    if noise_sigma > 0:
        image = clean + pixel_noise(clean.shape, noise_sigma, seed)
    image = np.where(mask, np.clip(image, 0.0, 1.0), 0.0)
    depth = np.where(mask, d, 0.0)
    normals = np.where(mask[..., None], n, 0.0)
    return RenderedFrame(
        image=image,
        gt_depth_euclidean=depth,
        gt_depth_z=depth * rays[..., 2],
        gt_normals=normals,
        mask=mask,
        model=render_model,
        frame=t,
        clean_image=clean,
    )


# -- calibration sequences -------------------------------------------------

@dataclass(frozen=True)
class CalibrationPattern:
    """Planar sheet sampled at points on its white regions (pattern frame, z = 0)."""

    width: float = 0.0561
    height: float = 0.0982
    n_points: int = 500
    brdf: object = field(default_factory=Lambertian)
    margin: float = 0.004

    def sample_points(self):
        """Points on a jittered-free grid, ``n_points`` of them, centred on the origin."""
        w = self.width - 2 * self.margin
        h = self.height - 2 * self.margin
        nx = max(int(round(np.sqrt(self.n_points * w / h))), 1)
        ny = int(np.ceil(self.n_points / nx))
        xs = (np.arange(nx) + 0.5) / nx * w - w / 2
        ys = (np.arange(ny) + 0.5) / ny * h - h / 2
        grid = np.array([(x, y, 0.0) for y in ys for x in xs])
        return grid[: self.n_points]


@dataclass(frozen=True)
class Pose:
    """Camera-from-pattern transform: ``x_cam = rotation @ x_pattern + translation``."""

    rotation: np.ndarray
    translation: np.ndarray


@dataclass
class Observations:
    """Point-sampled intensities: one row per (frame, point)."""

    frame: np.ndarray
    point: np.ndarray
    intensity: np.ndarray  # gray levels, 0-255
    points: np.ndarray  # (N, 3) camera frame, metres
    normals: np.ndarray = None  # (N, 3), optional

    def __len__(self):
        return len(self.frame)

    def subset(self, keep):
        return Observations(
            self.frame[keep], self.point[keep], self.intensity[keep], self.points[keep],
            None if self.normals is None else self.normals[keep],
        )

    @property
    def frames(self):
        return np.unique(self.frame)


def auto_gain(distances, low=1.0, high=3.0):
    """Gain that grows linearly with viewing distance between ``low`` and ``high``."""
    distances = np.asarray(distances, dtype=float)
    span = distances.max() - distances.min()
    if span == 0:
        return np.full_like(distances, low)
    return low + (high - low) * (distances - distances.min()) / span


def make_trajectory(n_frames=30, start=0.035, stop=0.075, max_tilt=np.radians(25.0), seed=0):
    """Poses that recede from the pattern while wobbling in tilt.

    Returns ``(poses, distances)``; distances are those of the pattern centre.
    """
    rng = np.random.default_rng(seed)
    distances = np.linspace(start, stop, n_frames)
    phase = np.linspace(0.0, 3 * np.pi, n_frames)
    poses = []
    for i, dist in enumerate(distances):
        tx = max_tilt * np.sin(phase[i]) + rng.normal(0, np.radians(2))
        ty = max_tilt * np.cos(1.3 * phase[i]) * 0.8 + rng.normal(0, np.radians(2))
        rot = _rotation(np.pi + tx, ty)  # pattern normal (+z) faces the camera
        poses.append(Pose(rot, np.array([0.0, 0.0, dist])))
    return poses, distances


def render_calibration_sequence(pattern, trajectory, model, intr, noise_sigma=0.0, seed=0):
    """Observe ``pattern`` from every pose of ``trajectory`` with ``model``.

    Frame ``t`` uses gain ``model.gains[t]``. Points outside the image, outside
    the image circle, or facing away are skipped; frames with no visible point
    are dropped with a warning. Returns :class:`Observations` with intensities
    in gray levels (noisy, clamped to [0, 255]) and the pattern normals.
    """
    local = pattern.sample_points()
    render_model = model.with_brdf(pattern.brdf)
    rows = []
    for t, pose in enumerate(trajectory):
        pts = local @ pose.rotation.T + pose.translation
        normal = pose.rotation @ np.array([0.0, 0.0, 1.0])
        ok = pts[:, 2] > 0
        ok &= (pts @ normal) < 0
        if ok.any():
            theta = np.arctan2(np.hypot(pts[:, 0], pts[:, 1]), pts[:, 2])
            ok &= theta < intr.max_theta
            pix = np.full((len(pts), 2), -1.0)
            pix[ok] = project(pts[ok], intr)
            ok &= intr.in_view(pix)
        if not ok.any():
            warnings.warn(f"calibration pattern out of view in frame {t}; frame dropped")
            continue
        idx = np.flatnonzero(ok)
        normals = np.tile(normal, (len(idx), 1))
        value = predict_intensity(pts[idx], normals, render_model, t)
        rows.append((np.full(len(idx), t), idx, value, pts[idx], normals))
    if not rows:
        raise DomainError("pattern never visible")
    frame = np.concatenate([r[0] for r in rows])
    point = np.concatenate([r[1] for r in rows])
    value = np.concatenate([r[2] for r in rows]) * GRAY
    if noise_sigma > 0:
        value = value + np.random.default_rng(seed).normal(0.0, noise_sigma, value.shape)
    value = np.clip(value, 0.0, GRAY)
    return Observations(frame, point, value,
                        np.concatenate([r[3] for r in rows]),
                        np.concatenate([r[4] for r in rows]))
