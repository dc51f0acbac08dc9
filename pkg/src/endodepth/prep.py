"""Frame preprocessing: illumination compensation, undistortion, highlight removal.

The pipeline order is fixed: compensate -> undistort -> crop -> detect -> inpaint.
Highlight detection and inpainting are simple stand-ins (threshold + dilation,
harmonic fill); depth results that depend on them should be labelled as such.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .camera import CameraIntrinsics, largest_valid_rectangle, undistort_image
from .errors import DomainError

MIN_SPREAD = 1e-3
HIGHLIGHT_THRESHOLD = 0.95
HIGHLIGHT_RADIUS = 2
HIGHLIGHT_MAX_AREA = 0.01


def _rays(intr):
    if isinstance(intr, CameraIntrinsics):
        return intr.ray_grid()
    vv, uu = np.mgrid[0:intr.height, 0:intr.width].astype(float)
    return intr.unproject(np.stack([uu, vv], axis=-1)), np.ones(intr.shape, dtype=bool)


def canonical_model(model):
    """The model an illumination-compensated image obeys: no spread, unit gain."""
    return replace(model, k=0.0, gains=(1.0,))


def compensate_illumination(raw, model, intr, t=0, min_spread=MIN_SPREAD):
    """Divide out spread/vignetting and gain: ``(raw**gamma / (mu' g_t))**(1/gamma)``.

    Returns ``(image, valid)``. Pixels outside the camera's field of view or
    where ``mu'`` drops below ``min_spread`` are invalid and hold 0.
    """
    raw = np.asarray(raw, dtype=float)
    rays, valid = _rays(intr)
    if raw.shape != valid.shape:
        raise DomainError(f"image shape {raw.shape} does not match the camera {valid.shape}")
    if np.any(raw < 0):
        raise DomainError("intensities must be non-negative")
    mu = np.where(valid, np.clip(rays[..., 2], 0.0, 1.0), 0.0) ** model.k
    valid = valid & (mu >= min_spread)
    out = np.zeros_like(raw)
    linear = raw[valid] ** model.gamma / (mu[valid] * model.gain(t))
    out[valid] = linear ** (1.0 / model.gamma)
    return out, valid


def restore_illumination(canonical, model, intr, t=0):
    """Inverse of :func:`compensate_illumination`: re-apply spread, gain and gamma.

    The depth solver measures photometric residuals in sensor gray levels, so
    a compensated (and inpainted) image is mapped back before solving.
    """
    canonical = np.asarray(canonical, dtype=float)
    rays, valid = _rays(intr)
    mu = np.where(valid, np.clip(rays[..., 2], 0.0, 1.0), 0.0) ** model.k
    return (canonical**model.gamma * mu * model.gain(t)) ** (1.0 / model.gamma)


def _disk(radius):
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return xx**2 + yy**2 <= radius**2


def detect_highlights(img, threshold=HIGHLIGHT_THRESHOLD, radius=HIGHLIGHT_RADIUS,
                      max_area=HIGHLIGHT_MAX_AREA, valid=None):
    """Near-saturated blobs, dilated by ``radius`` pixels.

    Connected bright regions covering more than ``max_area`` of the image are
    taken to be bright geometry rather than speculars and are left unmasked.
    """
    img = np.asarray(img, dtype=float)
    bright = img >= threshold
    if valid is not None:
        bright &= valid
    labels, count = ndimage.label(bright, structure=np.ones((3, 3)))
    if count:
        sizes = np.bincount(labels.ravel())
        keep = sizes <= max_area * img.size
        keep[0] = False
        bright = keep[labels]
    if radius > 0 and bright.any():
        bright = ndimage.binary_dilation(bright, structure=_disk(int(radius)))
    if valid is not None:
        bright &= valid
    return bright


def inpaint(img, mask, domain=None):
    """Fill ``mask`` with the harmonic interpolant of the surrounding pixels.

    Solves the discrete Laplace equation over the masked pixels, with the
    unmasked pixels as Dirichlet data; the image border (and the edge of
    ``domain``) is a zero-flux boundary. Unmasked pixels are returned
    unchanged.
    """
    img = np.asarray(img, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape:
        raise DomainError("mask and image shapes differ")
    domain = np.ones_like(mask) if domain is None else np.asarray(domain, dtype=bool)
    mask = mask & domain
    out = img.copy()
    if not mask.any():
        return out
    if not (domain & ~mask).any():
        raise DomainError("mask covers the whole image; nothing to inpaint from")
    index = np.full(mask.shape, -1)
    index[mask] = np.arange(mask.sum())
    n = int(mask.sum())
    rows, cols = [], []
    rhs = np.zeros(n)
    degree = np.zeros(n)
    known = np.zeros(n)
    ys, xs = np.nonzero(mask)
    me = index[ys, xs]
    h, w = mask.shape
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ny, nx = ys + dy, xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ny, nx, p = ny[inside], nx[inside], me[inside]
        live = domain[ny, nx]
        ny, nx, p = ny[live], nx[live], p[live]
        np.add.at(degree, p, 1.0)
        unknown = mask[ny, nx]
        rows.append(p[unknown])
        cols.append(index[ny[unknown], nx[unknown]])
        np.add.at(rhs, p[~unknown], img[ny[~unknown], nx[~unknown]])
        np.add.at(known, p[~unknown], 1.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    lap = sparse.coo_matrix((-np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    lap = lap + sparse.diags(degree)
    labels, _ = ndimage.label(mask)
    region = labels[ys, xs]
    if not np.isin(np.unique(region), region[known > 0]).all():
        raise DomainError("a masked region has no unmasked neighbours to inpaint from")
    out[mask] = spsolve(lap.tocsc(), rhs)
    return out


@dataclass(frozen=True)
class PreprocessReport:
    """What preprocessing did to a frame."""

    highlight_mask: np.ndarray
    inpainted_fraction: float
    k: float
    gamma: float
    gain: float
    crop: tuple  # (top, left, height, width) in the undistorted grid
    valid: np.ndarray

    def lines(self):
        top, left, height, width = self.crop
        yield f"k = {float(self.k)!r}"
        yield f"gamma = {float(self.gamma)!r}"
        yield f"gain = {float(self.gain)!r}"
        yield f"crop = {top},{left},{height},{width}"
        yield f"highlight_pixels = {int(self.highlight_mask.sum())}"
        yield f"inpainted_fraction = {float(self.inpainted_fraction)!r}"


@dataclass(frozen=True)
class Preprocessed:
    """Pipeline outputs on the (possibly undistorted and cropped) output grid.

    ``canonical`` is the compensated frame, ``image`` the compensated frame
    with highlights inpainted, and ``sensor`` that image with the calibrated
    illumination re-applied, ready for the depth solver with the full model.
    """

    canonical: np.ndarray
    image: np.ndarray
    sensor: np.ndarray
    report: PreprocessReport
    intrinsics: object


def preprocess(raw, model, intr, t=0, target=None, threshold=HIGHLIGHT_THRESHOLD,
               radius=HIGHLIGHT_RADIUS, max_area=HIGHLIGHT_MAX_AREA):
    """Compensate, optionally undistort onto ``target`` and crop, then remove highlights.

    Highlights are detected on the raw frame carried through the same
    undistortion and crop: saturation is a property of sensor values, and
    compensation can push ordinary peripheral pixels above any fixed
    threshold.  Without a ``target`` camera the image stays on the source
    grid (the depth solver handles fisheye rays directly) and no crop is
    applied.
    """
    raw = np.asarray(raw, dtype=float)
    canonical, valid = compensate_illumination(raw, model, intr, t)
    sensor = np.where(valid, raw, 0.0)
    camera = intr
    crop = (0, 0) + valid.shape
    if target is not None:
        sensor, _ = undistort_image(sensor, intr, target, mask=valid)
        canonical, valid = undistort_image(canonical, intr, target, mask=valid)
        top, left, height, width = crop = largest_valid_rectangle(valid)
        if height == 0 or width == 0:
            raise DomainError("undistorted image has no valid region")
        window = (slice(top, top + height), slice(left, left + width))
        canonical, sensor, valid = canonical[window], sensor[window], valid[window]
        camera = replace(target, cx=target.cx - left, cy=target.cy - top,
                         width=width, height=height)
    highlights = detect_highlights(sensor, threshold, radius, max_area, valid)
    image = inpaint(canonical, highlights, domain=valid)
    restored = np.where(valid, restore_illumination(image, model, camera, t), 0.0)
    report = PreprocessReport(
        highlight_mask=highlights,
        inpainted_fraction=float(highlights.sum() / max(valid.sum(), 1)),
        k=model.k, gamma=model.gamma, gain=model.gain(t),
        crop=tuple(int(v) for v in crop), valid=valid,
    )
    return Preprocessed(canonical, image, restored, report, camera)
