"""Static figure and CSV artefacts: colour-mapped maps, triptychs, cross-sections."""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DomainError  # noqa: E402

DEPTH_CMAP = "viridis"


def normal_colours(normals, mask=None):
    """Encode unit normals as RGB ``(n + 1) / 2``; invalid pixels are black."""
    rgb = (np.asarray(normals, dtype=float) + 1.0) / 2.0
    if mask is not None:
        rgb = np.where(np.asarray(mask)[..., None], rgb, 0.0)
    return np.clip(rgb, 0.0, 1.0)


def decode_normals(rgb):
    """Invert :func:`normal_colours` (up to quantisation), renormalising."""
    n = 2.0 * np.asarray(rgb, dtype=float) - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def depth_colours(values, mask, vmin=None, vmax=None, cmap=DEPTH_CMAP):
    """Colour-map a depth field to RGB in [0, 1]; invalid pixels are black."""
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(values.shape + (3,))
    lo = values[mask].min() if vmin is None else vmin
    hi = values[mask].max() if vmax is None else vmax
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    rgb = plt.get_cmap(cmap)(np.clip(scaled, 0.0, 1.0))[..., :3]
    return np.where(mask[..., None], rgb, 0.0)


def _save(fig, path):
    # No software tag, so the bytes depend only on the drawn content.
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def save_triptych(path, image, zdepth, normals, mask, title=""):
    """Image, z-depth colour map and normal colour map side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.4), constrained_layout=True)
    axes[0].imshow(np.clip(image, 0, 1), cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("image")
    masked = np.ma.masked_where(~mask, zdepth * 1e3)
    im = axes[1].imshow(masked, cmap=DEPTH_CMAP)
    axes[1].set_title("z-depth [mm]")
    fig.colorbar(im, ax=axes[1], shrink=0.8)
    axes[2].imshow(normal_colours(normals, mask))
    axes[2].set_title("normals (n+1)/2")
    for ax in axes:
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    _save(fig, path)


def save_comparison(path, estimate, truth, mask, title=""):
    """Estimated vs ground-truth depth and their absolute difference (mm)."""
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.4), constrained_layout=True)
    lo, hi = truth[mask].min() * 1e3, truth[mask].max() * 1e3
    for ax, field, name in ((axes[0], estimate, "estimate [mm]"), (axes[1], truth, "truth [mm]")):
        im = ax.imshow(np.ma.masked_where(~mask, field * 1e3), cmap=DEPTH_CMAP, vmin=lo, vmax=hi)
        ax.set_title(name)
    fig.colorbar(im, ax=axes[:2], shrink=0.8)
    err = np.ma.masked_where(~mask, np.abs(estimate - truth) * 1e3)
    im = axes[2].imshow(err, cmap="magma")
    axes[2].set_title("|error| [mm]")
    fig.colorbar(im, ax=axes[2], shrink=0.8)
    for ax in axes:
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    _save(fig, path)


def cross_section(distance, mask, rays, row):
    """Samples along image ``row``: columns, 3-D points, distance and inverse distance.

    Returns a dict of 1-D arrays over the valid pixels of the row.
    """
    distance = np.asarray(distance, dtype=float)
    if not 0 <= row < distance.shape[0]:
        raise DomainError(f"row {row} outside the image (height {distance.shape[0]})")
    cols = np.flatnonzero(mask[row])
    d = distance[row, cols]
    pts = d[:, None] * rays[row, cols]
    return {"u": cols, "x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2], "d": d, "inv_d": 1.0 / d}


def write_cross_section(path, section):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["u", "x", "y", "z", "d", "inv_d"])
        for i in range(len(section["u"])):
            writer.writerow([int(section["u"][i])] +
                            [repr(float(section[k][i])) for k in ("x", "y", "z", "d", "inv_d")])


def plot_cross_section(path, section, truth=None, row=None):
    """Plot the section in the camera's x-z plane, optionally with the ground truth."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    ax.plot(section["x"] * 1e3, section["z"] * 1e3, label="estimate")
    if truth is not None:
        ax.plot(truth["x"] * 1e3, truth["z"] * 1e3, "--", label="ground truth")
        ax.legend()
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("z [mm]")
    ax.invert_yaxis()
    ax.set_title("cross-section" + (f" along row {row}" if row is not None else ""))
    _save(fig, path)


def plot_convergence(path, report):
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    ax.semilogy(report.energies)
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy")
    ax.set_title(report.reason)
    _save(fig, path)


def plot_residual_histogram(path, residuals, bins=None):
    residuals = np.asarray(residuals, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    if bins is None:
        span = max(1.0, np.ceil(np.abs(residuals).max())) if residuals.size else 1.0
        bins = np.arange(-span - 0.5, span + 1.5, 1.0)
    ax.hist(residuals, bins=bins)
    ax.set_xlabel("residual [gray levels]")
    ax.set_ylabel("count")
    ax.set_title(f"mean {residuals.mean():.2f}, std {residuals.std():.2f}")
    _save(fig, path)
