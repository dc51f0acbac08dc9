"""Joint photometric calibration from point-sampled intensities.

Observations are intensities ``I_jt`` (gray levels) of known 3D points
``x_j`` seen in frame ``t``. The unknowns are the spread exponent ``k``,
optionally ``gamma``, one gain per frame and optionally a 15-knot BRDF table.
The robust (Huber) photometric error is minimised by iteratively reweighted
Gauss-Newton with Levenberg damping. ``sigma_o`` is pinned to 1, so gains
absorb the light power and the surface albedo.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError
from .photomodel import GRAY, KNOT_ANGLES, N_KNOTS, BrdfTable, Lambertian, PhotometricModel

MIN_FRAMES = 2
MIN_OBSERVATIONS = 50
SATURATED = GRAY  # observations at full scale carry no information


@dataclass(frozen=True)
class CalibOptions:
    estimate_gamma: bool = False
    brdf_mode: str = "lambertian"  # or "knots"
    huber_scale: float = 3.0  # gray levels
    tol: float = 1e-10
    max_iter: int = 200
    init_k: float = 4.0
    init_gamma: float = 2.2
    reference_frame: int | None = None  # gain pinned to 1 when estimating knots

    def __post_init__(self):
        if self.brdf_mode not in ("lambertian", "knots"):
            raise CalibrationError(f"unknown brdf_mode {self.brdf_mode!r}")
        if not self.huber_scale > 0:
            raise CalibrationError("huber_scale must be positive")


@dataclass(frozen=True)
class CalibProblem:
    """Observations to fit, the solver options and optional validation data."""

    observations: object
    options: CalibOptions = field(default_factory=CalibOptions)
    validation: object = None

    def __post_init__(self):
        obs = self.observations
        if len(obs) < MIN_OBSERVATIONS:
            raise CalibrationError(
                f"under-determined: {len(obs)} observations, need at least {MIN_OBSERVATIONS}")
        if len(obs.frames) < MIN_FRAMES:
            raise CalibrationError(
                f"under-determined: {len(obs.frames)} frame(s), need at least {MIN_FRAMES}")


@dataclass(frozen=True)
class CalibResult:
    model: PhotometricModel
    frames: np.ndarray  # frame id of each entry of model.gains
    mean: float  # residual mean, gray levels
    std: float
    on_validation: bool
    per_frame: dict  # frame -> (mean, std, count)
    iterations: int
    final_cost: float
    converged: bool
    knot_sampled: np.ndarray = None  # False for knots no observation constrains

    def gain_of(self, frame):
        idx = np.searchsorted(self.frames, frame)
        if idx >= len(self.frames) or self.frames[idx] != frame:
            raise CalibrationError(f"frame {frame} was not calibrated")
        return self.model.gains[idx]


def huber_cost(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_weights(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def plane_normals(observations):
    """Per-observation normals from a least-squares plane fit per frame.

    The calibration target is planar, so each frame's points define its
    normal; it is oriented toward the camera.
    """
    normals = np.zeros_like(observations.points)
    for t in observations.frames:
        sel = observations.frame == t
        pts = observations.points[sel]
        if len(pts) < 3:
            raise CalibrationError(f"frame {t}: need 3 points to fit the pattern plane")
        centre = pts.mean(axis=0)
        _, sv, vt = np.linalg.svd(pts - centre, full_matrices=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise CalibrationError(f"frame {t}: pattern points are collinear")
        n = vt[2]
        if n @ centre > 0:
            n = -n
        normals[sel] = n
    return normals


class _Geometry:
    """Per-observation quantities that do not depend on the parameters."""

    def __init__(self, observations):
        normals = observations.normals
        if normals is None:
            normals = plane_normals(observations)
        x = observations.points
        dist = np.linalg.norm(x, axis=-1)
        if np.any(dist <= 0) or np.any(x[:, 2] <= 0):
            raise CalibrationError("observation points must lie in front of the camera")
        self.log_cos_alpha = np.log(x[:, 2] / dist)
        self.cos_theta = np.clip(-np.sum(normals * x, axis=-1) / dist, 0.0, 1.0)
        self.theta = np.arccos(self.cos_theta)
        self.inv_d2 = 1.0 / dist**2
        self.knot_weights = BrdfTable.weights(self.theta)
        self.alpha = np.arccos(np.exp(self.log_cos_alpha))


def _linear_signal(geo, k, gains_per_obs, brdf_values):
    """Pre-gamma signal with sigma_o = 1."""
    return np.exp(k * geo.log_cos_alpha) * brdf_values * geo.cos_theta * geo.inv_d2 * gains_per_obs


class _Layout:
    """Maps the flat parameter vector to (k, gamma, log gains, knots)."""

    def __init__(self, n_frames, options, ref_index):
        self.opts = options
        self.n_frames = n_frames
        self.ref = ref_index if options.brdf_mode == "knots" else None
        self.free_gains = np.array([i for i in range(n_frames) if i != self.ref], dtype=int)
        self.i_gamma = 1 if options.estimate_gamma else None
        start = 1 + (1 if options.estimate_gamma else 0)
        self.gain_slice = slice(start, start + len(self.free_gains))
        self.knot_slice = None
        if options.brdf_mode == "knots":
            self.knot_slice = slice(self.gain_slice.stop, self.gain_slice.stop + N_KNOTS)
        self.size = (self.knot_slice or self.gain_slice).stop

    def initial(self):
        p = np.zeros(self.size)
        p[0] = self.opts.init_k
        if self.i_gamma is not None:
            p[self.i_gamma] = self.opts.init_gamma
        if self.knot_slice is not None:
            p[self.knot_slice] = 1.0 / np.pi
        return p

    def unpack(self, p):
        gamma = p[self.i_gamma] if self.i_gamma is not None else self.opts.init_gamma
        log_g = np.zeros(self.n_frames)
        log_g[self.free_gains] = p[self.gain_slice]
        knots = p[self.knot_slice] if self.knot_slice is not None else None
        return p[0], gamma, log_g, knots

    def project(self, p):
        """Feasible set: positive gamma, non-negative knots."""
        p = p.copy()
        if self.i_gamma is not None:
            p[self.i_gamma] = max(p[self.i_gamma], 0.1)
        if self.knot_slice is not None:
            p[self.knot_slice] = np.maximum(p[self.knot_slice], 0.0)
        return p


def _predict(geo, layout, p, frame_index, with_jac=False):
    k, gamma, log_g, knots = layout.unpack(p)
    brdf_values = (geo.knot_weights @ knots) if knots is not None else np.full(len(geo.theta), 1 / np.pi)
    gains = np.exp(log_g)[frame_index]
    signal = _linear_signal(geo, k, gains, brdf_values)
    pred = GRAY * np.maximum(signal, 0.0) ** (1.0 / gamma)
    if not with_jac:
        return pred, None
    jac = np.zeros((len(pred), layout.size))
    scaled = pred / gamma
    jac[:, 0] = scaled * geo.log_cos_alpha
    if layout.i_gamma is not None:
        jac[:, layout.i_gamma] = -pred / gamma**2 * np.log(np.maximum(signal, 1e-300))
    lookup = np.full(layout.n_frames, -1)
    lookup[layout.free_gains] = np.arange(len(layout.free_gains))
    col = lookup[frame_index]
    rows = np.flatnonzero(col >= 0)
    jac[rows, layout.gain_slice.start + col[rows]] = scaled[rows]
    if layout.knot_slice is not None:
        safe = np.maximum(brdf_values, 1e-12)
        jac[:, layout.knot_slice] = (scaled / safe)[:, None] * geo.knot_weights
    return pred, jac


def _frame_index(frames, observations):
    return np.searchsorted(frames, observations.frame)


def solve_calibration(problem):
    """Robustly fit k, gamma (optional), per-frame gains and BRDF knots (optional)."""
    opts = problem.options
    obs = problem.observations
    obs = obs.subset(obs.intensity < SATURATED)
    if len(obs) == 0:
        raise CalibrationError("all observations are saturated; the gain gauge cannot be fixed")
    if len(obs) < MIN_OBSERVATIONS or len(obs.frames) < MIN_FRAMES:
        raise CalibrationError("under-determined after dropping saturated observations")

    frames = obs.frames
    ref = opts.reference_frame if opts.reference_frame is not None else int(frames[0])
    if opts.brdf_mode == "knots" and ref not in frames:
        raise CalibrationError(f"reference frame {ref} has no observations")
    layout = _Layout(len(frames), opts, int(np.searchsorted(frames, ref)))
    geo = _Geometry(obs)
    fidx = _frame_index(frames, obs)
    delta = opts.huber_scale

    p = layout.initial()
    # Gains start at 1 in spirit; we start them at the per-frame level that
    # matches the data under the initial k, gamma (a closed-form step of the
    # same least-squares problem) so the first iterations are not spent
    # rescaling by orders of magnitude.
    p = _rescale_gains(geo, layout, p, fidx, obs.intensity)
    pred, _ = _predict(geo, layout, p, fidx)
    cost = huber_cost(obs.intensity - pred, delta).sum()
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        pred, jac = _predict(geo, layout, p, fidx, with_jac=True)
        r = obs.intensity - pred
        w = huber_weights(r, delta)
        jw = jac * w[:, None]
        hess = jac.T @ jw
        grad = jw.T @ r
        diag = np.maximum(np.diag(hess), 1e-12)
        improved = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(hess + mu * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            trial = layout.project(p + step)
            pred_t, _ = _predict(geo, layout, trial, fidx)
            cost_t = huber_cost(obs.intensity - pred_t, delta).sum()
            if not np.isfinite(cost_t):
                mu *= 10
                continue
            if cost_t <= cost:
                improved = True
                break
            mu *= 10
        if not improved:
            converged = True  # no descent direction left at machine precision
            break
        rel = (cost - cost_t) / max(cost, 1e-300)
        p, cost = trial, cost_t
        mu = max(mu / 10, 1e-12)
        if rel < opts.tol:
            converged = True
            break
    if not np.isfinite(cost):
        raise CalibrationError("calibration diverged")

    k, gamma, log_g, knots = layout.unpack(p)
    sampled = None
    if knots is not None:
        sampled = np.any(geo.knot_weights > 1e-6, axis=0)
        knots = _fill_unsampled(knots, sampled)
    brdf = BrdfTable(tuple(knots)) if knots is not None else Lambertian(1.0)
    model = PhotometricModel(k=float(k), gamma=float(gamma), gains=tuple(np.exp(log_g)),
                             brdf=brdf, sigma_o=1.0)

    if problem.validation is not None:
        report_obs = problem.validation.subset(problem.validation.intensity < SATURATED)
        report_frames = np.searchsorted(frames, report_obs.frame)
        if np.any(report_frames >= len(frames)) or np.any(frames[np.minimum(report_frames, len(frames) - 1)] != report_obs.frame):
            raise CalibrationError("validation observations reference uncalibrated frames")
        residuals = report_obs.intensity - _predict(_Geometry(report_obs), layout, p, report_frames)[0]
        report_frame_ids = report_obs.frame
    else:
        residuals = obs.intensity - _predict(geo, layout, p, fidx)[0]
        report_frame_ids = obs.frame
    per_frame = {}
    for t in np.unique(report_frame_ids):
        rt = residuals[report_frame_ids == t]
        per_frame[int(t)] = (float(rt.mean()), float(rt.std()), int(len(rt)))

    return CalibResult(
        model=model, frames=frames, mean=float(residuals.mean()), std=float(residuals.std()),
        on_validation=problem.validation is not None, per_frame=per_frame, iterations=it,
        final_cost=float(cost), converged=converged, knot_sampled=sampled,
    )


def _fill_unsampled(knots, sampled):
    """Give knots no observation constrains the value of the nearest sampled knot."""
    if not sampled.any():
        return knots
    idx = np.flatnonzero(sampled)
    nearest = idx[np.argmin(np.abs(np.arange(len(knots))[:, None] - idx[None, :]), axis=1)]
    return np.where(sampled, knots, knots[nearest])


def _rescale_gains(geo, layout, p, fidx, intensity):
    """Set each free log-gain (and the knot level) to the median log-ratio of observed to predicted."""
    k, gamma, log_g, knots = layout.unpack(p)
    brdf_values = (geo.knot_weights @ knots) if knots is not None else np.full(len(geo.theta), 1 / np.pi)
    base = _linear_signal(geo, k, 1.0, brdf_values)
    ok = (intensity > 0) & (base > 0)
    target = gamma * np.log(np.maximum(intensity, 1e-300) / GRAY) - np.log(np.maximum(base, 1e-300))
    p = p.copy()
    for slot, frame_i in enumerate(layout.free_gains):
        sel = ok & (fidx == frame_i)
        if sel.any():
            p[layout.gain_slice.start + slot] = np.median(target[sel])
    if layout.ref is not None:
        # The reference gain is pinned, so its frame's level goes into the knots.
        sel = ok & (fidx == layout.ref)
        if sel.any():
            p[layout.knot_slice] *= np.exp(np.median(target[sel]))
    return p


@dataclass(frozen=True)
class ModelEvaluation:
    residuals: np.ndarray  # gray levels, observed - predicted
    mean: float
    std: float
    histogram: tuple  # (counts, bin_edges) at 1-level bins
    alpha_bins: np.ndarray  # bin edges, radians
    spread_error: np.ndarray  # mean relative prediction error per bin (NaN if unsampled)
    unsampled: np.ndarray  # True where no observation falls in the bin
    max_alpha: float  # largest sampled off-axis angle


def evaluate_model(model, observations, frames=None, alpha_bin_deg=5.0):
    """Residuals of ``model`` on ``observations`` plus a spread-error profile over alpha.

    ``frames`` lists the frame id of each entry of ``model.gains`` (defaults
    to 0..n-1).
    """
    obs = observations
    if frames is None:
        frames = np.arange(len(model.gains))
    frames = np.asarray(frames)
    fidx = np.searchsorted(frames, obs.frame)
    if np.any(fidx >= len(frames)) or np.any(frames[np.minimum(fidx, len(frames) - 1)] != obs.frame):
        raise CalibrationError("observations reference frames the model has no gain for")
    geo = _Geometry(obs)
    brdf_values = model.brdf(geo.theta)
    gains = np.asarray(model.gains)[fidx]
    signal = model.sigma_o * _linear_signal(geo, model.k, gains, brdf_values)
    pred = GRAY * np.maximum(signal, 0.0) ** (1.0 / model.gamma)
    res = obs.intensity - pred
    lo = np.floor(res.min()) if len(res) else 0.0
    hi = np.ceil(res.max()) + 1 if len(res) else 1.0
    hist = np.histogram(res, bins=np.arange(lo, hi + 1))
    edges = np.radians(np.arange(0.0, 90.0 + alpha_bin_deg, alpha_bin_deg))
    which = np.digitize(geo.alpha, edges) - 1
    rel = np.where(pred > 0, res / np.where(pred > 0, pred, 1.0), np.nan)
    n_bins = len(edges) - 1
    prof = np.full(n_bins, np.nan)
    unsampled = np.ones(n_bins, dtype=bool)
    for b in range(n_bins):
        sel = which == b
        if sel.any():
            prof[b] = np.nanmean(rel[sel])
            unsampled[b] = False
    return ModelEvaluation(
        residuals=res, mean=float(res.mean()), std=float(res.std()), histogram=hist,
        alpha_bins=edges, spread_error=prof, unsampled=unsampled,
        max_alpha=float(geo.alpha.max()) if len(res) else 0.0,
    )


__all__ = [
    "CalibOptions", "CalibProblem", "CalibResult", "ModelEvaluation",
    "solve_calibration", "evaluate_model", "plane_normals", "KNOT_ANGLES",
]
