"""Discretised depth energy: robust photometric data term plus edge-aware smoothness.

All quantities live on the compact vector of valid pixels. Normals come from
central differences of the back-projected points (one-sided at mask borders
and, optionally, across intensity edges), so the gradient below accounts for
every pixel's influence on its neighbours' normals.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from scipy import sparse

from ..errors import DomainError
from ..photomodel import GRAY, Lambertian


class Parameterization(str, Enum):
    INV_Z = "1/z"
    EUCLIDEAN = "d"
    INV_EUCLIDEAN = "1/d"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"1/z": cls.INV_Z, "inv_z": cls.INV_Z, "inverse_z": cls.INV_Z,
                   "d": cls.EUCLIDEAN, "euclidean": cls.EUCLIDEAN,
                   "1/d": cls.INV_EUCLIDEAN, "inv_d": cls.INV_EUCLIDEAN,
                   "inverse_euclidean": cls.INV_EUCLIDEAN}
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise DomainError(f"unknown depth parameterization {value!r}") from None


def xi_to_distance(xi, ray_z, param):
    """Euclidean distance and its derivative with respect to ``xi``."""
    if param is Parameterization.EUCLIDEAN:
        return xi, np.ones_like(xi)
    if param is Parameterization.INV_EUCLIDEAN:
        d = 1.0 / xi
        return d, -d * d
    d = 1.0 / (xi * ray_z)
    return d, -d / xi


def distance_to_xi(d, ray_z, param):
    if param is Parameterization.EUCLIDEAN:
        return np.array(d, dtype=float, copy=True)
    if param is Parameterization.INV_EUCLIDEAN:
        return 1.0 / d
    return 1.0 / (d * ray_z)


def huber(r, delta):
    """Huber function: r^2 / 2 inside ``delta``, linear outside; and its derivative."""
    a = np.abs(r)
    inside = a <= delta
    value = np.where(inside, 0.5 * r * r, delta * (a - 0.5 * delta))
    deriv = np.where(inside, r, delta * np.sign(r))
    return value, deriv


def huber_norm(s, eps):
    """Huber norm ``||x||_eps`` of a magnitude ``s`` and its slope d/ds."""
    inside = s <= eps
    value = np.where(inside, s * s / (2 * eps), s - 0.5 * eps)
    slope = np.where(inside, s / eps, 1.0)
    return value, slope


def edge_weights(image, mask, a=3.0, b=1.5):
    """``exp(-a * |grad I|^b)`` with the gradient magnitude scaled to [0, 1]."""
    img = np.where(mask, image, 0.0)
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    # gradients across the mask border are not image edges
    border = mask & ~_eroded(mask)
    mag[border | ~mask] = 0.0
    top = mag.max()
    if top > 0:
        mag = mag / top
    return np.exp(-a * mag**b)


def _eroded(mask):
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


def _neighbour(index_grid, mask, dy, dx):
    """Compact index of the (dy, dx) neighbour of each valid pixel, -1 if invalid."""
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    r2, c2 = rows + dy, cols + dx
    inside = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
    out = np.full(len(rows), -1)
    out[inside] = index_grid[r2[inside], c2[inside]]
    return out


@dataclass
class Stencils:
    """Neighbour tables on the compact pixel vector."""

    right: np.ndarray
    left: np.ndarray
    down: np.ndarray
    up: np.ndarray

    @classmethod
    def from_mask(cls, mask):
        grid = np.full(mask.shape, -1)
        grid[mask] = np.arange(int(mask.sum()))
        return cls(_neighbour(grid, mask, 0, 1), _neighbour(grid, mask, 0, -1),
                   _neighbour(grid, mask, 1, 0), _neighbour(grid, mask, -1, 0))

    def cut_at_edges(self, image, ratio=4.0, floor=8.0 / 255.0):
        """Copy without the links that cross an intensity edge.

        A link is an edge when its intensity jump exceeds ``floor`` and is
        ``ratio`` times larger than the jumps of the adjacent links on the
        same axis. Smooth shading never qualifies; a depth step does.
        """
        image = np.asarray(image, dtype=float)
        out = {}
        for fwd, bwd in (("right", "left"), ("down", "up")):
            nxt = getattr(self, fwd)
            prv = getattr(self, bwd)
            has = nxt >= 0
            jump = np.zeros(len(image))
            jump[has] = np.abs(image[nxt[has]] - image[has])
            before = np.where(prv >= 0, jump[np.maximum(prv, 0)], 0.0)
            after = np.where(has, jump[np.maximum(nxt, 0)], 0.0)
            cut = has & (jump > floor) & (jump > ratio * np.maximum(before, after))
            new_nxt = np.where(cut, -1, nxt)
            new_prv = prv.copy()
            new_prv[nxt[cut]] = -1
            out[fwd], out[bwd] = new_nxt, new_prv
        return Stencils(**out)

    def tangent_pairs(self):
        """(plus, minus) index pairs per axis for central/one-sided differences."""
        own = np.arange(len(self.right))
        ax = np.where(self.right >= 0, self.right, own)
        bx = np.where(self.left >= 0, self.left, own)
        ay = np.where(self.down >= 0, self.down, own)
        by = np.where(self.up >= 0, self.up, own)
        return ax, bx, ay, by


def normals_from_points(points, stencils):
    """Unit normals facing the camera and a validity flag, per compact pixel."""
    ax, bx, ay, by = stencils.tangent_pairs()
    tx = points[ax] - points[bx]
    ty = points[ay] - points[by]
    m = np.cross(ty, tx)
    norm = np.linalg.norm(m, axis=-1)
    ok = (ax != bx) & (ay != by) & (norm > 0)
    n = m / np.where(norm > 0, norm, 1.0)[:, None]
    return n, ok, (tx, ty, m, norm, ax, bx, ay, by)


def _scatter(target, index, values):
    for c in range(values.shape[1]):
        target[:, c] += np.bincount(index, values[:, c], minlength=len(target))


class _Forward:
    """Quantities shared by the energy, its gradient and its linearisation."""

    __slots__ = ("d", "dd", "n", "n_ok", "geom", "front", "pred", "resid", "q", "dq")


class DepthEnergy:
    """Energy ``sum_u rho(I - I_hat) + lam * g(u) ||D xi(u)||_eps`` over a pixel mask.

    ``config`` provides ``parameterization``, ``order``, ``lam``,
    ``huber_eps``, ``data_huber_scale``, ``edge_weighting``, ``edge_a``,
    ``edge_b`` and ``edge_aware_normals``.
    """

    def __init__(self, image, mask, rays, model, t, config):
        self.config = config
        self.param = Parameterization.parse(config.parameterization)
        if config.order not in (1, 2):
            raise DomainError(f"regularizer order must be 1 or 2, got {config.order}")
        self.mask = np.asarray(mask, dtype=bool)
        if not self.mask.any():
            raise DomainError("no valid pixels")
        self.shape = self.mask.shape
        self.rays = np.asarray(rays, dtype=float)[self.mask]
        self.ray_z = self.rays[:, 2]
        self.image = np.asarray(image, dtype=float)[self.mask]
        self.stencils = Stencils.from_mask(self.mask)
        if getattr(config, "edge_aware_normals", False):
            self.normal_stencils = self.stencils.cut_at_edges(self.image)
        else:
            self.normal_stencils = self.stencils
        self.model = model
        self.brdf = model.brdf
        self.inv_gamma = 1.0 / model.gamma
        self.light = model.sigma_o * self.ray_z**model.k * model.gain(t)
        if config.edge_weighting:
            g = edge_weights(image, self.mask, config.edge_a, config.edge_b)
            self.weights = g[self.mask]
        else:
            self.weights = np.ones(len(self.image))
        self._reg_ops = self._difference_operators()

    @property
    def size(self):
        return len(self.image)

    # -- helpers -----------------------------------------------------------
    def to_grid(self, values, fill=0.0):
        out = np.full(self.shape + np.shape(values)[1:], fill, dtype=float)
        out[self.mask] = values
        return out

    def distance(self, xi):
        return xi_to_distance(xi, self.ray_z, self.param)[0]

    def _shading(self, cos_t):
        """``f_r(theta) cos(theta)`` and its derivative in ``cos(theta)``."""
        c = np.clip(cos_t, 0.0, 1.0)
        if isinstance(self.brdf, Lambertian):
            fr = self.brdf.albedo / np.pi
            return fr * c, np.full_like(c, fr)
        theta = np.arccos(c)
        fr = self.brdf(theta)
        sin_t = np.maximum(np.sin(theta), 1e-12)
        return fr * c, fr - c * self.brdf.derivative(theta) / sin_t

    def _forward(self, xi):
        f = _Forward()
        f.d, f.dd = xi_to_distance(xi, self.ray_z, self.param)
        pts = f.d[:, None] * self.rays
        f.n, f.n_ok, f.geom = normals_from_points(pts, self.normal_stencils)
        cos_t = -np.sum(self.rays * f.n, axis=-1)
        f.q, f.dq = self._shading(cos_t)
        lin = self.light * f.q / (f.d * f.d)
        f.front = f.n_ok & (cos_t > 0) & (lin > 0)
        f.pred = np.where(f.front, np.maximum(lin, 0.0) ** self.inv_gamma, 0.0)
        f.resid = GRAY * (self.image - f.pred)
        return f

    def _prediction_partials(self, f):
        """d pred / d distance (own pixel) and d pred / d cos(theta), per pixel."""
        safe_d = np.where(f.front, f.d, 1.0)
        safe_q = np.where(f.front, f.q, 1.0)
        p_direct = np.where(f.front, f.pred * (-2.0 * self.inv_gamma) / safe_d, 0.0)
        p_cos = np.where(f.front, f.pred * self.inv_gamma * f.dq / safe_q, 0.0)
        # cos(theta) = -ray . n with n = m / |m|: derivative of cos with respect to m
        tx, ty, m, mnorm, *_ = f.geom
        proj = -self.rays + np.sum(self.rays * f.n, axis=-1, keepdims=True) * f.n
        g_m = proj / np.where(mnorm > 0, mnorm, 1.0)[:, None]
        return p_direct, p_cos, np.cross(g_m, ty), np.cross(tx, g_m)

    # -- terms -------------------------------------------------------------
    def data_terms(self, xi, with_grad=True):
        """Per-pixel robust photometric cost, its gradient, prediction and normals."""
        f = self._forward(xi)
        cost, psi = huber(f.resid, self.config.data_huber_scale)
        cost = np.where(f.n_ok, cost, 0.0)
        if not with_grad:
            return cost, None, f.pred, f.n, f.n_ok
        dc_dpred = np.where(f.n_ok, -GRAY * psi, 0.0)
        p_direct, p_cos, dc_dtx, dc_dty = self._prediction_partials(f)
        g_tx = (dc_dpred * p_cos)[:, None] * dc_dtx
        g_ty = (dc_dpred * p_cos)[:, None] * dc_dty
        _, _, _, _, ax, bx, ay, by = f.geom
        g_pts = np.zeros_like(self.rays)
        _scatter(g_pts, ax, g_tx)
        _scatter(g_pts, bx, -g_tx)
        _scatter(g_pts, ay, g_ty)
        _scatter(g_pts, by, -g_ty)
        g_d = np.sum(g_pts * self.rays, axis=-1) + dc_dpred * p_direct
        return cost, g_d * f.dd, f.pred, f.n, f.n_ok

    def _difference_operators(self):
        """Sparse forward-difference (order 1) or 5-point Laplacian (order 2) rows.

        Differences that would leave the mask are dropped (Neumann boundary).
        """
        st = self.stencils
        n_px = self.size
        own = np.arange(n_px)
        if self.config.order == 1:
            ops = []
            for nb in (st.right, st.down):
                has = nb >= 0
                r = own[has]
                ops.append(sparse.csr_matrix(
                    (np.concatenate([np.ones(len(r)), -np.ones(len(r))]),
                     (np.concatenate([r, r]), np.concatenate([nb[has], r]))), shape=(n_px, n_px)))
            return ops
        rows, cols, vals = [], [], []
        for a, b in ((st.right, st.left), (st.down, st.up)):
            has = (a >= 0) & (b >= 0)
            r = own[has]
            rows += [r, r, r]
            cols += [a[has], b[has], r]
            vals += [np.ones(len(r)), np.ones(len(r)), np.full(len(r), -2.0)]
        lap = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(n_px, n_px))
        return [lap]

    def regularizer_terms(self, xi, with_grad=True):
        """Per-pixel ``g(u) ||D xi(u)||_eps`` and its gradient (without lambda)."""
        eps = self.config.huber_eps
        diffs = [op @ xi for op in self._reg_ops]
        s = np.sqrt(sum(v * v for v in diffs))
        val, slope = huber_norm(s, eps)
        cost = self.weights * val
        if not with_grad:
            return cost, None
        coef = self.weights * np.where(s > eps, 1.0 / np.where(s > eps, s, 1.0), 1.0 / eps)
        grad = sum(op.T @ (coef * v) for op, v in zip(self._reg_ops, diffs))
        return cost, grad

    def linearize(self, xi):
        """Weighted least-squares model of the energy around ``xi``.

        Returns ``(jac, resid, weights)``: stacked residual rows (photometric
        rows ``255 (I_hat - I)`` first, then the difference operator rows)
        with their Jacobian, such that the energy gradient equals
        ``jac.T @ (weights * resid)``. Weights are the iteratively reweighted
        Huber weights; the photometric rows use the Gauss-Newton
        approximation.
        """
        n_px = self.size
        cfg = self.config
        own = np.arange(n_px)
        f = self._forward(xi)
        delta = cfg.data_huber_scale
        w_data = np.where(f.n_ok, np.minimum(1.0, delta / np.maximum(np.abs(f.resid), 1e-300)), 0.0)
        p_direct, p_cos, dc_dtx, dc_dty = self._prediction_partials(f)
        _, _, _, _, ax, bx, ay, by = f.geom
        j_cos = GRAY * p_cos
        rows = [own]
        cols = [own]
        vals = [GRAY * p_direct * f.dd]
        for col, grad_t, sign in ((ax, dc_dtx, 1.0), (bx, dc_dtx, -1.0),
                                  (ay, dc_dty, 1.0), (by, dc_dty, -1.0)):
            rows.append(own)
            cols.append(col)
            vals.append(sign * j_cos * np.sum(grad_t * self.rays[col], axis=-1) * f.dd[col])
        jac_data = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_px, n_px))

        diffs = [op @ xi for op in self._reg_ops]
        s = np.sqrt(sum(v * v for v in diffs))
        w_reg = cfg.lam * self.weights / np.maximum(s, cfg.huber_eps)
        jac = sparse.vstack([jac_data] + self._reg_ops).tocsr()
        resid = np.concatenate([-f.resid] + diffs)
        weights = np.concatenate([w_data] + [w_reg] * len(diffs))
        return jac, resid, weights

    def pixel_costs(self, xi):
        """Per-pixel contribution to the energy; sums to ``self(xi, False)``."""
        c, *_ = self.data_terms(xi, with_grad=False)
        r, _ = self.regularizer_terms(xi, with_grad=False)
        return c + self.config.lam * r

    def __call__(self, xi, with_grad=True):
        """Total energy and (optionally) its gradient with respect to ``xi``."""
        c, gc, *_ = self.data_terms(xi, with_grad)
        r, gr = self.regularizer_terms(xi, with_grad)
        lam = self.config.lam
        energy = float(np.sum(c) + lam * np.sum(r))
        if not with_grad:
            return energy
        return energy, gc + lam * gr
