# helpers/geodesic_flow.py
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from helpers.field_classes import (AdmissibilityReport, DiffeoField, DomainGrid, FieldValidationError,
                                   GeodesicError, MetricField, collar_identity_residual)
from helpers.metric_core import c2_surrogate

# Get a logger for this specific module
log = logging.getLogger(__name__)

TRAPPED_FACTOR = 10.0
BISECTION_REL_TOL = 1e-10
ANGLE_STEP = 1e-3


@dataclass
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray


@dataclass
class GeodesicPath:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    exit_time: float = math.nan

    @property
    def exit_point(self) -> np.ndarray:
        return self.x[-1]


@dataclass
class ScatteringRecord:
    """Entry (x, ξ), exit (x⁺, ξ⁺) and length τ⁺ for a batch of rays (leading axis = ray)."""
    entry_x: np.ndarray
    entry_xi: np.ndarray
    exit_x: np.ndarray
    exit_xi: np.ndarray
    length: np.ndarray

    @property
    def exit_direction(self) -> np.ndarray:
        return self.exit_xi / np.linalg.norm(self.exit_xi, axis=-1, keepdims=True)


def reverse_phase_point(p: PhasePoint) -> PhasePoint:
    """(x, ξ) -> (x, −ξ): the flow from here retraces the path backwards."""
    return PhasePoint(np.asarray(p.x, dtype=float).copy(), -np.asarray(p.xi, dtype=float))


# --- Metric evaluation off the grid ---

class MetricInterpolant:
    """
    Smooth evaluation of g^{-1}, ∂g^{-1} and g at arbitrary points.
    2-D uses bicubic splines, 3-D trilinear values with differentiated arrays.
    Outside the grid box the metric is the identity.
    """

    def __init__(self, m: MetricField):
        self.grid = grid = m.grid
        self.dim = d = grid.dim
        self.lo = np.asarray(grid.origin)
        self.hi = np.asarray(grid.upper)
        ginv = np.linalg.inv(m.g)
        self._pairs = [(i, j) for i in range(d) for j in range(i, d)]

        if d == 2:
            ax, ay = grid.axes
            self._inv = {p: RectBivariateSpline(ax, ay, ginv[..., p[0], p[1]], kx=3, ky=3) for p in self._pairs}
            self._g = {p: RectBivariateSpline(ax, ay, m.g[..., p[0], p[1]], kx=3, ky=3) for p in self._pairs}
        else:
            def _rgi(values):
                return RegularGridInterpolator(grid.axes, values, method="linear", bounds_error=False, fill_value=None)

            self._inv = {p: _rgi(ginv[..., p[0], p[1]]) for p in self._pairs}
            self._dinv = {
                (a,) + p: _rgi(np.gradient(ginv[..., p[0], p[1]], grid.spacing[a], axis=a, edge_order=2))
                for a in range(d) for p in self._pairs
            }
            self._g = {p: _rgi(m.g[..., p[0], p[1]]) for p in self._pairs}

    def _inside(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def inverse_and_gradient(self, x: np.ndarray):
        """x (N, d) -> g^{-1} (N, d, d), dginv (N, d, d, d) with dginv[:, a, i, j] = ∂_a g^{ij}."""
        x = np.atleast_2d(x)
        n, d = x.shape
        ginv = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        dginv = np.zeros((n, d, d, d))
        inside = self._inside(x)
        if not np.any(inside):
            return ginv, dginv
        xi = x[inside]
        for (i, j) in self._pairs:
            if d == 2:
                spline = self._inv[(i, j)]
                val = spline.ev(xi[:, 0], xi[:, 1])
                grads = [spline.ev(xi[:, 0], xi[:, 1], dx=1), spline.ev(xi[:, 0], xi[:, 1], dy=1)]
            else:
                val = self._inv[(i, j)](xi)
                grads = [self._dinv[(a, i, j)](xi) for a in range(d)]
            ginv[inside, i, j] = val
            ginv[inside, j, i] = val
            for a in range(d):
                dginv[inside, a, i, j] = grads[a]
                dginv[inside, a, j, i] = grads[a]
        return ginv, dginv

    def metric(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        n, d = x.shape
        g = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        inside = self._inside(x)
        if not np.any(inside):
            return g
        xi = x[inside]
        for (i, j) in self._pairs:
            val = self._g[(i, j)].ev(xi[:, 0], xi[:, 1]) if d == 2 else self._g[(i, j)](xi)
            g[inside, i, j] = val
            g[inside, j, i] = val
        return g

    def sqrt_det(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.metric(x)))


# --- Hamiltonian flow ---

def hamilton_rhs(interp: MetricInterpolant, x: np.ndarray, xi: np.ndarray):
    """ẋ = g^{-1}ξ, ξ̇_k = −½ ∂_k g^{ij} ξ_i ξ_j."""
    ginv, dginv = interp.inverse_and_gradient(x)
    xdot = np.einsum("nij,nj->ni", ginv, xi)
    xidot = -0.5 * np.einsum("nkij,ni,nj->nk", dginv, xi, xi)
    return xdot, xidot


def rk4_step(interp: MetricInterpolant, x: np.ndarray, xi: np.ndarray, h, with_stages: bool = False):
    """
    One classical RK4 step for a batch of phase points; `h` is a scalar or one step per ray.
    With `with_stages` also returns stage positions (4, N, d) and stage velocities (4, N, d).
    """
    h = np.asarray(h, dtype=float)
    hh = h[..., None] if h.ndim else h
    k1x, k1p = hamilton_rhs(interp, x, xi)
    x2, p2 = x + 0.5 * hh * k1x, xi + 0.5 * hh * k1p
    k2x, k2p = hamilton_rhs(interp, x2, p2)
    x3, p3 = x + 0.5 * hh * k2x, xi + 0.5 * hh * k2p
    k3x, k3p = hamilton_rhs(interp, x3, p3)
    x4, p4 = x + hh * k3x, xi + hh * k3p
    k4x, k4p = hamilton_rhs(interp, x4, p4)
    x_new = x + hh / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    xi_new = xi + hh / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    if not with_stages:
        return x_new, xi_new
    return x_new, xi_new, np.stack([x, x2, x3, x4]), np.stack([k1x, k2x, k3x, k4x])


def hamiltonian(interp: MetricInterpolant, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    ginv, _ = interp.inverse_and_gradient(x)
    return 0.5 * np.einsum("nij,ni,nj->n", ginv, xi, xi)


def flow_fixed_time(interp: MetricInterpolant, x: np.ndarray, xi: np.ndarray, t, step: float):
    """Flow a batch for time t (scalar or per ray) with equal steps no longer than `step`."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    n_steps = max(1, int(np.ceil(np.max(np.abs(t)) / step))) if np.any(t) else 0
    if n_steps == 0:
        return x.copy(), xi.copy()
    h = t / n_steps
    for _ in range(n_steps):
        x, xi = rk4_step(interp, x, xi, h)
    return x, xi


@dataclass
class ExitRecord:
    """Result of flowing a batch of rays to the boundary of a level set."""
    exit_time: np.ndarray
    exit_x: np.ndarray
    exit_xi: np.ndarray
    stage_ray: list = field(default_factory=list)
    stage_x: list = field(default_factory=list)
    stage_v: list = field(default_factory=list)
    stage_w: list = field(default_factory=list)


def flow_to_exit(interp: MetricInterpolant, level: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                 xi0: np.ndarray, step: float, max_time: float, record_stages: bool = False,
                 keep_stage: Callable[[np.ndarray], np.ndarray] = None) -> ExitRecord:
    """
    Integrate every ray until level(x) > 0, locating the crossing by bisection on the last sub-step.

    With `record_stages` the RK4 stage positions and velocities are kept with weights
    h/6, h/3, h/3, h/6 so that Σ w f(x_s) integrates f along the ray.
    """
    x = np.array(np.atleast_2d(x0), dtype=float)
    xi = np.array(np.atleast_2d(xi0), dtype=float)
    n = x.shape[0]
    rec = ExitRecord(np.full(n, np.nan), np.full_like(x, np.nan), np.full_like(xi, np.nan))
    active = np.arange(n)
    t = 0.0
    stage_weights = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0

    def _record(ids, stages_x, stages_v, h):
        if not record_stages:
            return
        w = np.broadcast_to(np.asarray(h, dtype=float), (len(ids),))
        for s in range(4):
            pts = stages_x[s]
            keep = np.ones(len(ids), dtype=bool) if keep_stage is None else keep_stage(pts)
            if not np.any(keep):
                continue
            rec.stage_ray.append(ids[keep])
            rec.stage_x.append(pts[keep])
            rec.stage_v.append(stages_v[s][keep])
            rec.stage_w.append(stage_weights[s] * w[keep])

    while active.size:
        if t > max_time:
            raise GeodesicError(f"{active.size} ray(s) still inside after time {max_time:.3f}; trapped")
        xa, pa = x[active], xi[active]
        x_new, p_new, sx, sv = rk4_step(interp, xa, pa, step, with_stages=True)
        crossed = level(x_new) > 0.0

        stay = ~crossed
        if np.any(stay):
            _record(active[stay], sx[:, stay], sv[:, stay], step)
            x[active[stay]] = x_new[stay]
            xi[active[stay]] = p_new[stay]

        if np.any(crossed):
            ids = active[crossed]
            xc, pc = xa[crossed], pa[crossed]
            lo = np.zeros(ids.size)
            hi = np.full(ids.size, step)
            while np.max(hi - lo) > BISECTION_REL_TOL * step:
                mid = 0.5 * (lo + hi)
                xm, _ = rk4_step(interp, xc, pc, mid)
                out = level(xm) > 0.0
                hi = np.where(out, mid, hi)
                lo = np.where(out, lo, mid)
            sigma = 0.5 * (lo + hi)
            xe, pe, sxe, sve = rk4_step(interp, xc, pc, sigma, with_stages=True)
            _record(ids, sxe, sve, sigma)
            rec.exit_time[ids] = t + sigma
            rec.exit_x[ids] = xe
            rec.exit_xi[ids] = pe

        active = active[stay]
        t += step
    return rec


def _domain_level(grid: DomainGrid, enlarge: float = 0.0):
    return lambda pts: grid.signed_distance(pts, enlarge)


def _check_unit(interp: MetricInterpolant, x: np.ndarray, xi: np.ndarray, tol: float = 1e-6):
    norm2 = 2.0 * hamiltonian(interp, x, xi)
    if np.any(np.abs(norm2 - 1.0) > tol):
        raise GeodesicError(f"initial covector is not unit length (|xi|^2 = {norm2})")


def integrate_geodesic(m: MetricField, p0: PhasePoint, step: float, enlarge: float = 0.0,
                       interp: Optional[MetricInterpolant] = None, require_unit: bool = True) -> GeodesicPath:
    """Trace one geodesic until it leaves the (enlarged) domain, sampling every step."""
    interp = interp or MetricInterpolant(m)
    grid = m.grid
    level = _domain_level(grid, enlarge)
    x = np.atleast_2d(np.asarray(p0.x, dtype=float))
    xi = np.atleast_2d(np.asarray(p0.xi, dtype=float))
    if require_unit:
        _check_unit(interp, x, xi)
    max_time = TRAPPED_FACTOR * (grid.diameter + 2.0 * enlarge)

    times, xs, xis = [0.0], [x[0].copy()], [xi[0].copy()]
    t = 0.0
    while True:
        if t > max_time:
            raise GeodesicError(f"geodesic from {p0.x} still inside after time {max_time:.3f}; trapped")
        x_new, xi_new = rk4_step(interp, x, xi, step)
        if level(x_new)[0] > 0.0:
            rec = flow_to_exit(interp, level, x, xi, step, step * 2.0)
            times.append(t + float(rec.exit_time[0]))
            xs.append(rec.exit_x[0])
            xis.append(rec.exit_xi[0])
            break
        x, xi = x_new, xi_new
        t += step
        times.append(t)
        xs.append(x[0].copy())
        xis.append(xi[0].copy())
    return GeodesicPath(np.asarray(times), np.asarray(xs), np.asarray(xis), exit_time=times[-1])


def exit_and_scatter(m: MetricField, x: np.ndarray, xi: np.ndarray, step: float, enlarge: float = 0.0,
                     interp: Optional[MetricInterpolant] = None) -> ScatteringRecord:
    """Scattering data for rays entering at x with inward covector xi (single ray or batch)."""
    interp = interp or MetricInterpolant(m)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    inward = -m.grid.outward_normal(x)
    if np.any(np.einsum("ni,ni->n", xi, inward) <= 0.0):
        raise GeodesicError("exit_and_scatter needs inward-pointing covectors")
    max_time = TRAPPED_FACTOR * (m.grid.diameter + 2.0 * enlarge)
    rec = flow_to_exit(interp, _domain_level(m.grid, enlarge), x, xi, step, max_time)
    return ScatteringRecord(x, xi, rec.exit_x, rec.exit_xi, rec.exit_time)


def flow(m: MetricField, p: PhasePoint, t: float, step: float,
         interp: Optional[MetricInterpolant] = None) -> PhasePoint:
    interp = interp or MetricInterpolant(m)
    x, xi = flow_fixed_time(interp, p.x, p.xi, t, step)
    return PhasePoint(x[0], xi[0])


# --- Polar coordinates about an external point ---

def direction_from_angles(angles) -> np.ndarray:
    """(…, 1) angle -> 2-D unit vectors, (…, 2) (polar, azimuth) -> 3-D unit vectors."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] == 1:
        a = angles[..., 0]
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    th, ph = angles[..., 0], angles[..., 1]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)


def angles_from_direction(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    if v.shape[-1] == 2:
        return np.arctan2(v[..., 1], v[..., 0])[..., None]
    return np.stack([np.arccos(np.clip(v[..., 2], -1.0, 1.0)), np.arctan2(v[..., 1], v[..., 0])], axis=-1)


def exp_map(m: MetricField, y, r, angles, step: float, interp: Optional[MetricInterpolant] = None,
            with_velocity: bool = False):
    """
    exp_y(rθ) for a batch: y is a point where g = e, θ given by `angles` (see direction_from_angles).
    r and angles broadcast against each other.
    """
    interp = interp or MetricInterpolant(m)
    y = np.asarray(y, dtype=float)
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    r = np.broadcast_to(np.asarray(r, dtype=float), angles.shape[:1])
    theta = direction_from_angles(angles)
    x0 = np.broadcast_to(y, theta.shape).copy()
    x, xi = flow_fixed_time(interp, x0, theta, r, step)
    if not with_velocity:
        return x
    ginv, _ = interp.inverse_and_gradient(x)
    return x, np.einsum("nij,nj->ni", ginv, xi)


@dataclass
class PolarSample:
    """Geodesic polar coordinates of a batch of points about y, with arrival covector and α_g."""
    r: np.ndarray
    angles: np.ndarray
    xi: np.ndarray
    alpha: np.ndarray
    jac_det: np.ndarray
    residual: float


def _polar_jacobian(interp, y, r, ang, step):
    n, k = ang.shape
    theta = direction_from_angles(ang)
    pos, xi = flow_fixed_time(interp, np.broadcast_to(y, theta.shape).copy(), theta, r, step)
    ginv, _ = interp.inverse_and_gradient(pos)
    vel = np.einsum("nij,nj->ni", ginv, xi)
    cols = [vel]
    for a in range(k):
        dang = np.zeros(k)
        dang[a] = ANGLE_STEP
        plus, _ = flow_fixed_time(interp, np.broadcast_to(y, theta.shape).copy(),
                                  direction_from_angles(ang + dang), r, step)
        minus, _ = flow_fixed_time(interp, np.broadcast_to(y, theta.shape).copy(),
                                   direction_from_angles(ang - dang), r, step)
        cols.append((plus - minus) / (2.0 * ANGLE_STEP))
    return pos, xi, np.stack(cols, axis=-1)


def polar_coords_batch(m: MetricField, y, x, step: float, interp: Optional[MetricInterpolant] = None,
                       tol: float = 1e-10, max_iter: int = 20) -> PolarSample:
    """
    Invert exp_y for every row of x by Newton iteration on (r, angles), starting from the
    Euclidean polar coordinates. The finite-difference Jacobian of the last iterate gives α_g.
    """
    interp = interp or MetricInterpolant(m)
    y = np.asarray(y, dtype=float)
    target = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(target - y, axis=-1)
    if np.any(r <= 0.0):
        raise GeodesicError("polar coordinates are undefined at the centre")
    ang = np.atleast_2d(angles_from_direction(target - y))
    for it in range(max_iter):
        pos, xi, jac = _polar_jacobian(interp, y, r, ang, step)
        res = pos - target
        err = float(np.max(np.linalg.norm(res, axis=-1)))
        if err < tol:
            break
        delta = np.linalg.solve(jac, res[..., None])[..., 0]
        r = r - delta[:, 0]
        ang = ang - delta[:, 1:]
        log.debug(f"polar Newton iteration {it}: max residual {err:.3e}")
    else:
        raise GeodesicError(f"polar coordinates about {y} did not converge (residual {err:.3e})")
    det = np.linalg.det(jac)
    alpha = (interp.sqrt_det(pos) * np.abs(det)) ** 2
    return PolarSample(r, ang, xi, alpha, det, err)


def polar_coords(m: MetricField, y, x, step: float, interp: Optional[MetricInterpolant] = None,
                 tol: float = 1e-10, max_iter: int = 20):
    """Invert exp_y at one point. Returns (r, angles)."""
    sample = polar_coords_batch(m, y, np.asarray(x, dtype=float)[None, :], step, interp, tol, max_iter)
    return float(sample.r[0]), sample.angles[0]


def volume_element_polar(m: MetricField, y, r, angles, step: float,
                         interp: Optional[MetricInterpolant] = None) -> np.ndarray:
    """
    α_g(r, θ) with dV_g = α_g^{1/2} dr dθ, i.e. α_g = (√|g| |det ∂x/∂(r, θ)|)².
    Angular derivatives by central differences with step 1e-3.
    """
    interp = interp or MetricInterpolant(m)
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    r = np.broadcast_to(np.asarray(r, dtype=float), angles.shape[:1])
    n, k = angles.shape
    pos, vel = exp_map(m, y, r, angles, step, interp, with_velocity=True)
    cols = [vel]
    for a in range(k):
        dang = np.zeros(k)
        dang[a] = ANGLE_STEP
        plus = exp_map(m, y, r, angles + dang, step, interp)
        minus = exp_map(m, y, r, angles - dang, step, interp)
        cols.append((plus - minus) / (2.0 * ANGLE_STEP))
    det = np.linalg.det(np.stack(cols, axis=-1))
    if np.any(np.abs(det) < 1e-14):
        raise GeodesicError("degenerate polar Jacobian (conjugate point or r = 0)")
    return (interp.sqrt_det(pos) * np.abs(det)) ** 2


# --- Semi-geodesic normal form ---

def semi_geodesic_map(m: MetricField, substeps: int = 4, interp: Optional[MetricInterpolant] = None) -> DiffeoField:
    """
    ψ(z, x_n): follow the geodesic leaving (z, c_n − ϱ) with covector e_n for time x_n − (c_n − ϱ).
    ϱ clears the grid box by two spacings, where the metric is Euclidean.
    """
    interp = interp or MetricInterpolant(m)
    grid = m.grid
    d = grid.dim
    rho = float(np.max(grid.half_extents)) + 2.0 * max(grid.spacing)
    mid_n = 0.5 * (grid.origin[-1] + grid.upper[-1])
    start_n = mid_n - rho

    # 1. One ray per transverse node
    transverse = np.meshgrid(*grid.axes[:-1], indexing="ij")
    z = np.stack([c.ravel() for c in transverse], axis=-1)
    n_rays = z.shape[0]
    x = np.concatenate([z, np.full((n_rays, 1), start_n)], axis=1)
    xi = np.zeros_like(x)
    xi[:, -1] = 1.0

    # 2. March through the node heights, recording position and velocity
    heights = grid.axes[-1]
    psi = np.empty((n_rays, heights.size, d))
    vel = np.empty((n_rays, heights.size, d))
    t_prev = 0.0
    for i, hn in enumerate(heights):
        t_target = hn - start_n
        dt = t_target - t_prev
        n_sub = substeps if i else max(substeps, int(np.ceil(dt / grid.spacing[-1])) * substeps)
        for _ in range(n_sub):
            x, xi = rk4_step(interp, x, xi, dt / n_sub)
        ginv, _ = interp.inverse_and_gradient(x)
        psi[:, i] = x
        vel[:, i] = np.einsum("nij,nj->ni", ginv, xi)
        t_prev = t_target

    psi = psi.reshape(grid.shape + (d,))
    vel = vel.reshape(grid.shape + (d,))

    # 3. Jacobian: transverse by differences across rays, normal by the geodesic velocity
    jac = np.empty(grid.shape + (d, d))
    for j in range(d - 1):
        jac[..., :, j] = np.gradient(psi, grid.spacing[j], axis=j, edge_order=2)
    jac[..., :, -1] = vel
    det = np.linalg.det(jac)
    bad = grid.in_domain & ~(det > 0.0)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise GeodesicError(f"semi-geodesic map is not simple at resolution {grid.shape} (fold at node {node})")

    ident = np.stack(grid.coords, axis=-1)
    collar = grid.collar_mask
    residual = float(np.max(np.abs(psi - ident)[collar])) if np.any(collar) else 0.0
    log.debug(f"semi-geodesic map: collar residual {residual:.3e}, min det {np.min(det[grid.in_domain]):.3e}")
    return DiffeoField(grid, psi, jac, collar_residual=residual)


def pullback_metric(m: MetricField, psi: DiffeoField, interp: Optional[MetricInterpolant] = None) -> MetricField:
    """(ψ*g)_ij = ∂_i ψ^a g_ab(ψ) ∂_j ψ^b."""
    if psi.grid != m.grid:
        raise FieldValidationError("diffeomorphism and metric live on different grids")
    d = m.grid.dim
    ident = DiffeoField.identity(m.grid)
    if np.array_equal(psi.psi, ident.psi) and np.array_equal(psi.jac, ident.jac):
        return MetricField(m.grid, m.g.copy(), enforce_collar=False)
    interp = interp or MetricInterpolant(m)
    g_at = interp.metric(psi.psi.reshape(-1, d)).reshape(m.grid.shape + (d, d))
    out = np.einsum("...ai,...ab,...bj->...ij", psi.jac, g_at, psi.jac)
    return MetricField(m.grid, 0.5 * (out + np.swapaxes(out, -1, -2)), enforce_collar=False)


# --- Admissibility ---

def gamma_minus_fan(grid: DomainGrid, n_fan: int) -> np.ndarray:
    """Points on the lower part of the boundary, where e_n points into the domain."""
    c = np.asarray(grid.center)
    if grid.dim == 2:
        phi = np.pi + np.pi * (np.arange(n_fan) + 0.5) / n_fan
        pts = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    else:
        k = np.arange(n_fan) + 0.5
        cos_t = -k / n_fan
        sin_t = np.sqrt(1.0 - cos_t ** 2)
        phi = np.pi * (1.0 + 5.0 ** 0.5) * k
        pts = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    if grid.shape_kind == "ball":
        return c + grid.radius * pts
    # box: the bottom face
    lo, hi = np.asarray(grid.origin), np.asarray(grid.upper)
    u = (np.arange(n_fan) + 0.5) / n_fan
    out = np.tile(0.5 * (lo + hi), (n_fan, 1))
    out[:, 0] = lo[0] + u * (hi[0] - lo[0])
    out[:, -1] = lo[-1]
    return out


def admissible_pair_check(g1: MetricField, g2: MetricField, tol: float = 1e-6, n_fan: int = 32,
                          step: float = None) -> AdmissibilityReport:
    """
    Collar residuals of both metrics and agreement of (τ⁺, exit point, exit direction)
    for the e_n fan started on Γ₋.
    """
    if g1.grid != g2.grid:
        raise FieldValidationError("metrics live on different grids")
    grid = g1.grid
    step = step or 0.25 * min(grid.spacing)
    collar1 = collar_identity_residual(g1.g, grid)
    collar2 = collar_identity_residual(g2.g, grid)

    x = gamma_minus_fan(grid, n_fan)
    # nudge inward so the start is not already past the level set
    x = x + 1e-9 * np.eye(grid.dim)[-1]
    xi = np.zeros_like(x)
    xi[:, -1] = 1.0
    eye = np.eye(grid.dim)

    s1 = exit_and_scatter(g1, x, xi, step)
    s2 = exit_and_scatter(g2, x, xi, step)

    length = float(np.max(np.abs(s1.length - s2.length)))
    point = float(np.max(np.linalg.norm(s1.exit_x - s2.exit_x, axis=-1)))
    direction = float(np.max(np.linalg.norm(s1.exit_direction - s2.exit_direction, axis=-1)))
    passed = max(collar1, collar2, length, point, direction) <= tol

    report = AdmissibilityReport(
        collar_residual_g1=collar1,
        collar_residual_g2=collar2,
        c0_difference=float(np.max(np.abs((g1.g - g2.g)[grid.in_domain]))),
        c2_difference=c2_surrogate(g1.g - g2.g, grid),
        c2_deviation_g1=c2_surrogate(g1.g - eye, grid),
        c2_deviation_g2=c2_surrogate(g2.g - eye, grid),
        max_length_discrepancy=length,
        max_exit_point_mismatch=point,
        max_exit_direction_mismatch=direction,
        n_rays=int(x.shape[0]),
        tol=tol,
        passed=bool(passed),
    )
    log.info(f"Admissibility: passed={report.passed}, collar=({collar1:.2e}, {collar2:.2e}), "
             f"length discrepancy {length:.2e}")
    return report
