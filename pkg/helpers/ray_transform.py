# helpers/ray_transform.py
import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from helpers.field_classes import (ConfigError, DomainGrid, FieldValidationError, MetricField, SolverError,
                                   SymTensorField2)
from helpers.geodesic_flow import TRAPPED_FACTOR, MetricInterpolant, flow_to_exit
from helpers.tensor_fields import SymmetricGradient, solenoidal_decompose

# Get a logger for this specific module
log = logging.getLogger(__name__)

MIN_MU = 1e-6


@dataclass
class RayBundle:
    """
    Inward rays on the sphere of radius `launch_radius` about `center`.
    `mu` = ⟨ν, θ⟩ with ν the inward normal; `dsigma` the quadrature weight of each (point, direction).
    """
    points: np.ndarray
    directions: np.ndarray
    mu: np.ndarray
    dsigma: np.ndarray
    launch_radius: float
    center: np.ndarray

    @property
    def n_rays(self) -> int:
        return int(self.points.shape[0])

    def subset(self, keep: np.ndarray) -> "RayBundle":
        return RayBundle(self.points[keep], self.directions[keep], self.mu[keep], self.dsigma[keep],
                         self.launch_radius, self.center)


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    cos_t = 1.0 - 2.0 * k / n
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    phi = np.pi * (1.0 + 5.0 ** 0.5) * k
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def make_fan_bundle(grid: DomainGrid, n_points: int, n_dirs: int, launch_margin: float = None) -> RayBundle:
    """
    Fan-beam bundle on the enlarged sphere: n_points launch points times n_dirs inward directions.
    2-D directions sit at angles β_q = −π/2 + (q + ½)π/n_dirs from the inward normal.
    """
    if n_points < 4 or n_dirs < 4:
        raise ConfigError(f"bundle needs at least 4 points and 4 directions, got {n_points} x {n_dirs}")
    launch_margin = 2.0 * max(grid.spacing) if launch_margin is None else launch_margin
    r1 = grid.effective_radius + launch_margin
    c = np.asarray(grid.center)

    if grid.dim == 2:
        phi = 2.0 * np.pi * np.arange(n_points) / n_points
        beta = -0.5 * np.pi + (np.arange(n_dirs) + 0.5) * np.pi / n_dirs
        phi_g, beta_g = np.meshgrid(phi, beta, indexing="ij")
        phi_g, beta_g = phi_g.ravel(), beta_g.ravel()
        normal_out = np.stack([np.cos(phi_g), np.sin(phi_g)], axis=-1)
        points = c + r1 * normal_out
        heading = phi_g + np.pi + beta_g
        directions = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
        mu = np.cos(beta_g)
        dsigma = np.full(mu.shape, (2.0 * np.pi * r1 / n_points) * (np.pi / n_dirs))
    else:
        normals = _fibonacci_sphere(n_points)
        hemi = _fibonacci_sphere(2 * n_dirs)
        hemi = hemi[hemi[:, 2] > 0.0]
        pts, dirs, mus = [], [], []
        for nu_out in normals:
            inward = -nu_out
            # orthonormal frame with the inward normal as third axis
            helper = np.eye(3)[np.argmin(np.abs(inward))]
            e1 = np.cross(inward, helper)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(inward, e1)
            frame = np.stack([e1, e2, inward], axis=-1)
            dirs.append(hemi @ frame.T)
            mus.append(hemi[:, 2])
            pts.append(np.broadcast_to(c + r1 * nu_out, hemi.shape))
        points = np.concatenate(pts)
        directions = np.concatenate(dirs)
        mu = np.concatenate(mus)
        dsigma = np.full(mu.shape, (4.0 * np.pi * r1 ** 2 / n_points) * (2.0 * np.pi / hemi.shape[0]))

    bundle = RayBundle(points, directions, mu, dsigma, r1, c)
    keep = mu >= MIN_MU
    if not np.all(keep):
        log.debug(f"Dropping {np.count_nonzero(~keep)} grazing rays")
        bundle = bundle.subset(keep)
    return bundle


def make_point_fan(grid: DomainGrid, y, angles, launch_margin: float = None) -> RayBundle:
    """Rays from a single launch point y (2-D), one per direction angle."""
    launch_margin = 2.0 * max(grid.spacing) if launch_margin is None else launch_margin
    c = np.asarray(grid.center)
    y = np.asarray(y, dtype=float)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    inward = (c - y) / np.linalg.norm(c - y)
    mu = directions @ inward
    dsig = np.gradient(angles) if angles.size > 1 else np.ones(1)
    return RayBundle(np.broadcast_to(y, directions.shape).copy(), directions, mu, np.abs(dsig),
                     float(np.linalg.norm(y - c)), c)


@dataclass
class Sinogram:
    bundle: RayBundle
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.bundle.n_rays,):
            raise FieldValidationError(f"sinogram has {self.values.shape} values for {self.bundle.n_rays} rays")

    def inner(self, other: "Sinogram") -> float:
        """L²_μ pairing Σ μ dσ s₁ s₂."""
        return float(np.sum(self.bundle.mu * self.bundle.dsigma * self.values * other.values))


def bilinear_matrix(grid: DomainGrid, pts: np.ndarray):
    """
    Sparse (n_pts, n_nodes) multilinear interpolation matrix.
    Returns the matrix and the mask of points that fall inside the grid box.
    """
    lo = np.asarray(grid.origin)
    h = np.asarray(grid.spacing)
    shape = np.asarray(grid.shape)
    rel = (pts - lo) / h
    inside = np.all((rel >= 0.0) & (rel <= shape - 1), axis=-1)
    rel = rel[inside]
    base = np.minimum(np.floor(rel).astype(int), shape - 2)
    frac = rel - base
    rows_all, cols_all, vals_all = [], [], []
    rows = np.arange(rel.shape[0])
    strides = np.array([int(np.prod(grid.shape[a + 1:])) for a in range(grid.dim)])
    for corner in itertools.product((0, 1), repeat=grid.dim):
        corner = np.asarray(corner)
        weight = np.prod(np.where(corner, frac, 1.0 - frac), axis=-1)
        flat = (base + corner) @ strides
        rows_all.append(rows)
        cols_all.append(flat)
        vals_all.append(weight)
    mat = sp.csr_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(rel.shape[0], grid.n_nodes),
    )
    return mat, inside


class RayTransformOperator:
    """
    Discrete I_g t(x, θ) = ∫ t_jk(γ) γ̇^j γ̇^k ds for every ray of a bundle.

    Quadrature uses the RK4 stage points of the geodesic integration; the adjoint is the exact
    transpose under the L²_μ pairing on rays and the vol-weighted pairing on tensors.
    """

    def __init__(self, m: MetricField, bundle: RayBundle, step: float = None,
                 interp: Optional[MetricInterpolant] = None):
        self.metric = m
        self.grid = grid = m.grid
        self.bundle = bundle
        self.step = step or 0.5 * min(grid.spacing)
        interp = interp or MetricInterpolant(m)

        reach = np.sqrt(grid.dim) * max(grid.spacing)
        level = lambda pts: np.linalg.norm(pts - bundle.center, axis=-1) - bundle.launch_radius
        keep = lambda pts: grid.signed_distance(pts) <= reach
        max_time = TRAPPED_FACTOR * 2.0 * bundle.launch_radius

        # start a hair inside the launch sphere so the first step is not counted as an exit
        start = bundle.points + 1e-9 * bundle.directions
        rec = flow_to_exit(interp, level, start, bundle.directions, self.step, max_time,
                           record_stages=True, keep_stage=keep)
        self.exit_time = rec.exit_time
        d = grid.dim
        if rec.stage_ray:
            ray = np.concatenate(rec.stage_ray)
            pos = np.concatenate(rec.stage_x)
            vel = np.concatenate(rec.stage_v)
            w = np.concatenate(rec.stage_w)
        else:
            ray, pos, vel, w = np.zeros(0, int), np.zeros((0, d)), np.zeros((0, d)), np.zeros(0)

        interp_mat, inside = bilinear_matrix(grid, pos)
        self.sample_ray = ray[inside]
        self.interp = interp_mat
        self.weights = (w[inside, None, None] * vel[inside, :, None] * vel[inside, None, :]).reshape(-1, d * d)
        self.mask = grid.in_domain.ravel().astype(float)
        self.n_samples = int(self.sample_ray.size)
        log.debug(f"Ray transform: {bundle.n_rays} rays, {self.n_samples} quadrature samples")

    def forward_flat(self, flat: np.ndarray) -> np.ndarray:
        """flat is (n_nodes, d*d)."""
        vals = self.interp @ (flat * self.mask[:, None])
        integrand = np.sum(vals * self.weights, axis=-1)
        return np.bincount(self.sample_ray, weights=integrand, minlength=self.bundle.n_rays)

    def adjoint_flat(self, values: np.ndarray) -> np.ndarray:
        coeff = (self.bundle.mu * self.bundle.dsigma * values)[self.sample_ray]
        deposit = self.interp.T @ (coeff[:, None] * self.weights)
        return deposit * self.mask[:, None] / self.grid.cell_volume

    def forward(self, t: SymTensorField2) -> Sinogram:
        if t.grid != self.grid:
            raise FieldValidationError("tensor field and ray transform live on different grids")
        d = self.grid.dim
        return Sinogram(self.bundle, self.forward_flat(t.s.reshape(-1, d * d)))

    def adjoint(self, s: Sinogram) -> SymTensorField2:
        d = self.grid.dim
        return SymTensorField2(self.grid, self.adjoint_flat(s.values).reshape(self.grid.shape + (d, d)))

    def normal(self, t: SymTensorField2) -> SymTensorField2:
        return self.adjoint(self.forward(t))


def ray_transform(m: MetricField, t: SymTensorField2, b: RayBundle, step: float = None,
                  op: RayTransformOperator = None) -> Sinogram:
    op = op or RayTransformOperator(m, b, step)
    return op.forward(t)


def adjoint_ray_transform(m: MetricField, s: Sinogram, b: RayBundle, step: float = None,
                          op: RayTransformOperator = None) -> SymTensorField2:
    op = op or RayTransformOperator(m, b, step)
    return op.adjoint(s)


def normal_operator(m: MetricField, t: SymTensorField2, b: RayBundle, step: float = None,
                    op: RayTransformOperator = None) -> SymTensorField2:
    op = op or RayTransformOperator(m, b, step)
    return op.normal(t)


@dataclass
class InversionResult:
    t_sol: SymTensorField2
    iterations: int
    data_residual: float


def s_invert(m: MetricField, s: Sinogram, b: RayBundle = None, reg_lambda: float = 1e-6, cg_tol: float = 1e-8,
             maxiter: int = 2000, step: float = None, op: RayTransformOperator = None,
             sym_op: SymmetricGradient = None) -> InversionResult:
    """Solve (N + λ) t = I* s by CG, then keep the solenoidal part. λ = 0 runs CG on N alone."""
    if reg_lambda < 0.0:
        raise ConfigError(f"reg_lambda must be non-negative, got {reg_lambda}")
    op = op or RayTransformOperator(m, b if b is not None else s.bundle, step)
    grid = m.grid
    d = grid.dim
    size = grid.n_nodes * d * d

    def _matvec(x):
        flat = x.reshape(-1, d * d)
        return (op.adjoint_flat(op.forward_flat(flat)) + reg_lambda * flat).ravel()

    rhs = op.adjoint_flat(s.values).ravel()
    iterations = 0

    def _count(_):
        nonlocal iterations
        iterations += 1

    if np.linalg.norm(rhs) == 0.0:
        sol = np.zeros(size)
    else:
        sol, info = cg(LinearOperator((size, size), matvec=_matvec, dtype=float), rhs, rtol=cg_tol, atol=0.0,
                       maxiter=maxiter, callback=_count)
        if info > 0:
            raise SolverError(f"s_invert: CG did not converge in {maxiter} iterations")
    t = SymTensorField2(grid, sol.reshape(grid.shape + (d, d)))
    t_sol = solenoidal_decompose(m, t, op=sym_op).t_sol
    pred = op.forward(t_sol).values
    scale = np.linalg.norm(s.values) or 1.0
    residual = float(np.linalg.norm(pred - s.values) / scale)
    log.info(f"s_invert: {iterations} CG iterations, relative data residual {residual:.3e}")
    return InversionResult(t_sol, iterations, residual)
