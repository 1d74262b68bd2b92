# helpers/metric_core.py
import logging
from functools import reduce

import numpy as np
import scipy.sparse as sp

from helpers.field_classes import (ChristoffelField, DomainGrid, FieldValidationError, MetricField,
                                   ScalarField, check_spd)

# Get a logger for this specific module
log = logging.getLogger(__name__)


# --- Finite differences on the node grid ---

def central_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference along `axis` with edge padding (one-sided half step at the grid edges)."""
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (1, 1)
    a = np.pad(arr, pad, mode="edge")
    upper = [slice(None)] * arr.ndim
    lower = [slice(None)] * arr.ndim
    upper[axis] = slice(2, None)
    lower[axis] = slice(None, -2)
    return (a[tuple(upper)] - a[tuple(lower)]) / (2.0 * h)


def grid_gradient(arr: np.ndarray, grid: DomainGrid) -> np.ndarray:
    """Stack of central differences, new trailing axis indexed by direction."""
    return np.stack([central_diff(arr, j, grid.spacing[j]) for j in range(grid.dim)], axis=-1)


# --- Pointwise algebra ---

def inverse_metric(m: MetricField) -> MetricField:
    """Nodewise inverse g^{-1}."""
    check_spd(m.g, m.grid, np.ones(m.grid.shape, dtype=bool))
    ginv = np.linalg.inv(m.g)
    ginv = 0.5 * (ginv + np.swapaxes(ginv, -1, -2))
    return MetricField(m.grid, ginv, smoothness_tag=m.smoothness_tag, enforce_collar=m.enforce_collar)


def christoffel(m: MetricField) -> ChristoffelField:
    """
    Γ^k_ij = ½ g^{kl} (∂_i g_jl + ∂_j g_il − ∂_l g_ij), derivatives by central differences.
    Exactly symmetric in (i, j).
    """
    grid = m.grid
    # dg[..., a, b, c] = ∂_a g_bc
    dg = np.stack([central_diff(m.g, a, grid.spacing[a]) for a in range(grid.dim)], axis=-3)
    first_kind = 0.5 * (
        np.einsum("...ijl->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - dg
    )
    ginv = np.linalg.inv(m.g)
    gamma = np.einsum("...kl,...lij->...kij", ginv, first_kind)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return ChristoffelField(grid, gamma)


# --- Sparse Laplace-Beltrami ---

def _diff_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def _avg_1d(n: int) -> sp.csr_matrix:
    return sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _kron_all(factors) -> sp.csr_matrix:
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


class LaplaceBeltrami:
    """
    Flux-form discretisation of Δ_g on the full node grid.

    Stiffness S is the quadrature of ∫ √|g| g^{jk} ∂_j u ∂_k w dx: diagonal terms on grid edges,
    cross terms on cells. Mass is lumped, M = √|g| · cell volume. Then Δ_g u = −S u / M.
    """

    def __init__(self, m: MetricField):
        self.metric = m
        self.grid = grid = m.grid
        d = grid.dim
        n = grid.shape
        h = grid.spacing

        sqrt_det = m.sqrt_det
        coeff = sqrt_det[..., None, None] * np.linalg.inv(m.g)

        eye = [sp.identity(k, format="csr") for k in n]
        diff = [_diff_1d(k, hk) for k, hk in zip(n, h)]
        avg = [_avg_1d(k) for k in n]

        terms = []
        # 1. Diagonal terms on edges along axis j
        for j in range(d):
            d_edge = _kron_all([diff[a] if a == j else eye[a] for a in range(d)])
            a_edge = _kron_all([avg[a] if a == j else eye[a] for a in range(d)])
            k_edge = a_edge @ coeff[..., j, j].ravel()
            terms.append(d_edge.T @ sp.diags(k_edge) @ d_edge)

        # 2. Cross terms on cells
        if d > 1:
            cell_avg = _kron_all(avg)
            d_cell = [_kron_all([diff[a] if a == j else avg[a] for a in range(d)]) for j in range(d)]
            for j in range(d):
                for k in range(d):
                    if j == k:
                        continue
                    k_cell = cell_avg @ coeff[..., j, k].ravel()
                    terms.append(d_cell[j].T @ sp.diags(k_cell) @ d_cell[k])

        self.stiffness = (grid.cell_volume * sum(terms)).tocsr()
        self.mass = (sqrt_det * grid.cell_volume).ravel()
        log.debug(f"Assembled Laplace-Beltrami on {grid.shape}, nnz={self.stiffness.nnz}")

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Δ_g u on the flat node vector. Only interior rows approximate Δ_g."""
        return -(self.stiffness @ u) / self.mass

    def energy(self, w: np.ndarray, f: np.ndarray) -> complex:
        """Discrete ∫ <∇w, ∇f>_g dV_g."""
        return np.dot(f, self.stiffness @ w)

    def boundary_term(self, w: np.ndarray, f: np.ndarray) -> complex:
        """Discrete ∫_∂Ω (∂_ν w) f dσ_g: the flux left over on non-interior rows."""
        rest = ~self.grid.interior_mask.ravel()
        return np.dot((self.stiffness @ w)[rest], f[rest])


def laplace_beltrami_apply(m: MetricField, u: ScalarField, op: LaplaceBeltrami = None) -> ScalarField:
    if u.grid != m.grid:
        raise FieldValidationError("scalar field and metric live on different grids")
    op = op or LaplaceBeltrami(m)
    out = op.apply(np.asarray(u.values).ravel()).reshape(m.grid.shape)
    return ScalarField(m.grid, out)


def green_identity_residual(m: MetricField, w: np.ndarray, f: np.ndarray, op: LaplaceBeltrami = None) -> float:
    """
    |⟨Δ_g w, f⟩_Ω + ⟨∇w, ∇f⟩ − ∫_∂Ω ∂_ν w f|, relative to the size of the largest term.
    """
    op = op or LaplaceBeltrami(m)
    w = np.asarray(w).ravel()
    f = np.asarray(f).ravel()
    interior = m.grid.interior_mask.ravel()
    volume_term = np.dot((op.mass * op.apply(w))[interior], f[interior])
    energy = op.energy(w, f)
    boundary = op.boundary_term(w, f)
    scale = max(abs(volume_term), abs(energy), abs(boundary), np.finfo(float).tiny)
    return float(abs(volume_term + energy - boundary) / scale)


# --- Norms ---

def c2_surrogate(arr: np.ndarray, grid: DomainGrid, mask: np.ndarray = None) -> float:
    """Max over `mask` of |f|, |∂f| and |∂²f| with central differences; trailing axes are components."""
    mask = grid.in_domain if mask is None else mask
    if not np.any(mask):
        return 0.0
    first = [central_diff(arr, j, grid.spacing[j]) for j in range(grid.dim)]
    second = [central_diff(f, k, grid.spacing[k]) for f in first for k in range(grid.dim)]
    return float(max(np.max(np.abs(a[mask])) for a in [arr] + first + second))


def metric_difference_norms(g1: MetricField, g2: MetricField) -> dict:
    if g1.grid != g2.grid:
        raise FieldValidationError("metrics live on different grids")
    grid = g1.grid
    diff = g1.g - g2.g
    mask = grid.in_domain
    return {
        "c0": float(np.max(np.abs(diff[mask]))) if np.any(mask) else 0.0,
        "c2": c2_surrogate(diff, grid),
        "l2": float(np.sqrt(grid.cell_volume * np.sum(diff[mask] ** 2))),
    }


# --- Metric recovery from a dual difference ---

def lower_metric_from_s(g1: MetricField, t: np.ndarray, tol: float = 1e-12, max_iter: int = 50):
    """
    Given g₁ and t = α s with s = g₂^{-1} − g₁^{-1} and α = √|g₂| / √|g₁|, recover g₂.
    α is resolved by fixed-point iteration starting from α = 1. Returns (g₂ array, α, g₁ − g₂).
    """
    grid = g1.grid
    t = np.asarray(t, dtype=float)
    g1inv = np.linalg.inv(g1.g)
    alpha = np.ones(grid.shape)
    for it in range(max_iter):
        g2inv = g1inv + t / alpha[..., None, None]
        check_spd(g2inv, grid, grid.in_domain)
        g2 = np.linalg.inv(g2inv)
        new_alpha = np.sqrt(np.linalg.det(g2)) / g1.sqrt_det
        change = float(np.max(np.abs(new_alpha - alpha)))
        alpha = new_alpha
        if change < tol:
            break
    else:
        log.warning(f"conformal ratio iteration stopped after {max_iter} sweeps (change {change:.2e})")
    g2 = 0.5 * (g2 + np.swapaxes(g2, -1, -2))
    return g2, alpha, g1.g - g2
