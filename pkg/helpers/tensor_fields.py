# helpers/tensor_fields.py
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import LinearOperator, cg

from helpers.field_classes import (FieldValidationError, MetricField, SolverError, SymTensorField2,
                                   VectorFieldV)
from helpers.metric_core import central_diff, christoffel
from helpers.metric_families import bump_profile, support_radius_limit

# Get a logger for this specific module
log = logging.getLogger(__name__)


def _central_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [-1, 1], shape=(n, n), format="csr") / h


def _axis_derivative(shape, spacing, axis: int) -> sp.csr_matrix:
    factors = [_central_1d(n, h) if a == axis else sp.identity(n, format="csr")
               for a, (n, h) in enumerate(zip(shape, spacing))]
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


class SymmetricGradient:
    """
    Sparse ∇_sym v = ½(∂_j v_k + ∂_k v_j) − Γ^l_jk v_l.

    Unknowns are the components of v on interior nodes (v vanishes elsewhere), stored component-major.
    Tensor rows run over all nodes, block (j, k) after block (j', k') in C order.
    The tensor inner product is vol · Σ_in-domain s:t, the vector one vol · Σ_interior v·u,
    so δ^s = Gᵀ diag(mask).
    """

    def __init__(self, m: MetricField):
        self.metric = m
        self.grid = grid = m.grid
        d = grid.dim
        n = grid.n_nodes
        gamma = christoffel(m).gamma.reshape(n, d, d, d)

        derivs = [_axis_derivative(grid.shape, grid.spacing, a) for a in range(d)]
        blocks = []
        for j in range(d):
            for k in range(d):
                row = []
                for l in range(d):
                    block = -sp.diags(gamma[:, l, j, k])
                    if l == k:
                        block = block + 0.5 * derivs[j]
                    if l == j:
                        block = block + 0.5 * derivs[k]
                    row.append(block)
                blocks.append(row)
        full = sp.bmat(blocks, format="csr")

        interior = grid.interior_index
        self.columns = np.concatenate([interior + l * n for l in range(d)])
        self.matrix = full[:, self.columns].tocsr()
        self.row_mask = np.tile(grid.in_domain.ravel().astype(float), d * d)
        self.n_unknowns = self.columns.size

    # --- vector <-> flat ---

    def flatten_vector(self, v: VectorFieldV) -> np.ndarray:
        flat = v.v.reshape(-1, self.grid.dim).T.ravel()
        return flat[self.columns]

    def vector_field(self, coeffs: np.ndarray) -> VectorFieldV:
        d = self.grid.dim
        full = np.zeros(d * self.grid.n_nodes)
        full[self.columns] = coeffs
        v = full.reshape(d, self.grid.n_nodes).T.reshape(self.grid.shape + (d,))
        return VectorFieldV(self.grid, v)

    def flatten_tensor(self, t: SymTensorField2) -> np.ndarray:
        d = self.grid.dim
        return np.moveaxis(t.s.reshape(-1, d, d), 0, -1).ravel()

    def tensor_field(self, flat: np.ndarray) -> SymTensorField2:
        d = self.grid.dim
        s = np.moveaxis(flat.reshape(d, d, self.grid.n_nodes), -1, 0).reshape(self.grid.shape + (d, d))
        return SymTensorField2(self.grid, s)

    # --- operators ---

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.row_mask * (self.matrix @ coeffs)

    def divergence(self, flat_t: np.ndarray) -> np.ndarray:
        """δ^s t as the exact adjoint of apply."""
        return self.matrix.T @ (self.row_mask * flat_t)

    def normal_operator(self) -> LinearOperator:
        n = self.n_unknowns
        return LinearOperator((n, n), matvec=lambda c: self.divergence(self.apply(c)), dtype=float)

    def jacobi_preconditioner(self) -> LinearOperator:
        weighted = sp.diags(self.row_mask) @ self.matrix
        diag = np.asarray(weighted.multiply(self.matrix).sum(axis=0)).ravel()
        inv = 1.0 / np.where(diag > 0.0, diag, 1.0)
        n = self.n_unknowns
        return LinearOperator((n, n), matvec=lambda c: inv * c, dtype=float)


def sym_gradient(m: MetricField, v: VectorFieldV, op: SymmetricGradient = None) -> SymTensorField2:
    if v.grid != m.grid:
        raise FieldValidationError("vector field and metric live on different grids")
    op = op or SymmetricGradient(m)
    return op.tensor_field(op.apply(op.flatten_vector(v)))


def divergence_sym(m: MetricField, t: SymTensorField2, op: SymmetricGradient = None) -> VectorFieldV:
    op = op or SymmetricGradient(m)
    return op.vector_field(op.divergence(op.flatten_tensor(t)))


def tensor_inner(t: SymTensorField2, s: SymTensorField2) -> float:
    mask = t.grid.in_domain[..., None, None]
    return float(t.grid.cell_volume * np.sum(mask * t.s * s.s))


@dataclass
class DecompositionResult:
    t_sol: SymTensorField2
    v: VectorFieldV
    iterations: int
    orthogonality_residual: float
    divergence_residual: float
    reassembly_residual: float


def solenoidal_decompose(m: MetricField, t: SymTensorField2, cg_tol: float = 1e-10, maxiter: int = 5000,
                         x0: np.ndarray = None, op: SymmetricGradient = None) -> DecompositionResult:
    """
    t = t_sol + ∇_sym v with δ^s t_sol = 0 and v = 0 on the boundary.
    v solves (δ^s ∇_sym) v = δ^s t by preconditioned CG.
    """
    if t.grid != m.grid:
        raise FieldValidationError("tensor field and metric live on different grids")
    op = op or SymmetricGradient(m)
    flat_t = op.flatten_tensor(t)
    rhs = op.divergence(flat_t)

    iterations = 0

    def _count(_):
        nonlocal iterations
        iterations += 1

    if np.linalg.norm(rhs) == 0.0:
        coeffs = np.zeros(op.n_unknowns)
    else:
        coeffs, info = cg(op.normal_operator(), rhs, x0=x0, rtol=cg_tol, atol=0.0, maxiter=maxiter,
                          M=op.jacobi_preconditioner(), callback=_count)
        if info > 0:
            raise SolverError(f"solenoidal decomposition: CG did not converge in {maxiter} iterations")
        if info < 0:
            raise SolverError("solenoidal decomposition: CG breakdown")

    potential = op.apply(coeffs)
    flat_sol = flat_t - potential
    t_sol = op.tensor_field(flat_sol)

    tt = float(np.dot(flat_t * op.row_mask, flat_t)) or 1.0
    ortho = abs(float(np.dot(flat_sol * op.row_mask, potential))) / tt
    div_rhs = np.linalg.norm(rhs) or 1.0
    div = float(np.linalg.norm(op.divergence(flat_sol)) / div_rhs)
    reassembly = float(np.max(np.abs(flat_sol + potential - flat_t)))
    log.debug(f"solenoidal split: {iterations} CG iterations, orthogonality {ortho:.2e}, divergence {div:.2e}")
    return DecompositionResult(t_sol, op.vector_field(coeffs), iterations, ortho, div, reassembly)


def semi_geodesic_residual(m: MetricField) -> float:
    """max over in-domain nodes of |g_{·n} − e_n|."""
    d = m.grid.dim
    target = np.zeros(d)
    target[-1] = 1.0
    mask = m.grid.in_domain
    return float(np.max(np.abs(m.g[..., :, -1] - target)[mask]))


def recover_v_from_tsol(m: MetricField, t_sol: SymTensorField2, form_tol: float = 1e-3) -> VectorFieldV:
    """
    v with t := t_sol + ∇_sym v satisfying t_{jn} = 0, for a metric in semi-geodesic form.

    Each x_n column is integrated from its inflow node, where v = 0:
      ∂_n v_n = −t^sol_nn,
      ∂_n v_j = 2 Σ_{k<n} Γ^k_jn v_k − 2 t^sol_jn − ∂_j v_n     (j < n),
    the first by the trapezoidal rule, the second by the implicit trapezoidal rule.
    """
    grid = m.grid
    if t_sol.grid != grid:
        raise FieldValidationError("tensor field and metric live on different grids")
    residual = semi_geodesic_residual(m)
    if residual > form_tol:
        raise FieldValidationError(f"metric is not in semi-geodesic form (residual {residual:.3e})")

    d = grid.dim
    n_ax = d - 1
    hn = grid.spacing[n_ax]
    mask = grid.in_domain
    ts = t_sol.s * mask[..., None, None]

    # inflow index of each column (first in-domain node along x_n)
    has_domain = np.any(mask, axis=n_ax)
    first = np.argmax(mask, axis=n_ax)
    idx = np.arange(grid.shape[n_ax]).reshape((1,) * n_ax + (-1,))
    active = mask & (idx >= first[..., None])

    # 1. Normal component
    cum = cumulative_trapezoid(-ts[..., -1, -1], dx=hn, axis=n_ax, initial=0.0)
    start = np.take_along_axis(cum, first[..., None], axis=n_ax)
    v = np.zeros(grid.shape + (d,))
    v[..., -1] = np.where(active, cum - start, 0.0)
    v[~has_domain] = 0.0

    # 2. Tangential components
    gamma = christoffel(m).gamma
    # A[..., j, k] = 2 Γ^k_{jn}, j, k < n
    a_mat = 2.0 * np.swapaxes(gamma[..., :n_ax, :n_ax, n_ax], -1, -2)
    dvn = np.stack([central_diff(v[..., -1], j, grid.spacing[j]) for j in range(n_ax)], axis=-1)
    forcing = -2.0 * ts[..., :n_ax, -1] - dvn
    eye = np.eye(n_ax)

    def _slice(arr, i):
        return np.take(arr, i, axis=n_ax)

    vt = np.zeros(grid.shape[:n_ax] + (n_ax,))
    for i in range(grid.shape[n_ax] - 1):
        a_i, a_next = _slice(a_mat, i), _slice(a_mat, i + 1)
        rhs = vt + 0.5 * hn * (np.einsum("...jk,...k->...j", a_i, vt) + _slice(forcing, i) + _slice(forcing, i + 1))
        lhs = eye - 0.5 * hn * a_next
        nxt = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        live = _slice(active, i + 1) & _slice(active, i)
        vt = np.where(live[..., None], nxt, 0.0)
        sl = [slice(None)] * (d + 1)
        sl[n_ax] = i + 1
        sl[-1] = slice(0, n_ax)
        v[tuple(sl)] = vt
    return VectorFieldV(grid, v, zero_on_boundary=False)


NORM_KINDS = ("l2", "c0", "c2", "h2")


def tensor_norm(t: SymTensorField2, kind: str) -> float:
    kind = kind.lower().replace("surrogate", "")
    if kind not in NORM_KINDS:
        raise FieldValidationError(f"unknown norm kind '{kind}'")
    return tensor_norms(t)[kind]


def tensor_norms(t: SymTensorField2) -> dict:
    """L², C⁰, and C²/H² surrogates from central differences over in-domain nodes."""
    grid = t.grid
    mask = grid.in_domain
    vol = grid.cell_volume
    first = [central_diff(t.s, j, grid.spacing[j]) for j in range(grid.dim)]
    second = [central_diff(f, k, grid.spacing[k]) for f in first for k in range(grid.dim)]

    def _sq(a):
        return float(np.sum(a[mask] ** 2))

    def _max(a):
        return float(np.max(np.abs(a[mask]))) if np.any(mask) else 0.0

    l2_sq = _sq(t.s)
    h2_sq = l2_sq + sum(_sq(f) for f in first) + sum(_sq(f) for f in second)
    return {
        "l2": float(np.sqrt(vol * l2_sq)),
        "c0": _max(t.s),
        "c2": max([_max(t.s)] + [_max(f) for f in first] + [_max(f) for f in second]),
        "h2": float(np.sqrt(vol * h2_sq)),
    }


# --- Test fields ---

def smooth_phantom(grid, rng: np.random.Generator, n_bumps: int = 3) -> SymTensorField2:
    """Sum of C³ bumps with random symmetric coefficient matrices, supported away from the collar."""
    limit = support_radius_limit(grid)
    radius = 0.4 * limit
    d = grid.dim
    s = np.zeros(grid.shape + (d, d))
    for _ in range(n_bumps):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        centre = np.asarray(grid.center) + rng.uniform(0.0, limit - radius) * direction
        a = rng.standard_normal((d, d))
        coeff = 0.5 * (a + a.T)
        s += bump_profile(grid.points, centre, radius).reshape(grid.shape)[..., None, None] * coeff
    return SymTensorField2(grid, s)


def random_potential(m: MetricField, rng: np.random.Generator, op: SymmetricGradient = None):
    """(v, ∇_sym v) for a smooth random v vanishing near the boundary."""
    grid = m.grid
    limit = support_radius_limit(grid)
    centre = np.asarray(grid.center)
    profile = bump_profile(grid.points, centre, limit).reshape(grid.shape)
    coeffs = rng.standard_normal((grid.dim, 3))
    x = (grid.points - centre).reshape(grid.shape + (grid.dim,))
    v = np.stack([profile * (c[0] + c[1] * x[..., 0] + c[2] * x[..., -1]) for c in coeffs], axis=-1)
    field = VectorFieldV(grid, v * grid.interior_mask[..., None])
    return field, sym_gradient(m, field, op)
