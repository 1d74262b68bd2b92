# helpers/wave_dtn.py
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from helpers.field_classes import DomainGrid, FieldValidationError, MetricField, SolverError
from helpers.metric_core import LaplaceBeltrami

# Get a logger for this specific module
log = logging.getLogger(__name__)

DEFAULT_CFL = 0.5


def boundary_element(grid: DomainGrid) -> float:
    """Surface measure carried by one boundary node."""
    if grid.shape_kind == "ball":
        area = 2.0 * np.pi * grid.radius if grid.dim == 2 else 4.0 * np.pi * grid.radius ** 2
    else:
        ext = 2.0 * grid.half_extents
        area = 2.0 * np.sum(ext) if grid.dim == 2 else 2.0 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
    return float(area / max(1, grid.boundary_index.size))


def _neumann_matrix(grid: DomainGrid, ginv: np.ndarray) -> sp.csr_matrix:
    """
    Rows: boundary nodes. Σ_k (Σ_j g^{jk} ν_j) ∂_k u, each ∂_k central when both neighbours are in the
    domain, else one-sided second order into the domain, else first order.
    """
    bnd = grid.boundary_index
    n_b = bnd.size
    idx = np.stack(np.unravel_index(bnd, grid.shape), axis=-1)
    nu = grid.outward_normal(grid.points[bnd])
    g_b = ginv.reshape(-1, grid.dim, grid.dim)[bnd]
    coef = np.einsum("bjk,bj->bk", g_b, nu)
    dom = grid.in_domain.ravel()
    shape = np.asarray(grid.shape)

    def _neighbour(axis, offset):
        shifted = idx.copy()
        shifted[:, axis] += offset
        ok = np.all((shifted >= 0) & (shifted < shape), axis=-1)
        flat = np.ravel_multi_index(tuple(np.clip(shifted, 0, shape - 1).T), grid.shape)
        return flat, ok & dom[flat]

    rows, cols, vals = [], [], []
    row_ids = np.arange(n_b)

    def _put(sel, nodes_and_weights, scale):
        for nodes, w in nodes_and_weights:
            rows.append(row_ids[sel])
            cols.append(nodes[sel])
            vals.append(w * scale[sel])

    for k in range(grid.dim):
        h = grid.spacing[k]
        scale = coef[:, k]
        p1, ok_p1 = _neighbour(k, 1)
        p2, ok_p2 = _neighbour(k, 2)
        m1, ok_m1 = _neighbour(k, -1)
        m2, ok_m2 = _neighbour(k, -2)
        taken = np.zeros(n_b, dtype=bool)

        central = ok_p1 & ok_m1
        _put(central, [(p1, 0.5 / h), (m1, -0.5 / h)], scale)
        taken |= central

        fwd2 = ~taken & ok_p1 & ok_p2
        _put(fwd2, [(bnd, -1.5 / h), (p1, 2.0 / h), (p2, -0.5 / h)], scale)
        taken |= fwd2

        bwd2 = ~taken & ok_m1 & ok_m2
        _put(bwd2, [(bnd, 1.5 / h), (m1, -2.0 / h), (m2, 0.5 / h)], scale)
        taken |= bwd2

        fwd1 = ~taken & ok_p1
        _put(fwd1, [(bnd, -1.0 / h), (p1, 1.0 / h)], scale)
        taken |= fwd1

        bwd1 = ~taken & ok_m1
        _put(bwd1, [(bnd, 1.0 / h), (m1, -1.0 / h)], scale)

    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_b, grid.n_nodes))


class WaveSolver:
    """
    Explicit leapfrog for (∂_t² − Δ_g) u = z on the in-domain nodes:
        u^{n+1} = 2u^n − u^{n−1} + dt² (Δ_g u^n + z^n),
    Dirichlet values forced on the boundary nodes, exterior nodes held at zero.
    """

    def __init__(self, m: MetricField, dt: float = None, cfl: float = DEFAULT_CFL):
        self.metric = m
        self.grid = grid = m.grid
        self.lb = LaplaceBeltrami(m)
        ginv = np.linalg.inv(m.g)
        lam_max = float(np.max(np.linalg.eigvalsh(ginv[grid.in_domain])[..., -1]))
        self.dt_max = min(grid.spacing) / np.sqrt(grid.dim * lam_max)
        self.dt = cfl * min(grid.spacing) / np.sqrt(lam_max) if dt is None else float(dt)
        if self.dt > self.dt_max:
            raise SolverError(f"time step {self.dt:.4g} violates the CFL limit {self.dt_max:.4g}")

        self.interior = grid.interior_index
        self.boundary = grid.boundary_index
        self.stiff_rows = self.lb.stiffness[self.interior].tocsr()
        self.mass_interior = self.lb.mass[self.interior]
        self.neumann = _neumann_matrix(grid, ginv)
        self.ds = boundary_element(grid)
        log.debug(f"WaveSolver: dt={self.dt:.4g} (limit {self.dt_max:.4g}), "
                  f"{self.interior.size} interior / {self.boundary.size} boundary nodes")

    def n_steps_for(self, T: float) -> int:
        return int(np.ceil(T / self.dt - 1e-9))

    def acceleration(self, u: np.ndarray) -> np.ndarray:
        """Δ_g u on interior nodes."""
        return -(self.stiff_rows @ u) / self.mass_interior

    def energy(self, u_next: np.ndarray, u_cur: np.ndarray) -> float:
        """Modified leapfrog energy; conserved for the homogeneous Dirichlet problem."""
        vel = (u_next - u_cur) / self.dt
        kinetic = 0.5 * np.real(np.vdot(vel, self.lb.mass * vel))
        potential = 0.5 * np.real(np.vdot(u_next, self.lb.stiffness @ u_cur))
        return float(kinetic + potential)

    def march(self, n_steps: int, boundary: Callable[[int], np.ndarray] = None,
              source: Callable[[int], Optional[np.ndarray]] = None,
              observer: Callable[[int, np.ndarray], None] = None,
              u0: np.ndarray = None, u1: np.ndarray = None, dtype=float):
        """
        Advance to step n_steps. boundary(n) gives the boundary-node values, source(n) a full
        node vector (or None for no source). observer(n, u) sees every time level.
        """
        dt2 = self.dt ** 2
        n_nodes = self.grid.n_nodes
        intr, bnd = self.interior, self.boundary

        def _z(n):
            if source is None:
                return None
            val = source(n)
            return None if val is None else np.asarray(val)[intr]

        u_prev = np.zeros(n_nodes, dtype=dtype) if u0 is None else np.asarray(u0, dtype=dtype).copy()
        if boundary is not None:
            u_prev[bnd] = boundary(0)
        if u1 is None:
            u_cur = u_prev.copy()
            z0 = _z(0)
            acc = self.acceleration(u_prev) + (0.0 if z0 is None else z0)
            u_cur[intr] = u_prev[intr] + 0.5 * dt2 * acc
        else:
            u_cur = np.asarray(u1, dtype=dtype).copy()
        if boundary is not None:
            u_cur[bnd] = boundary(1)
        if observer:
            observer(0, u_prev)
            observer(1, u_cur)

        for n in range(1, n_steps):
            z = _z(n)
            acc = self.acceleration(u_cur)
            if z is not None:
                acc = acc + z
            u_next = np.zeros_like(u_cur)
            u_next[intr] = 2.0 * u_cur[intr] - u_prev[intr] + dt2 * acc
            if boundary is not None:
                u_next[bnd] = boundary(n + 1)
            if not np.all(np.isfinite(u_next[intr])):
                raise SolverError(f"wave solution blew up at step {n + 1} (t = {(n + 1) * self.dt:.4g})")
            if observer:
                observer(n + 1, u_next)
            u_prev, u_cur = u_cur, u_next
        return u_prev, u_cur

    def neumann_trace(self, u: np.ndarray) -> np.ndarray:
        """∂_ν u on every boundary node."""
        return self.neumann @ u


# --- Boundary data ---

@dataclass
class BoundarySignal:
    """Dirichlet data: values[n, b] at time n·dt on boundary node b (order of grid.boundary_index)."""
    dt: float
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise FieldValidationError("boundary signal must be (time, boundary node)")
        scale = max(1.0, float(np.max(np.abs(self.values))) if self.values.size else 1.0)
        if np.max(np.abs(self.values[0])) > 1e-12 * scale:
            raise FieldValidationError("boundary signal must vanish at t = 0")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])


@dataclass
class ForwardResult:
    dt: float
    trace: np.ndarray
    gamma_sharp: np.ndarray
    history: Optional[np.ndarray] = None
    trace_ratio: float = float("nan")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.trace.shape[0])


def solve_forward(m: MetricField, f: BoundarySignal, solver: WaveSolver = None, gamma_sharp: np.ndarray = None,
                  keep_history: bool = False, report_ratio: bool = False) -> ForwardResult:
    """
    Dirichlet problem with zero initial data; Neumann trace on gamma_sharp (default all of Γ).
    With `report_ratio`, ‖∂_ν u‖_{L²(Σ)} / ‖f‖_{H^{1,1}} is filled in.
    """
    solver = solver or WaveSolver(m, dt=f.dt)
    if abs(solver.dt - f.dt) > 1e-12 * f.dt:
        raise FieldValidationError(f"signal dt {f.dt} differs from solver dt {solver.dt}")
    if f.values.shape[1] != solver.boundary.size:
        raise FieldValidationError("boundary signal does not match the boundary nodes")
    sel = np.arange(solver.boundary.size) if gamma_sharp is None else np.asarray(gamma_sharp)
    n_steps = f.n_steps
    trace = np.zeros((n_steps + 1, sel.size))
    history = np.zeros((n_steps + 1, m.grid.n_nodes)) if keep_history else None

    def _observe(n, u):
        trace[n] = solver.neumann_trace(u)[sel]
        if history is not None:
            history[n] = u

    solver.march(n_steps, boundary=lambda n: f.values[n], observer=_observe)
    result = ForwardResult(f.dt, trace, sel, history)
    if report_ratio:
        f_norm = h11_norm(f, m.grid)
        out = np.sqrt(f.dt * solver.ds * np.sum(trace ** 2))
        result.trace_ratio = float(out / f_norm) if f_norm > 0.0 else 0.0
    return result


@dataclass
class SourceResult:
    dt: float
    history: Optional[np.ndarray]
    energy_ratio: float
    norms_l2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norms_h1: np.ndarray = field(default_factory=lambda: np.zeros(0))


def solve_with_source(m: MetricField, z: Callable[[int], Optional[np.ndarray]], n_steps: int,
                      solver: WaveSolver = None, backward: bool = False, keep_history: bool = True,
                      observer: Callable[[int, np.ndarray], None] = None, dtype=float) -> SourceResult:
    """
    (∂_t² − Δ_g) r = z with r = 0 on the boundary and zero data at t = 0
    (backward: zero data at t = T, solved in reversed time). Returned history is in forward time order.
    """
    solver = solver or WaveSolver(m)
    dt = solver.dt
    z0 = z(n_steps if backward else 0)
    if z0 is not None and np.max(np.abs(np.asarray(z0)[m.grid.in_domain.ravel()])) > 1e-12:
        edge = "T" if backward else "0"
        raise FieldValidationError(f"source must vanish at t = {edge}")

    src = (lambda k: z(n_steps - k)) if backward else z
    history = np.zeros((n_steps + 1, m.grid.n_nodes), dtype=dtype) if keep_history else None
    norms_l2 = np.zeros(n_steps + 1)
    norms_h1 = np.zeros(n_steps + 1)
    z_sq = [0.0]
    peak = [0.0]
    prev = [None]
    mass = solver.lb.mass

    def _observe(k, u):
        n = n_steps - k if backward else k
        if history is not None:
            history[n] = u
        l2 = np.sqrt(np.real(np.vdot(u, mass * u)))
        grad = np.sqrt(max(0.0, np.real(np.vdot(u, solver.lb.stiffness @ u))))
        norms_l2[n] = l2
        norms_h1[n] = np.sqrt(l2 ** 2 + grad ** 2)
        zk = src(k)
        if zk is not None:
            z_sq[0] += dt * np.real(np.vdot(zk, mass * zk))
        if prev[0] is not None:
            vel = np.sqrt(np.real(np.vdot(u - prev[0], mass * (u - prev[0])))) / dt
            peak[0] = max(peak[0], vel + grad)
        prev[0] = u.copy()
        if observer:
            observer(n, u)

    solver.march(n_steps, source=src, observer=_observe, dtype=dtype)
    z_norm = np.sqrt(z_sq[0])
    ratio = float(peak[0] / z_norm) if z_norm > 0.0 else 0.0
    return SourceResult(dt, history, ratio, norms_l2, norms_h1)


@dataclass
class InitialValueResult:
    dt: float
    history: np.ndarray
    energies: np.ndarray


def solve_initial_value(m: MetricField, u0: np.ndarray, n_steps: int, solver: WaveSolver = None,
                        u1: np.ndarray = None) -> InitialValueResult:
    """Homogeneous Dirichlet problem from u(0) = u0, ∂_t u(0) = 0 (or an explicit second level u1)."""
    solver = solver or WaveSolver(m)
    u0 = np.asarray(u0, dtype=float).ravel() * m.grid.interior_mask.ravel()
    history = np.zeros((n_steps + 1, m.grid.n_nodes))
    energies = np.zeros(n_steps)

    def _observe(n, u):
        history[n] = u
        if n >= 1:
            energies[n - 1] = solver.energy(history[n], history[n - 1])

    solver.march(n_steps, observer=_observe, u0=u0, u1=u1)
    return InitialValueResult(solver.dt, history, energies)


# --- DtN ---

@dataclass
class DtnMatrix:
    """Neumann traces on Γ♮ of the solutions for each basis input; outputs[a, n, b]."""
    grid: DomainGrid
    dt: float
    gamma_sharp: np.ndarray
    outputs: np.ndarray
    basis_labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.gamma_sharp.size == 0:
            raise FieldValidationError("Γ♮ must not be empty")
        allowed = set(self.grid.gamma_minus().tolist())
        if not set(np.asarray(self.gamma_sharp).tolist()) <= allowed:
            raise FieldValidationError("Γ♮ must lie inside Γ₋")

    def __sub__(self, other: "DtnMatrix") -> "DtnMatrix":
        if self.outputs.shape != other.outputs.shape or not np.array_equal(self.gamma_sharp, other.gamma_sharp):
            raise FieldValidationError("DtN matrices were assembled on different bases or Γ♮")
        return DtnMatrix(self.grid, self.dt, self.gamma_sharp, self.outputs - other.outputs, self.basis_labels)

    @property
    def n_basis(self) -> int:
        return self.outputs.shape[0]

    def as_matrix(self) -> np.ndarray:
        """(n_outputs, n_basis)."""
        return self.outputs.reshape(self.n_basis, -1).T

    def first_active_time(self, rel_tol: float = 1e-8) -> float:
        """Earliest time at which any output exceeds rel_tol of the global peak."""
        mag = np.max(np.abs(self.outputs), axis=(0, 2))
        peak = np.max(mag)
        if peak == 0.0:
            return float("inf")
        return float(self.dt * np.argmax(mag > rel_tol * peak))


def select_gamma_sharp(grid: DomainGrid, fraction: float = 1.0) -> np.ndarray:
    """Centred portion of Γ₋ (by angle about the lowest boundary point) holding `fraction` of its nodes."""
    gm = grid.gamma_minus()
    if not 0.0 < fraction <= 1.0:
        raise FieldValidationError("gamma_sharp fraction must be in (0, 1]")
    pts = grid.points[grid.boundary_index[gm]] - np.asarray(grid.center)
    spread = np.linalg.norm(pts[:, :-1], axis=-1)
    order = np.argsort(spread, kind="stable")
    count = max(1, int(round(fraction * gm.size)))
    return np.sort(gm[order[:count]])


def make_dtn_basis(grid: DomainGrid, dt: float, T: float, n_spatial: int, n_temporal: int,
                   width: float = None) -> List[BoundarySignal]:
    """Boundary bumps times sin² pulses; every pulse starts at or after t = 0."""
    if n_spatial < 1 or n_temporal < 1:
        raise FieldValidationError("DtN basis needs at least one spatial and one temporal function")
    bnd_pts = grid.points[grid.boundary_index]
    c = np.asarray(grid.center)
    r_eff = grid.effective_radius
    if grid.dim == 2:
        ang = 2.0 * np.pi * (np.arange(n_spatial) + 0.5) / n_spatial
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        default_width = 1.5 * 2.0 * np.pi * r_eff / n_spatial
    else:
        k = np.arange(n_spatial) + 0.5
        cos_t = 1.0 - 2.0 * k / n_spatial
        sin_t = np.sqrt(1.0 - cos_t ** 2)
        phi = np.pi * (1.0 + 5.0 ** 0.5) * k
        dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
        default_width = 1.5 * r_eff * np.sqrt(4.0 * np.pi / n_spatial)
    width = default_width if width is None else width

    n_steps = int(np.ceil(T / dt - 1e-9))
    times = dt * np.arange(n_steps + 1)
    tau = 2.0 * T / (n_temporal + 1)

    basis = []
    for i, direction in enumerate(dirs):
        centre = bnd_pts[np.argmin(np.linalg.norm(bnd_pts - (c + r_eff * direction), axis=-1))]
        dist = np.linalg.norm(bnd_pts - centre, axis=-1)
        bump = np.where(dist < width, np.cos(0.5 * np.pi * dist / width) ** 2, 0.0)
        for mth in range(n_temporal):
            t0 = 0.5 * mth * tau
            phase = (times - t0) / tau
            pulse = np.where((phase > 0.0) & (phase < 1.0), np.sin(np.pi * phase) ** 2, 0.0)
            basis.append(BoundarySignal(dt, pulse[:, None] * bump[None, :], label=f"s{i}_t{mth}"))
    return basis


def assemble_dtn(m: MetricField, basis: List[BoundarySignal], gamma_sharp: np.ndarray,
                 solver: WaveSolver = None) -> DtnMatrix:
    if not basis:
        raise FieldValidationError("empty DtN basis")
    solver = solver or WaveSolver(m, dt=basis[0].dt)
    outputs = np.stack([solve_forward(m, f, solver, gamma_sharp).trace for f in basis])
    return DtnMatrix(m.grid, basis[0].dt, np.asarray(gamma_sharp), outputs, [f.label for f in basis])


def _boundary_graph_laplacian(grid: DomainGrid) -> sp.csr_matrix:
    bnd = grid.boundary_index
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[bnd] = np.arange(bnd.size)
    idx = np.stack(np.unravel_index(bnd, grid.shape), axis=-1)
    shape = np.asarray(grid.shape)
    rows, cols = [], []
    for offset in itertools.product((-1, 0, 1), repeat=grid.dim):
        if not any(offset):
            continue
        nb = idx + np.asarray(offset)
        ok = np.all((nb >= 0) & (nb < shape), axis=-1)
        flat = np.ravel_multi_index(tuple(np.clip(nb, 0, shape - 1).T), grid.shape)
        ok &= pos[flat] >= 0
        rows.append(np.flatnonzero(ok))
        cols.append(pos[flat[ok]])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(bnd.size, bnd.size))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def _h11_pairing(fa, fb, lap, grid: DomainGrid, dt: float) -> float:
    h = min(grid.spacing)
    va, vb = fa.values, fb.values
    la, lb = (lap @ va.T).T, (lap @ vb.T).T
    da, db = np.diff(va, axis=0) / dt, np.diff(vb, axis=0) / dt
    val = (2.0 * np.sum(va * vb) + np.sum(va * lb) / h ** 2 + np.sum(la * lb) / h ** 4) * dt
    val += np.sum(da * db) * dt
    return float(val * boundary_element(grid))


def h11_gram(basis: List[BoundarySignal], grid: DomainGrid) -> np.ndarray:
    """
    Gram matrix of the basis in the H^{1,1} surrogate:
    L²(0,T; H²(Γ)) with tangential graph-Laplacian derivatives plus H¹(0,T; L²(Γ)).
    """
    lap = _boundary_graph_laplacian(grid)
    dt = basis[0].dt
    n = len(basis)
    gram = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            gram[a, b] = gram[b, a] = _h11_pairing(basis[a], basis[b], lap, grid, dt)
    return gram


def h11_norm(f: BoundarySignal, grid: DomainGrid) -> float:
    return float(np.sqrt(max(0.0, _h11_pairing(f, f, _boundary_graph_laplacian(grid), grid, f.dt))))


@dataclass
class NormEstimate:
    value: float
    method: str
    iterations: int


def _output_weights(diff: DtnMatrix) -> float:
    return diff.dt * boundary_element(diff.grid)


def dtn_operator_norm(diff: DtnMatrix, gram: np.ndarray, tol: float = 1e-8, max_iter: int = 500,
                      seed: int = 0) -> NormEstimate:
    """
    ‖Λ₁ − Λ₂‖ from H^{1,1} inputs (Gram `gram`) to L²(Σ♮), by power iteration on G⁻¹ AᵀWA.
    """
    a = diff.as_matrix()
    if not np.any(a):
        return NormEstimate(0.0, "power", 0)
    w = _output_weights(diff)
    ata = w * (a.T @ a)
    chol = sla.cho_factor(gram)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(ata.shape[0])
    c /= np.sqrt(c @ gram @ c)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = sla.cho_solve(chol, ata @ c)
        lam_new = float(y @ ata @ y / (y @ gram @ y))
        c = y / np.sqrt(y @ gram @ y)
        if abs(lam_new - lam) <= tol * max(lam_new, np.finfo(float).tiny):
            return NormEstimate(float(np.sqrt(max(lam_new, 0.0))), "power", it)
        lam = lam_new
    raise SolverError(f"DtN norm power iteration did not converge in {max_iter} iterations")


def dtn_operator_norm_dense(diff: DtnMatrix, gram: np.ndarray) -> NormEstimate:
    a = diff.as_matrix()
    ata = _output_weights(diff) * (a.T @ a)
    top = sla.eigh(ata, gram, eigvals_only=True)[-1]
    return NormEstimate(float(np.sqrt(max(top, 0.0))), "dense", 1)


# --- Comparing two metrics through their partial DtN maps ---

@dataclass
class DtnComparison:
    diff_norm: float
    base_norm: float
    method: str
    dtn1: DtnMatrix
    dtn2: DtnMatrix

    @property
    def relative(self) -> float:
        return self.diff_norm / self.base_norm if self.base_norm > 0.0 else float("nan")


def _norm_with_fallback(diff: DtnMatrix, gram: np.ndarray, tol: float, max_iter: int) -> NormEstimate:
    try:
        return dtn_operator_norm(diff, gram, tol, max_iter)
    except SolverError as e:
        log.warning(f"{e}; using the dense generalized eigenvalue problem instead")
        return dtn_operator_norm_dense(diff, gram)


def dtn_difference(m1: MetricField, m2: MetricField, T: float, n_spatial: int, n_temporal: int,
                   gamma_fraction: float = 1.0, dt: float = None, cfl: float = DEFAULT_CFL,
                   power_tol: float = 1e-8, power_maxiter: int = 500) -> DtnComparison:
    """‖Λ♮₁ − Λ♮₂‖ and ‖Λ♮₁‖ on a shared basis, Γ♮ and time step."""
    if m1.grid != m2.grid:
        raise FieldValidationError("metrics live on different grids")
    grid = m1.grid
    dt = dt or min(WaveSolver(m1, cfl=cfl).dt, WaveSolver(m2, cfl=cfl).dt)
    basis = make_dtn_basis(grid, dt, T, n_spatial, n_temporal)
    gamma_sharp = select_gamma_sharp(grid, gamma_fraction)
    dtn1 = assemble_dtn(m1, basis, gamma_sharp, WaveSolver(m1, dt=dt))
    dtn2 = dtn1 if np.array_equal(m1.g, m2.g) else assemble_dtn(m2, basis, gamma_sharp, WaveSolver(m2, dt=dt))
    gram = h11_gram(basis, grid)
    diff = _norm_with_fallback(dtn1 - dtn2, gram, power_tol, power_maxiter)
    base = _norm_with_fallback(dtn1, gram, power_tol, power_maxiter)
    log.debug(f"DtN difference on {grid.shape}: {diff.value:.4e} (base {base.value:.4e}, {diff.method})")
    return DtnComparison(diff.value, base.value, diff.method, dtn1, dtn2)
