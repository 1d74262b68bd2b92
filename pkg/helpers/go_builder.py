# helpers/go_builder.py
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from helpers.field_classes import ConfigError, FieldValidationError, GeodesicError, MetricField
from helpers.geodesic_flow import (MetricInterpolant, direction_from_angles, polar_coords_batch, rk4_step,
                                   ANGLE_STEP)
from helpers.metric_core import LaplaceBeltrami, grid_gradient
from helpers.wave_dtn import WaveSolver, solve_with_source

# Get a logger for this specific module
log = logging.getLogger(__name__)

NODES_PER_WAVELENGTH = 8
DEFAULT_DELTA_FACTOR = 0.2
SOURCE_MODES = ("transport", "discrete")


# --- Time profile ---

@dataclass(frozen=True)
class Kappa:
    """κ(s) = c s²(δ − s)² on (0, δ), zero elsewhere, with ‖κ‖_{L²} = 1."""
    delta: float

    @property
    def c(self) -> float:
        return float(np.sqrt(630.0 / self.delta ** 9))

    def __call__(self, s, order: int = 0) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        d, c = self.delta, self.c
        inside = (s > 0.0) & (s < d)
        if order == 0:
            val = c * s ** 2 * (d - s) ** 2
        elif order == 1:
            val = 2.0 * c * s * (d - s) * (d - 2.0 * s)
        elif order == 2:
            val = 2.0 * c * (d ** 2 - 6.0 * d * s + 6.0 * s ** 2)
        elif order == 3:
            val = 2.0 * c * (12.0 * s - 6.0 * d)
        else:
            raise ValueError(f"κ derivative of order {order} is not tabulated")
        return np.where(inside, val, 0.0)


def default_delta(grid) -> float:
    return DEFAULT_DELTA_FACTOR * grid.diameter


def source_point(grid, delta: float, angle: float = np.pi) -> np.ndarray:
    """Point y on the sphere |y − c| = R_eff + δ + 2h in direction `angle`, so every node has φ ≥ δ."""
    radius = grid.effective_radius + delta + 2.0 * max(grid.spacing)
    return np.asarray(grid.center) + radius * np.array([np.cos(angle), np.sin(angle)])


# --- Off-grid sampling of nodal fields ---

class NodalSampler:
    """Bicubic splines over a stack of nodal fields; NaN outside the grid box."""

    def __init__(self, grid, fields: dict):
        self.grid = grid
        ax, ay = grid.axes
        self._splines = {k: RectBivariateSpline(ax, ay, np.asarray(v, dtype=float), kx=3, ky=3)
                         for k, v in fields.items()}
        self.lo = np.asarray(grid.origin)
        self.hi = np.asarray(grid.upper)

    def __call__(self, pts: np.ndarray) -> dict:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        inside = np.all((flat >= self.lo) & (flat <= self.hi), axis=-1)
        out = {}
        for k, spline in self._splines.items():
            val = np.full(flat.shape[0], np.nan)
            if np.any(inside):
                val[inside] = spline.ev(flat[inside, 0], flat[inside, 1])
            out[k] = val.reshape(pts.shape[:-1])
        return out


# --- Phase ---

@dataclass
class PhaseField:
    """
    Geodesic distance φ(x) = r from y on every grid node, the arrival covector ∇φ,
    the angle θ of the launching direction measured from the inward normal at y, and α_g.
    """
    grid: object
    y: np.ndarray
    base_angle: float
    phi: np.ndarray
    grad: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    ray_residual: float
    _sampler: Optional[NodalSampler] = field(default=None, repr=False)

    @property
    def phi_flat(self) -> np.ndarray:
        return self.phi.ravel()

    @property
    def mu(self) -> np.ndarray:
        """|⟨θ, ν(y)⟩| at every node."""
        return np.abs(np.cos(self.theta))

    def max_in_domain(self) -> float:
        return float(np.max(self.phi[self.grid.in_domain]))

    def sample(self, pts: np.ndarray) -> dict:
        if self._sampler is None:
            self._sampler = NodalSampler(self.grid, {
                "phi": self.phi, "theta": self.theta, "alpha": self.alpha,
                "grad0": self.grad[..., 0], "grad1": self.grad[..., 1],
            })
        return self._sampler(pts)

    def eikonal_residual(self, m: MetricField) -> float:
        """max over interior nodes of | |∇_h φ|²_g − 1 |, ∇_h central differences."""
        grad = grid_gradient(self.phi, self.grid)
        ginv = np.linalg.inv(m.g)
        norm2 = np.einsum("...i,...ij,...j->...", grad, ginv, grad)
        mask = self.grid.interior_mask
        return float(np.max(np.abs(norm2[mask] - 1.0)))

    def gradient_mismatch(self) -> float:
        """max |∇φ − ∇_h φ| over interior nodes."""
        fd = grid_gradient(self.phi, self.grid)
        mask = self.grid.interior_mask
        return float(np.max(np.linalg.norm(fd[mask] - self.grad[mask], axis=-1)))


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def eikonal_phase(m: MetricField, y, step: float = None, interp: MetricInterpolant = None,
                  tol: float = 1e-10) -> PhaseField:
    """
    φ = geodesic distance from an exterior point y, built from geodesic polar coordinates.
    Raises GeodesicError when exp_y folds over the grid (the metric is not simple at this resolution).
    """
    grid = m.grid
    if grid.dim != 2:
        raise ConfigError("the geometric-optics builder supports 2-D grids only")
    y = np.asarray(y, dtype=float)
    if float(grid.signed_distance(y)) <= 0.0:
        raise ConfigError(f"source point {y} must lie outside the domain")
    interp = interp or MetricInterpolant(m)
    step = 0.5 * min(grid.spacing) if step is None else step
    centre = np.asarray(grid.center)
    base = float(np.arctan2(*(centre - y)[::-1]))

    polar = polar_coords_batch(m, y, grid.points, step, interp, tol=tol)
    if np.any(polar.jac_det <= 0.0):
        bad = int(np.sum(polar.jac_det <= 0.0))
        raise GeodesicError(f"metric is not simple at resolution: exp_y folds at {bad} nodes")

    shape = grid.shape
    phi = polar.r.reshape(shape)
    grad = polar.xi.reshape(shape + (2,))
    theta = _wrap(polar.angles[:, 0] - base).reshape(shape)
    alpha = polar.alpha.reshape(shape)

    ginv = np.linalg.inv(m.g)
    norm2 = np.einsum("...i,...ij,...j->...", grad, ginv, grad)
    ray_residual = float(np.max(np.abs(norm2[grid.in_domain] - 1.0)))
    log.info(f"Phase from y={np.round(y, 4)}: φ ∈ [{phi[grid.in_domain].min():.3f}, "
             f"{phi[grid.in_domain].max():.3f}], ray residual {ray_residual:.2e}")
    return PhaseField(grid, y, base, phi, grad, theta, alpha, ray_residual)


# --- Amplitudes ---

class AmplitudeField:
    """Time-dependent nodal amplitude a(t, ·) on in-domain nodes; values(t, order) is ∂_t^order a."""

    def __init__(self, grid, label: str = ""):
        self.grid = grid
        self.label = label
        self.mask = grid.in_domain.ravel()

    def values(self, t: float, order: int = 0) -> np.ndarray:
        raise NotImplementedError

    def support_window(self):
        raise NotImplementedError


class PolarAmplitude(AmplitudeField):
    """a(t, x) = α(x)^{-1/4} κ(t − φ(x)) b(θ(x)): the transport solution along the fan from y."""

    def __init__(self, phase: PhaseField, kappa: Kappa, weight: Callable[[np.ndarray], np.ndarray] = None,
                 label: str = ""):
        super().__init__(phase.grid, label)
        self.phase = phase
        self.kappa = kappa
        self.weight = weight or (lambda th: np.ones_like(th))
        factor = phase.alpha.ravel() ** -0.25 * self.weight(phase.theta.ravel())
        self.factor = np.where(self.mask, factor, 0.0)
        self.phi = phase.phi_flat
        self.metric: Optional[MetricField] = None

    def values(self, t: float, order: int = 0) -> np.ndarray:
        return self.factor * self.kappa(t - self.phi, order)

    def sample(self, pts: np.ndarray, t) -> np.ndarray:
        """a at arbitrary points, t broadcast against pts[..., 0]; zero where α is degenerate."""
        s = self.phase.sample(pts)
        alpha = s["alpha"]
        ok = np.isfinite(alpha) & (alpha > 1e-14)
        amp = np.where(ok, np.where(ok, alpha, 1.0) ** -0.25, 0.0) * self.weight(np.nan_to_num(s["theta"]))
        return amp * self.kappa(t - np.nan_to_num(s["phi"]))

    def support_window(self):
        live = self.mask & (self.factor != 0.0)
        if not np.any(live):
            return 0.0, 0.0
        return float(self.phi[live].min()), float(self.phi[live].max() + self.kappa.delta)

    def residual(self, t: float, lb: LaplaceBeltrami = None) -> float:
        """Transport-equation residual at time t against the metric the amplitude was built for."""
        if self.metric is None:
            raise ConfigError(f"{self.label or 'amplitude'}: no metric attached")
        return transport_residual(self.metric, self, self.phase, t, lb)


def _polar_transport(m: MetricField, phase: PhaseField, kappa: Kappa, weight, label: str) -> PolarAmplitude:
    if phase.grid != m.grid:
        raise FieldValidationError(f"{label}: phase and metric live on different grids")
    amp = PolarAmplitude(phase, kappa, weight, label=label)
    amp.metric = m
    return amp


def transport_a1(m: MetricField, phase: PhaseField, kappa: Kappa, weight=None) -> PolarAmplitude:
    return _polar_transport(m, phase, kappa, weight, "a1")


def transport_a2(m: MetricField, phase: PhaseField, kappa: Kappa, weight=None) -> PolarAmplitude:
    return _polar_transport(m, phase, kappa, weight, "a2")


def transport_residual(m: MetricField, amp: AmplitudeField, phase: PhaseField, t: float,
                       lb: LaplaceBeltrami = None, source: np.ndarray = None) -> float:
    """
    max |∂_t a + ⟨∇φ, ∇a⟩_g + ½(Δ_g φ) a − source| on interior nodes, relative to max |∂_t a|.
    """
    grid = m.grid
    lb = lb or LaplaceBeltrami(m)
    a = amp.values(t)
    da = amp.values(t, 1)
    grad_a = grid_gradient(a.reshape(grid.shape), grid).reshape(-1, grid.dim)
    ginv = np.linalg.inv(m.g).reshape(-1, grid.dim, grid.dim)
    grad_phi = phase.grad.reshape(-1, grid.dim)
    lap_phi = lb.apply(phase.phi_flat)
    res = da + np.einsum("ni,nij,nj->n", grad_phi, ginv, grad_a) + 0.5 * lap_phi * a
    if source is not None:
        res = res - source
    mask = grid.interior_mask.ravel()
    scale = max(float(np.max(np.abs(da[mask]))), np.finfo(float).tiny)
    return float(np.max(np.abs(res[mask])) / scale)


class TabulatedAmplitude(AmplitudeField):
    """
    a(t, x) = α₂(x)^{-1/4} J(t − r(x), x), with J tabulated per node on a uniform ρ grid
    for ∂_t^p, p = 0, 1, 2. Outside the tabulated ρ range the integrand vanishes, so J = 0.
    """

    def __init__(self, grid, nodes: np.ndarray, pre: np.ndarray, r: np.ndarray, rho0: float, drho: float,
                 tables: np.ndarray, label: str = "a3"):
        super().__init__(grid, label)
        self.nodes = nodes
        self.pre = pre
        self.r = r
        self.rho0 = rho0
        self.drho = drho
        self.tables = tables

    @classmethod
    def zero(cls, grid, label: str = "a3") -> "TabulatedAmplitude":
        return cls(grid, np.zeros(0, dtype=int), np.zeros(0), np.zeros(0), 0.0, 1.0,
                   np.zeros((3, 0, 2), dtype=complex), label)

    def values(self, t: float, order: int = 0) -> np.ndarray:
        out = np.zeros(self.grid.n_nodes, dtype=complex)
        if self.nodes.size == 0:
            return out
        if order > 2:
            raise ValueError("tabulated amplitude carries time derivatives up to order 2")
        n_rho = self.tables.shape[-1]
        pos = (t - self.r - self.rho0) / self.drho
        i0 = np.floor(pos).astype(int)
        w = pos - i0
        ok = (i0 >= 0) & (i0 < n_rho - 1)
        i0c = np.clip(i0, 0, n_rho - 2)
        rows = np.arange(self.nodes.size)
        tab = self.tables[order]
        val = (1.0 - w) * tab[rows, i0c] + w * tab[rows, i0c + 1]
        out[self.nodes] = np.where(ok, self.pre * val, 0.0)
        return out

    def support_window(self):
        if self.nodes.size == 0:
            return 0.0, 0.0
        rho_hi = self.rho0 + self.drho * (self.tables.shape[-1] - 1)
        return float(self.r.min() + self.rho0), float(self.r.max() + rho_hi)


def _trace_samples(interp, y, ang, r, n_samples):
    """Points and velocities at s_k = r·k/K along each ray from y; returns (N, K+1, d) arrays."""
    theta = direction_from_angles(ang[:, None])
    x = np.broadcast_to(y, theta.shape).copy()
    xi = theta.copy()
    h = r / n_samples
    xs = [x]
    vs = [theta]
    for _ in range(n_samples):
        x, xi = rk4_step(interp, x, xi, h)
        ginv, _ = interp.inverse_and_gradient(x)
        xs.append(x)
        vs.append(np.einsum("nij,nj->ni", ginv, xi))
    return np.stack(xs, axis=1), np.stack(vs, axis=1)


def dual_difference(g1: MetricField, g2: MetricField) -> np.ndarray:
    """s = g₂^{-1} − g₁^{-1} at every node."""
    return np.linalg.inv(g2.g) - np.linalg.inv(g1.g)


def interaction_weight(g1: MetricField, g2: MetricField, phase1: PhaseField) -> np.ndarray:
    """q = s(∇φ₁, ∇φ₁) at every node."""
    s = dual_difference(g1, g2)
    return np.einsum("...i,...ij,...j->...", phase1.grad, s, phase1.grad)


def transport_a3(g1: MetricField, g2: MetricField, phase1: PhaseField, phase2: PhaseField,
                 a2: PolarAmplitude, h: float, step: float = None, interp2: MetricInterpolant = None,
                 n_rho: int = 48) -> TabulatedAmplitude:
    """
    Second amplitude of the forward solution: L_{g₂,φ₂} a₃ = a₂ m with a₃ = 0 near y,
        m = −(i/2) e^{i(φ₁ − φ₂)/h} s(∇φ₁, ∇φ₁),
    integrated along the g₂ geodesics from y that reach each node.
    """
    grid = g1.grid
    if np.array_equal(g1.g, g2.g):
        return TabulatedAmplitude.zero(grid)
    interp2 = interp2 or MetricInterpolant(g2)
    step = 0.5 * min(grid.spacing) if step is None else step
    kappa = a2.kappa

    nodes = grid.domain_index
    r = phase2.phi_flat[nodes]
    ang = phase2.theta.ravel()[nodes] + phase2.base_angle
    n_samples = max(8, int(np.ceil(r.max() / step)))
    y = phase2.y

    # 1. Sample the g₂ rays and the neighbouring rays ±Δθ
    xs, vs = _trace_samples(interp2, y, ang, r, n_samples)
    xp, _ = _trace_samples(interp2, y, ang + ANGLE_STEP, r, n_samples)
    xm, _ = _trace_samples(interp2, y, ang - ANGLE_STEP, r, n_samples)
    dx_dth = (xp - xm) / (2.0 * ANGLE_STEP)
    det = vs[..., 0] * dx_dth[..., 1] - vs[..., 1] * dx_dth[..., 0]
    sqrt_det2 = interp2.sqrt_det(xs.reshape(-1, 2)).reshape(det.shape)
    alpha2_q = np.sqrt(sqrt_det2 * np.abs(det))  # α₂^{1/4}

    # 2. Fields of the first metric along the rays
    f1 = phase1.sample(xs)
    s_nodes = dual_difference(g1, g2)
    s_sampler = NodalSampler(grid, {"s00": s_nodes[..., 0, 0], "s01": s_nodes[..., 0, 1], "s11": s_nodes[..., 1, 1]})
    sv = s_sampler(xs)
    gx, gy = f1["grad0"], f1["grad1"]
    q = sv["s00"] * gx ** 2 + 2.0 * sv["s01"] * gx * gy + sv["s11"] * gy ** 2
    alpha1 = f1["alpha"]
    ok = np.isfinite(q) & np.isfinite(alpha1) & (alpha1 > 1e-14)
    q = np.where(ok, q, 0.0)
    phi1 = np.where(ok, f1["phi"], 0.0)
    a2_fac = np.where(ok, np.where(ok, alpha1, 1.0) ** -0.25 * a2.weight(np.nan_to_num(f1["theta"])), 0.0)

    s_grid = r[:, None] * np.arange(n_samples + 1)[None, :] / n_samples
    base = alpha2_q * a2_fac * (-0.5j) * np.exp(1j * (phi1 - s_grid) / h) * q
    live = np.abs(base) > 0.0
    if not np.any(live):
        log.info("a3: interaction weight vanishes along every ray")
        return TabulatedAmplitude.zero(grid)

    # 3. Tabulate J^{(p)}(ρ) = ∫₀^r base(s) κ^{(p)}(s + ρ − φ₁(x(s))) ds
    shift = (phi1 - s_grid)[live]
    drho = kappa.delta / 40.0
    rho0 = float(shift.min()) - 2.0 * drho
    rho_hi = float(shift.max()) + kappa.delta + 2.0 * drho
    n_rho = max(n_rho, int(np.ceil((rho_hi - rho0) / drho)) + 1)
    rho = rho0 + drho * np.arange(n_rho)
    ds = r / n_samples
    tables = np.zeros((3, nodes.size, n_rho), dtype=complex)
    for k, rh in enumerate(rho):
        arg = s_grid + rh - phi1
        for p in range(3):
            integrand = base * kappa(arg, p)
            tables[p, :, k] = ds * (integrand.sum(axis=1) - 0.5 * (integrand[:, 0] + integrand[:, -1]))

    pre = phase2.alpha.ravel()[nodes] ** -0.25
    log.info(f"a3 tabulated on {nodes.size} nodes, {n_samples + 1} samples per ray, {n_rho} shifts")
    return TabulatedAmplitude(grid, nodes, pre, r, rho0, drho, tables)


def a3_transport_residual(g1: MetricField, g2: MetricField, a3: TabulatedAmplitude, a2: PolarAmplitude,
                          phase1: PhaseField, phase2: PhaseField, h: float, t: float) -> float:
    """Residual of L_{g₂,φ₂} a₃ = a₂ m at time t (relative to max |∂_t a₃|)."""
    q = interaction_weight(g1, g2, phase1).ravel()
    m_fac = -0.5j * np.exp(1j * (phase1.phi_flat - phase2.phi_flat) / h) * q
    return transport_residual(g2, a3, phase2, t, source=a2.values(t) * m_fac)


# --- WKB assembly ---

@dataclass
class WkbSolution:
    """u = ansatz + remainder; remainder history is in forward time order."""
    h: float
    dt: float
    n_steps: int
    source_mode: str
    ansatz: Callable[[int], np.ndarray]
    remainder: Optional[np.ndarray]
    norms_l2: np.ndarray
    norms_h1: np.ndarray
    energy_ratio: float

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def remainder_l2(self) -> float:
        return float(np.max(self.norms_l2))

    @property
    def remainder_h1(self) -> float:
        return float(np.max(self.norms_h1))

    def u(self, n: int) -> np.ndarray:
        if self.remainder is None:
            raise ValueError("remainder history was not kept")
        return self.ansatz(n) + self.remainder[n]


def resolution_limit(grid) -> float:
    """Smallest h with NODES_PER_WAVELENGTH nodes across one wavelength 2πh."""
    return NODES_PER_WAVELENGTH * max(grid.spacing) / (2.0 * np.pi)


def default_h(t_c2: float, grid, cap: float = None) -> float:
    """h = ‖t‖_{C²}^{1/4}, clipped below by the resolution rule and above by `cap`."""
    h = float(t_c2) ** 0.25
    if cap is not None:
        h = min(h, cap)
    return max(h, resolution_limit(grid))


def check_resolution(grid, h: float):
    limit = resolution_limit(grid)
    if h < limit:
        raise ConfigError(f"h = {h:.4g} is under-resolved on this grid: need h ≥ {limit:.4g} "
                          f"({NODES_PER_WAVELENGTH} nodes per wavelength)")


def probe_horizon(phase: PhaseField, kappa: Kappa) -> float:
    """T* = max_Ω φ + 2δ: every amplitude from y has left Ω by T* − δ."""
    return phase.max_in_domain() + 2.0 * kappa.delta


def _discrete_source(ansatz, lb, dt, rows):
    def _z(n):
        if n == 0:
            return None
        d2 = (ansatz(n + 1) - 2.0 * ansatz(n) + ansatz(n - 1)) / dt ** 2
        return np.where(rows, -(d2 - lb.apply(ansatz(n))), 0.0)
    return _z


def build_wkb_backward(m: MetricField, a1: PolarAmplitude, phase1: PhaseField, h: float,
                       solver: WaveSolver = None, T_star: float = None, source_mode: str = "transport",
                       keep_history: bool = True) -> WkbSolution:
    """
    u₁ = e^{i(φ₁ − t)/h} a₁ + r₁ solving □_{g₁} u₁ = 0 with zero data at T* and zero boundary values
    for the remainder. source_mode="transport" drives r₁ with −e^{i(φ₁−t)/h}□a₁, "discrete" with the
    discrete wave operator applied to the ansatz.
    """
    if source_mode not in SOURCE_MODES:
        raise ConfigError(f"unknown source mode '{source_mode}'")
    grid = m.grid
    check_resolution(grid, h)
    solver = solver or WaveSolver(m)
    dt = solver.dt
    T_star = probe_horizon(phase1, a1.kappa) if T_star is None else T_star
    n_steps = solver.n_steps_for(T_star)
    mask = grid.in_domain.ravel()
    rows = grid.interior_mask.ravel()
    phi = phase1.phi_flat
    lb = solver.lb

    def ansatz(n):
        t = n * dt
        return np.where(mask, a1.values(t) * np.exp(1j * (phi - t) / h), 0.0)

    if source_mode == "transport":
        def z(n):
            t = n * dt
            a = a1.values(t)
            box = a1.values(t, 2) - lb.apply(a)
            return np.where(rows, -np.exp(1j * (phi - t) / h) * box, 0.0)
    else:
        z = _discrete_source(ansatz, lb, dt, rows)

    result = solve_with_source(m, z, n_steps, solver, backward=True, keep_history=keep_history, dtype=complex)
    log.info(f"WKB backward: h={h:.4g}, {n_steps} steps, max ‖r₁‖_L2 = {np.max(result.norms_l2):.3e}")
    return WkbSolution(h, dt, n_steps, source_mode, ansatz, result.history, result.norms_l2, result.norms_h1,
                       result.energy_ratio)


def build_wkb_forward(g1: MetricField, g2: MetricField, a2: PolarAmplitude, a3: AmplitudeField,
                      phase1: PhaseField, phase2: PhaseField, h: float, solver: WaveSolver = None,
                      T_star: float = None, source_mode: str = "transport",
                      keep_history: bool = True) -> WkbSolution:
    """
    u₂ = h e^{i(φ₁−t)/h} a₂ + e^{i(φ₂−t)/h} a₃ + r₂ solving □_{g₂} u₂ = 0 with zero initial data.
    The transport source is −(h e₁ k₀ + 2i e₁ k₁ + e₂ k₂) with
        k₀ = □₂ a₂,  k₁ = s(∇φ₁, ∇a₂) + ½ a₂ (Δ₂ φ₁ − Δ₁ φ₁),  k₂ = □₂ a₃.
    """
    if source_mode not in SOURCE_MODES:
        raise ConfigError(f"unknown source mode '{source_mode}'")
    grid = g2.grid
    check_resolution(grid, h)
    solver = solver or WaveSolver(g2)
    dt = solver.dt
    T_star = probe_horizon(phase1, a2.kappa) if T_star is None else T_star
    n_steps = solver.n_steps_for(T_star)
    mask = grid.in_domain.ravel()
    rows = grid.interior_mask.ravel()
    phi1, phi2 = phase1.phi_flat, phase2.phi_flat
    lb2 = solver.lb

    def ansatz(n):
        t = n * dt
        e1 = np.exp(1j * (phi1 - t) / h)
        e2 = np.exp(1j * (phi2 - t) / h)
        return np.where(mask, h * a2.values(t) * e1 + a3.values(t) * e2, 0.0)

    if source_mode == "transport":
        s = dual_difference(g1, g2).reshape(-1, grid.dim, grid.dim)
        grad_phi1 = phase1.grad.reshape(-1, grid.dim)
        lap_diff = lb2.apply(phi1) - LaplaceBeltrami(g1).apply(phi1)
        s_phi = np.einsum("nij,nj->ni", s, grad_phi1)

        def z(n):
            t = n * dt
            e1 = np.exp(1j * (phi1 - t) / h)
            e2 = np.exp(1j * (phi2 - t) / h)
            a = a2.values(t)
            b = a3.values(t)
            k0 = a2.values(t, 2) - lb2.apply(a)
            grad_a = grid_gradient(a.reshape(grid.shape), grid).reshape(-1, grid.dim)
            k1 = np.einsum("ni,ni->n", s_phi, grad_a) + 0.5 * a * lap_diff
            k2 = a3.values(t, 2) - lb2.apply(b)
            return np.where(rows, -(h * e1 * k0 + 2j * e1 * k1 + e2 * k2), 0.0)
    else:
        z = _discrete_source(ansatz, lb2, dt, rows)

    result = solve_with_source(g2, z, n_steps, solver, backward=False, keep_history=keep_history,
                               dtype=complex)
    log.info(f"WKB forward: h={h:.4g}, {n_steps} steps, max ‖r₂‖_L2 = {np.max(result.norms_l2):.3e}")
    return WkbSolution(h, dt, n_steps, source_mode, ansatz, result.history, result.norms_l2, result.norms_h1,
                       result.energy_ratio)


# --- Amplitude size ---

def aleph(amp: AmplitudeField, solver: WaveSolver, n_steps: int) -> float:
    """
    ‖a‖_{H¹(0,T;H²)} + ‖a‖_{H³(0,T;L²)} with discrete time differences and the grid Laplacian
    standing in for second derivatives.
    """
    dt = solver.dt
    lb = solver.lb
    mass = lb.mass
    intr = solver.interior

    def _h2(v):
        lap = lb.apply(v)[intr]
        return (np.real(np.vdot(v, mass * v)) + np.real(np.vdot(v, lb.stiffness @ v))
                + np.real(np.vdot(lap, mass[intr] * lap)))

    def _l2(v):
        return np.real(np.vdot(v, mass * v))

    space_time = 0.0
    time_only = 0.0
    window = []
    for n in range(n_steps + 1):
        window.append(amp.values(n * dt))
        if len(window) > 4:
            window.pop(0)
        cur = window[-1]
        space_time += dt * _h2(cur)
        time_only += dt * _l2(cur)
        if len(window) >= 2:
            d1 = (window[-1] - window[-2]) / dt
            space_time += dt * _h2(d1)
            time_only += dt * _l2(d1)
        if len(window) >= 3:
            d2 = (window[-1] - 2.0 * window[-2] + window[-3]) / dt ** 2
            time_only += dt * _l2(d2)
        if len(window) >= 4:
            d3 = (window[-1] - 3.0 * window[-2] + 3.0 * window[-3] - window[-4]) / dt ** 3
            time_only += dt * _l2(d3)
    return float(np.sqrt(space_time) + np.sqrt(time_only))
