# helpers/probe_pipeline.py
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from helpers.field_classes import ConfigError, MetricField
from helpers.go_builder import (Kappa, PhaseField, PolarAmplitude, WkbSolution, build_wkb_backward,
                                build_wkb_forward, default_delta, eikonal_phase, interaction_weight,
                                probe_horizon, source_point, transport_a1, transport_a2, transport_a3)
from helpers.wave_dtn import WaveSolver, solve_with_source

# Get a logger for this specific module
log = logging.getLogger(__name__)

# Nested boundary neighbourhoods O₁ ⊃ O₂ ⊃ O₃ as fractions of the collar width
BAND_WIDTHS = (1.0, 0.66, 0.33)


# --- Boundary bands and the cutoff ---

def band_masks(grid, widths=BAND_WIDTHS) -> list:
    depth = -grid.node_distance
    return [grid.in_domain & (depth < w * grid.collar_width) for w in widths]


def cutoff_field(grid, widths=BAND_WIDTHS) -> np.ndarray:
    """ϰ = 0 on O₃, 1 outside O₂, smoothstep in between; flat node vector."""
    depth = -grid.node_distance
    lo, hi = widths[2] * grid.collar_width, widths[1] * grid.collar_width
    s = np.clip((depth - lo) / (hi - lo), 0.0, 1.0)
    kappa = s * s * (3.0 - 2.0 * s)
    return np.where(grid.in_domain, kappa, 0.0).ravel()


def direction_profile(theta_c: float, width: float) -> Callable[[np.ndarray], np.ndarray]:
    """b(θ) = cos²(π(θ − θ_c)/2w) on |θ − θ_c| < w."""
    def _b(theta):
        x = (np.asarray(theta) - theta_c) / width
        return np.where(np.abs(x) < 1.0, np.cos(0.5 * np.pi * x) ** 2, 0.0)
    return _b


def mu_weight(theta):
    return np.abs(np.cos(theta))


# --- Probe set-up ---

@dataclass
class ProbeSetup:
    g1: MetricField
    g2: MetricField
    y: np.ndarray
    h: float
    kappa: Kappa
    T_star: float
    solver1: WaveSolver
    solver2: WaveSolver
    phase1: PhaseField
    phase2: PhaseField
    source_mode: str = "discrete"

    @property
    def grid(self):
        return self.g1.grid

    @property
    def dt(self) -> float:
        return self.solver1.dt

    @property
    def n_steps(self) -> int:
        return self.solver1.n_steps_for(self.T_star)


def prepare_probe(g1: MetricField, g2: MetricField, h: float, y=None, delta: float = None,
                  source_angle: float = -0.5 * np.pi, source_mode: str = "discrete",
                  step: float = None) -> ProbeSetup:
    """Phases of both metrics from one exterior point and a shared time step."""
    if g1.grid != g2.grid:
        raise ConfigError("probe metrics live on different grids")
    grid = g1.grid
    kappa = Kappa(default_delta(grid) if delta is None else delta)
    y = source_point(grid, kappa.delta, source_angle) if y is None else np.asarray(y, dtype=float)

    phase1 = eikonal_phase(g1, y, step)
    phase2 = phase1 if np.array_equal(g1.g, g2.g) else eikonal_phase(g2, y, step)
    dt = min(WaveSolver(g1).dt, WaveSolver(g2).dt)
    solver1 = WaveSolver(g1, dt=dt)
    solver2 = WaveSolver(g2, dt=dt)
    T_star = max(probe_horizon(phase1, kappa), probe_horizon(phase2, kappa))
    log.info(f"Probe from y={np.round(y, 3)}: h={h:.4g}, δ={kappa.delta:.3g}, T*={T_star:.3f}, dt={dt:.4g}")
    return ProbeSetup(g1, g2, y, h, kappa, T_star, solver1, solver2, phase1, phase2, source_mode)


# --- Forward half: u₂ and the correction w ---

@dataclass
class ForwardProbe:
    a2: PolarAmplitude
    a3: object
    wkb: WkbSolution
    u2: np.ndarray
    w: np.ndarray
    box_norm: float


def _assemble(wkb: WkbSolution) -> np.ndarray:
    return np.stack([wkb.ansatz(n) for n in range(wkb.n_steps + 1)]) + wkb.remainder


def run_forward_probe(setup: ProbeSetup) -> ForwardProbe:
    """
    u₂ solves the g₂ wave equation with zero initial data; w solves □_{g₁} w = −□_{g₁} u₂ with zero data
    and zero boundary values, so u₂ + w is the g₁ solution with the boundary values of u₂.
    """
    g1, g2 = setup.g1, setup.g2
    a2 = transport_a2(g1, setup.phase1, setup.kappa, mu_weight)
    a3 = transport_a3(g1, g2, setup.phase1, setup.phase2, a2, setup.h)
    wkb = build_wkb_forward(g1, g2, a2, a3, setup.phase1, setup.phase2, setup.h, setup.solver2,
                            setup.T_star, setup.source_mode)
    u2 = _assemble(wkb)

    dt = setup.dt
    lb1 = setup.solver1.lb
    band = (band_masks(setup.grid)[0] & setup.grid.interior_mask).ravel()
    mass = lb1.mass
    box_sq = {}

    def z_w(n):
        if n == 0 or n >= u2.shape[0] - 1:
            return None
        d2 = (u2[n + 1] - 2.0 * u2[n] + u2[n - 1]) / dt ** 2
        z = -(d2 - lb1.apply(u2[n]))
        box_sq[n] = dt * np.real(np.vdot(z[band], mass[band] * z[band]))
        return z

    w = solve_with_source(g1, z_w, wkb.n_steps, setup.solver1, keep_history=True, dtype=complex).history
    return ForwardProbe(a2, a3, wkb, u2, w, float(np.sqrt(sum(box_sq.values()))))


# --- Backward half: u₁ ---

@dataclass
class BackwardProbe:
    a1: PolarAmplitude
    wkb: WkbSolution
    u1: np.ndarray


def run_backward_probe(setup: ProbeSetup, weight: Callable = None) -> BackwardProbe:
    a1 = transport_a1(setup.g1, setup.phase1, setup.kappa, weight)
    wkb = build_wkb_backward(setup.g1, a1, setup.phase1, setup.h, setup.solver1, setup.T_star,
                             setup.source_mode)
    return BackwardProbe(a1, wkb, _assemble(wkb))


# --- The integral identity ---

@dataclass
class IdentityResult:
    lhs: complex
    rhs: complex
    pairing: complex

    @property
    def mismatch(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        if scale < 1e-300:
            return 0.0
        return float(abs(self.lhs - self.rhs) / scale)

    def as_dict(self) -> dict:
        return {
            "lhs_re": float(np.real(self.lhs)), "lhs_im": float(np.imag(self.lhs)),
            "rhs_re": float(np.real(self.rhs)), "rhs_im": float(np.imag(self.rhs)),
            "pairing_re": float(np.real(self.pairing)), "pairing_im": float(np.imag(self.pairing)),
            "mismatch": self.mismatch,
        }


def identity_sides(setup: ProbeSetup, back: BackwardProbe, fwd: ForwardProbe,
                   cutoff: np.ndarray = None) -> IdentityResult:
    """
    Both sides of the boundary identity on the discrete solutions:
        LHS = dt Σ [(ϰu₁)ᵀ S₁ w̄ − u₁ᵀ S₁ (ϰw̄)]
        RHS = −dt Σ (Δu₁/dt)ᵀ (M₂ − M₁)(Δū₂/dt) + dt Σ u₁ᵀ (S₂ − S₁) ū₂
    and the leading pairing ∫∫ ϱ a₁ ā₂ dv_{g₁} dt with ϱ = α s(∇φ₁, ∇φ₁).
    """
    lb1, lb2 = setup.solver1.lb, setup.solver2.lb
    dt = setup.dt
    kap = cutoff_field(setup.grid) if cutoff is None else cutoff
    u1, u2, w = back.u1, fwd.u2, fwd.w
    n_steps = u1.shape[0] - 1
    s1 = lb1.stiffness
    ds = lb2.stiffness - lb1.stiffness
    dm = lb2.mass - lb1.mass

    lhs = 0.0j
    rhs = 0.0j
    for n in range(n_steps + 1):
        wb = np.conj(w[n])
        ub = np.conj(u2[n])
        if 1 <= n <= n_steps - 1:
            lhs += dt * (np.dot(kap * u1[n], s1 @ wb) - np.dot(u1[n], s1 @ (kap * wb)))
        rhs += dt * np.dot(u1[n], ds @ ub)
        if n < n_steps:
            du1 = (u1[n + 1] - u1[n]) / dt
            du2 = np.conj(u2[n + 1] - u2[n]) / dt
            rhs -= dt * np.dot(du1, dm * du2)

    pairing = leading_pairing(setup, back.a1, fwd.a2, n_steps)
    result = IdentityResult(complex(lhs), complex(rhs), pairing)
    log.info(f"Identity: LHS={result.lhs:.6e}, RHS={result.rhs:.6e}, mismatch={result.mismatch:.3e}")
    return result


def conformal_ratio(g1: MetricField, g2: MetricField) -> np.ndarray:
    """α = √|g₂| / √|g₁| at every node."""
    return g2.sqrt_det / g1.sqrt_det


def leading_pairing(setup: ProbeSetup, a1: PolarAmplitude, a2: PolarAmplitude, n_steps: int) -> complex:
    rho = (conformal_ratio(setup.g1, setup.g2) * interaction_weight(setup.g1, setup.g2, setup.phase1)).ravel()
    weight = rho * setup.solver1.lb.mass * setup.grid.in_domain.ravel()
    dt = setup.dt
    total = 0.0j
    for n in range(n_steps + 1):
        t = n * dt
        total += dt * np.sum(weight * a1.values(t) * np.conj(a2.values(t)))
    return complex(total)


def measurement_value(result: IdentityResult, h: float, weight: Callable, n_quad: int = 4001) -> float:
    """h·LHS / ∫ b μ dθ: the ray transform of α s along the direction picked out by b."""
    theta = np.linspace(-0.5 * np.pi, 0.5 * np.pi, n_quad)
    norm = trapezoid(weight(theta) * mu_weight(theta), theta)
    if norm <= 0.0:
        raise ConfigError("direction profile has no weight on the inward half-circle")
    return float(np.real(h * result.lhs) / norm)


# --- Unique-continuation quantities ---

@dataclass
class UcpQuantities:
    band_l2: float
    h1: float
    box_norm: float
    neumann_norm: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def ucp_quantities(setup: ProbeSetup, fwd: ForwardProbe, gamma_sharp: np.ndarray) -> UcpQuantities:
    """
    ‖w‖ on (0,T*)×(O₂∖O₃), the space-time H¹ surrogate of w, ‖□w‖ on (0,T*)×O₁ and ‖∂_ν w‖ on Σ^♮.
    """
    solver = setup.solver1
    dt = setup.dt
    w = fwd.w
    o1, o2, o3 = band_masks(setup.grid)
    ring = (o2 & ~o3).ravel()
    mass = solver.lb.mass
    band_sq = 0.0
    h1_sq = 0.0
    neu_sq = 0.0
    for n in range(w.shape[0]):
        wn = w[n]
        band_sq += dt * np.real(np.vdot(wn[ring], mass[ring] * wn[ring]))
        h1_sq += dt * (np.real(np.vdot(wn, mass * wn)) + max(0.0, np.real(np.vdot(wn, solver.lb.stiffness @ wn))))
        if n + 1 < w.shape[0]:
            dw = (w[n + 1] - wn) / dt
            h1_sq += dt * np.real(np.vdot(dw, mass * dw))
        trace = solver.neumann_trace(wn)[gamma_sharp]
        neu_sq += dt * solver.ds * np.real(np.vdot(trace, trace))
    return UcpQuantities(float(np.sqrt(band_sq)), float(np.sqrt(h1_sq)), fwd.box_norm, float(np.sqrt(neu_sq)))


def minimal_constant(q: UcpQuantities, gamma: float, mu: float) -> float:
    """Smallest C with ‖w‖_band ≤ C γ^{-1/2} ‖w‖_{H¹} + e^{μγ}(‖□w‖ + ‖∂_ν w‖)."""
    slack = q.band_l2 - np.exp(mu * gamma) * (q.box_norm + q.neumann_norm)
    if slack <= 0.0:
        return 0.0
    if q.h1 == 0.0:
        return float("inf")
    return float(slack / (gamma ** -0.5 * q.h1))
