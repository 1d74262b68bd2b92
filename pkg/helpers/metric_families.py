# helpers/metric_families.py
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from helpers.field_classes import ConfigError, DiffeoField, DomainGrid, MetricField

# Get a logger for this specific module
log = logging.getLogger(__name__)

FAMILIES = ("euclidean", "conformal", "block")


# --- Bumps ---

def support_radius_limit(grid: DomainGrid) -> float:
    """Largest bump radius that keeps the metric Euclidean on the collar with two spacings to spare."""
    return grid.inscribed_radius - grid.collar_width - 2.0 * max(grid.spacing)


def bump_profile(points: np.ndarray, centre, radius: float) -> np.ndarray:
    """(1 − |x − c|²/ρ²)⁴ inside the ball of radius ρ, zero outside. C³ across the edge."""
    u = np.sum((np.asarray(points) - np.asarray(centre)) ** 2, axis=-1) / radius ** 2
    return np.where(u < 1.0, (1.0 - np.minimum(u, 1.0)) ** 4, 0.0)


def bump_gradient(points: np.ndarray, centre, radius: float) -> np.ndarray:
    diff = np.asarray(points) - np.asarray(centre)
    u = np.sum(diff ** 2, axis=-1) / radius ** 2
    scale = np.where(u < 1.0, -8.0 * (1.0 - np.minimum(u, 1.0)) ** 3 / radius ** 2, 0.0)
    return scale[..., None] * diff


def _resolve_support(grid: DomainGrid, radius: Optional[float], offset: Optional[Sequence[float]]):
    limit = support_radius_limit(grid)
    if limit <= 0.0:
        raise ConfigError(f"grid {grid.shape} leaves no room for a perturbation inside the collar")
    offset = np.zeros(grid.dim) if offset is None else np.asarray(offset, dtype=float)
    radius = 0.8 * limit if radius is None else float(radius)
    if radius + np.linalg.norm(offset) > limit + 1e-12:
        raise ConfigError(f"perturbation support (radius {radius:.3g}, offset {np.linalg.norm(offset):.3g}) "
                          f"reaches the collar; limit is {limit:.3g}")
    return np.asarray(grid.center) + offset, radius


def _nodal_bump(grid: DomainGrid, radius=None, offset=None) -> np.ndarray:
    centre, radius = _resolve_support(grid, radius, offset)
    return bump_profile(grid.points, centre, radius).reshape(grid.shape)


# --- Metric generators ---

def conformal_bump(grid: DomainGrid, epsilon: float, radius: float = None, offset=None) -> MetricField:
    """g = (1 + ε·bump)·e."""
    b = _nodal_bump(grid, radius, offset)
    if np.min(1.0 + epsilon * b) <= 0.0:
        raise ConfigError(f"epsilon {epsilon} makes the conformal factor non-positive")
    g = (1.0 + epsilon * b)[..., None, None] * np.eye(grid.dim)
    return MetricField(grid, g)


def block_metric(grid: DomainGrid, epsilon: float, radius: float = None, offset=None) -> MetricField:
    """g = diag(ĝ(x), 1) with ĝ = (1 + ε·bump)·e on the transverse block; e_n rays stay straight."""
    b = _nodal_bump(grid, radius, offset)
    if np.min(1.0 + epsilon * b) <= 0.0:
        raise ConfigError(f"epsilon {epsilon} makes the transverse block non-positive")
    g = np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()
    for j in range(grid.dim - 1):
        g[..., j, j] = 1.0 + epsilon * b
    return MetricField(grid, g)


def make_metric(grid: DomainGrid, family: str, epsilon: float = 0.0, **params) -> MetricField:
    if family == "euclidean" or epsilon == 0.0:
        return MetricField.euclidean(grid)
    if family == "conformal":
        return conformal_bump(grid, epsilon, **params)
    if family == "block":
        return block_metric(grid, epsilon, **params)
    raise ConfigError(f"unknown metric family '{family}' (known: {', '.join(FAMILIES)})")


def admissible_pair(grid: DomainGrid, family: str, epsilon: float, base_family: str = "euclidean",
                    base_epsilon: float = 0.0, **params) -> Tuple[MetricField, MetricField]:
    """(g₁, g₂): g₁ from the base family, g₂ from `family` at strength ε."""
    g1 = make_metric(grid, base_family, base_epsilon, **params)
    g2 = make_metric(grid, family, epsilon, **params)
    log.debug(f"pair: g1={base_family}({base_epsilon}), g2={family}({epsilon}) on {grid.shape}")
    return g1, g2


# --- Diffeomorphisms ---

def interior_bump_diffeo(grid: DomainGrid, amplitude: float, radius: float = None, offset=None) -> DiffeoField:
    """ψ(x) = x + η·bump(x)·e₁; identity on the collar. Invertible while η·max|∇bump| < 1."""
    centre, radius = _resolve_support(grid, radius, offset)
    slope = 8.0 * (6.0 / 7.0) ** 3 / np.sqrt(7.0) / radius  # max |∇bump|, attained at |x − c| = ρ/√7
    if abs(amplitude) * slope >= 1.0:
        raise ConfigError(f"bump amplitude {amplitude} folds the map (limit {1.0 / slope:.3g})")
    e1 = np.eye(grid.dim)[0]

    def _map(x):
        return x + amplitude * bump_profile(x, centre, radius)[:, None] * e1

    psi = DiffeoField.from_map(grid, _map)
    # exact Jacobian: I + η e₁ ⊗ ∇bump
    grad = bump_gradient(grid.points, centre, radius).reshape(grid.shape + (grid.dim,))
    psi.jac = np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()
    psi.jac[..., 0, :] += amplitude * grad
    return psi


def dilation_diffeo(grid: DomainGrid, factor: float) -> DiffeoField:
    """ψ(x) = c + (1 + η)(x − c). Moves the boundary; used as the negative control."""
    centre = np.asarray(grid.center)
    psi = DiffeoField.from_map(grid, lambda x: centre + (1.0 + factor) * (x - centre))
    psi.jac = (1.0 + factor) * np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()
    return psi


def common_support_radius(grids: Sequence[DomainGrid], fraction: float = 0.8) -> float:
    """One bump radius valid on every grid of a refinement study, so the metric is the same on each."""
    return fraction * min(support_radius_limit(g) for g in grids)
