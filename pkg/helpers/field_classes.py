# helpers/field_classes.py
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

# Get a logger for this specific module
log = logging.getLogger(__name__)


# --- Errors ---

class WorkbenchError(Exception):
    """Base class for every failure the workbench reports on purpose."""


class FieldValidationError(WorkbenchError):
    """A field broke one of its invariants (non-SPD node, collar, symmetry, grid mismatch)."""


class GeodesicError(WorkbenchError):
    """Trapped ray, degenerate Jacobian or a fold in a coordinate map."""


class SolverError(WorkbenchError):
    """CG / power iteration did not converge, CFL violated or the run blew up."""


class ConfigError(WorkbenchError):
    """Experiment configuration could not be resolved."""


# --- Grid ---

@dataclass(frozen=True)
class DomainGrid:
    """
    Regular node grid carrying a ball or box domain.

    Node (0,..,0) sits at `origin`; axis j has `shape[j]` nodes `spacing[j]` apart.
    The collar is the band of in-domain nodes within `collar_width` of the boundary.
    """

    SHAPE_KINDS = ("ball", "box")

    shape: Tuple[int, ...]
    spacing: Tuple[float, ...]
    origin: Tuple[float, ...]
    shape_kind: str = "ball"
    radius: float = 1.0
    collar_width: float = 0.25
    center: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.center is None:
            mid = tuple(o + 0.5 * (n - 1) * h for o, n, h in zip(self.origin, self.shape, self.spacing))
            object.__setattr__(self, "center", mid)
        else:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

        if len(self.shape) not in (2, 3):
            raise FieldValidationError(f"dim must be 2 or 3, got {len(self.shape)}")
        if not (len(self.shape) == len(self.spacing) == len(self.origin) == len(self.center)):
            raise FieldValidationError("shape, spacing, origin and center must have the same length")
        if min(self.shape) < 3:
            raise FieldValidationError(f"need at least 3 nodes per axis, got {self.shape}")
        if min(self.spacing) <= 0.0:
            raise FieldValidationError(f"spacing must be positive on every axis, got {self.spacing}")
        if self.shape_kind not in self.SHAPE_KINDS:
            raise FieldValidationError(f"unknown shape_kind '{self.shape_kind}'")
        if self.collar_width <= 0.0:
            raise FieldValidationError("collar_width must be positive")
        if self.collar_width >= self.inscribed_radius:
            raise FieldValidationError(
                f"collar_width {self.collar_width} does not fit inside the domain (inradius {self.inscribed_radius})"
            )

    # --- Constructors ---

    @classmethod
    def ball(cls, dim: int = 2, n: int = 48, radius: float = 1.0, half_width: Optional[float] = None,
             collar_width: Optional[float] = None) -> "DomainGrid":
        """Ball of `radius` centred at the origin, inside a cube of half width `half_width`."""
        half_width = 1.25 * radius if half_width is None else half_width
        collar_width = 0.3 * radius if collar_width is None else collar_width
        if half_width <= radius:
            raise FieldValidationError("half_width must exceed the radius so the exterior is represented")
        h = 2.0 * half_width / (n - 1)
        return cls(shape=(n,) * dim, spacing=(h,) * dim, origin=(-half_width,) * dim,
                   shape_kind="ball", radius=radius, collar_width=collar_width,
                   center=(0.0,) * dim)

    @classmethod
    def box(cls, lo, hi, n, collar_width: float = 0.1) -> "DomainGrid":
        """Box [lo, hi]; the grid edges are the boundary nodes."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = np.broadcast_to(np.asarray(n, dtype=int), lo.shape)
        spacing = (hi - lo) / (n - 1)
        return cls(shape=tuple(n), spacing=tuple(spacing), origin=tuple(lo), shape_kind="box",
                   radius=float(0.5 * np.min(hi - lo)), collar_width=collar_width)

    def refined(self, n: int) -> "DomainGrid":
        """Same domain, `n` nodes per axis."""
        if self.shape_kind == "ball":
            half_width = -self.origin[0] + self.center[0]
            return DomainGrid.ball(self.dim, n, self.radius, half_width, self.collar_width)
        return DomainGrid.box(self.origin, self.upper, n, self.collar_width)

    # --- Geometry ---

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple(o + (n - 1) * h for o, n, h in zip(self.origin, self.shape, self.spacing))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.upper) - np.asarray(self.origin))

    @property
    def inscribed_radius(self) -> float:
        if self.shape_kind == "ball":
            return self.radius
        return float(np.min(self.half_extents))

    @property
    def effective_radius(self) -> float:
        """Radius of the smallest centred ball holding the domain."""
        if self.shape_kind == "ball":
            return self.radius
        return float(np.linalg.norm(self.half_extents))

    @property
    def diameter(self) -> float:
        return 2.0 * self.effective_radius

    @cached_property
    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    @cached_property
    def coords(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def points(self) -> np.ndarray:
        """(n_nodes, dim) node coordinates in C order."""
        return np.stack([c.ravel() for c in self.coords], axis=-1)

    def signed_distance(self, x, enlarge: float = 0.0) -> np.ndarray:
        """Negative inside, zero on the boundary. `enlarge` grows the domain outward."""
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        if self.shape_kind == "ball":
            return np.linalg.norm(x - c, axis=-1) - (self.radius + enlarge)
        mid = 0.5 * (np.asarray(self.upper) + np.asarray(self.origin))
        return np.max(np.abs(x - mid) - (self.half_extents + enlarge), axis=-1)

    def outward_normal(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.shape_kind == "ball":
            d = x - np.asarray(self.center)
            return d / np.linalg.norm(d, axis=-1, keepdims=True)
        mid = 0.5 * (np.asarray(self.upper) + np.asarray(self.origin))
        gap = np.abs(x - mid) - self.half_extents
        axis = np.argmax(gap, axis=-1)
        nu = np.zeros_like(x)
        rows = np.arange(x.shape[0])
        nu[rows, axis] = np.sign(x[rows, axis] - mid[axis])
        return nu

    # --- Masks ---

    @cached_property
    def node_distance(self) -> np.ndarray:
        """Signed distance of every node, shaped like the grid."""
        return self.signed_distance(self.points).reshape(self.shape)

    @cached_property
    def in_domain(self) -> np.ndarray:
        slack = 1e-12 * max(self.spacing)
        return self.node_distance <= slack

    @cached_property
    def interior_mask(self) -> np.ndarray:
        structure = np.ones((3,) * self.dim, dtype=bool)
        return ndimage.binary_erosion(self.in_domain, structure=structure, border_value=0)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self.in_domain & ~self.interior_mask

    @cached_property
    def exterior_mask(self) -> np.ndarray:
        return ~self.in_domain

    @cached_property
    def collar_mask(self) -> np.ndarray:
        return self.band_mask(self.collar_width)

    def band_mask(self, width: float) -> np.ndarray:
        """In-domain nodes within `width` of the boundary."""
        return self.in_domain & (self.node_distance >= -width)

    @cached_property
    def boundary_index(self) -> np.ndarray:
        """Flat indices of the boundary nodes, in C order."""
        return np.flatnonzero(self.boundary_mask.ravel())

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask.ravel())

    @cached_property
    def domain_index(self) -> np.ndarray:
        return np.flatnonzero(self.in_domain.ravel())

    def gamma_minus(self) -> np.ndarray:
        """Positions (into boundary_index) of boundary nodes with <nu, e_n> < 0."""
        nu = self.outward_normal(self.points[self.boundary_index])
        return np.flatnonzero(nu[:, -1] < 0.0)

    def header(self) -> dict:
        return {
            "dim": self.dim,
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "shape_kind": self.shape_kind,
            "radius": self.radius,
            "collar_width": self.collar_width,
            "center": list(self.center),
        }


# --- Fields ---

def _require_same_grid(a: DomainGrid, b: DomainGrid):
    if a != b:
        raise FieldValidationError("fields live on different grids")


@dataclass
class MetricField:
    """Symmetric positive-definite matrix per node; identity on the collar and outside the domain."""

    SPD_RELATIVE_TOL = 1e-10
    COLLAR_TOL = 1e-12

    grid: DomainGrid
    g: np.ndarray
    smoothness_tag: int = 2
    enforce_collar: bool = True

    def __post_init__(self):
        d = self.grid.dim
        self.g = np.asarray(self.g, dtype=float)
        expected = self.grid.shape + (d, d)
        if self.g.shape != expected:
            raise FieldValidationError(f"metric array has shape {self.g.shape}, expected {expected}")
        asym = np.max(np.abs(self.g - np.swapaxes(self.g, -1, -2)))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(self.g)))):
            raise FieldValidationError(f"metric is not symmetric (max asymmetry {asym:.3e})")
        self.g = 0.5 * (self.g + np.swapaxes(self.g, -1, -2))
        check_spd(self.g, self.grid, self.grid.in_domain)
        if self.enforce_collar:
            residual = collar_identity_residual(self.g, self.grid)
            if residual > self.COLLAR_TOL:
                raise FieldValidationError(
                    f"metric differs from the identity on the collar/exterior by {residual:.3e}"
                )

    @classmethod
    def euclidean(cls, grid: DomainGrid) -> "MetricField":
        g = np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()
        return cls(grid, g)

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.g)

    @property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)


def check_spd(g: np.ndarray, grid: DomainGrid, mask: np.ndarray):
    """Raise FieldValidationError naming the first node whose smallest eigenvalue is not positive."""
    eig = np.linalg.eigvalsh(g)
    ratio = eig[..., 0] / np.maximum(eig[..., -1], np.finfo(float).tiny)
    bad = mask & ~(ratio >= MetricField.SPD_RELATIVE_TOL)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise FieldValidationError(f"metric is not SPD at node {node} (eigenvalues {eig[node]})")


def collar_identity_residual(g: np.ndarray, grid: DomainGrid) -> float:
    mask = grid.collar_mask | grid.exterior_mask
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(g[mask] - np.eye(grid.dim))))


@dataclass
class ScalarField:
    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise FieldValidationError(f"scalar field shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values[self.grid.in_domain])):
            raise FieldValidationError("scalar field has non-finite values inside the domain")


@dataclass
class ChristoffelField:
    """gamma[..., k, i, j] = Γ^k_ij."""
    grid: DomainGrid
    gamma: np.ndarray


@dataclass
class SymTensorField2:
    """Symmetric 2-tensor per node. Stored symmetric and zero outside the domain."""

    grid: DomainGrid
    s: np.ndarray

    def __post_init__(self):
        d = self.grid.dim
        s = np.asarray(self.s, dtype=float)
        if s.shape != self.grid.shape + (d, d):
            raise FieldValidationError(f"tensor array has shape {s.shape}, expected {self.grid.shape + (d, d)}")
        s = 0.5 * (s + np.swapaxes(s, -1, -2))
        s = s * self.grid.in_domain[..., None, None]
        if not np.all(np.isfinite(s)):
            raise FieldValidationError("tensor field has non-finite entries")
        self.s = s

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "SymTensorField2":
        return cls(grid, np.zeros(grid.shape + (grid.dim, grid.dim)))

    def __add__(self, other: "SymTensorField2") -> "SymTensorField2":
        _require_same_grid(self.grid, other.grid)
        return SymTensorField2(self.grid, self.s + other.s)

    def __sub__(self, other: "SymTensorField2") -> "SymTensorField2":
        _require_same_grid(self.grid, other.grid)
        return SymTensorField2(self.grid, self.s - other.s)

    def scaled(self, factor) -> "SymTensorField2":
        factor = np.asarray(factor, dtype=float)
        if factor.ndim:
            factor = factor[..., None, None]
        return SymTensorField2(self.grid, self.s * factor)


@dataclass
class VectorFieldV:
    """Covector field v_k per node; `zero_on_boundary` clears boundary and exterior nodes."""

    grid: DomainGrid
    v: np.ndarray
    zero_on_boundary: bool = True

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != self.grid.shape + (self.grid.dim,):
            raise FieldValidationError(f"vector array has shape {v.shape}")
        keep = self.grid.interior_mask if self.zero_on_boundary else self.grid.in_domain
        self.v = v * keep[..., None]


@dataclass
class DiffeoField:
    """
    Coordinate map psi sampled at the nodes with its Jacobian.
    jac[..., i, j] = d psi_i / d x_j.
    """

    grid: DomainGrid
    psi: np.ndarray
    jac: np.ndarray
    collar_residual: float = 0.0

    def __post_init__(self):
        d = self.grid.dim
        if self.psi.shape != self.grid.shape + (d,) or self.jac.shape != self.grid.shape + (d, d):
            raise FieldValidationError("diffeomorphism arrays do not match the grid")

    @classmethod
    def identity(cls, grid: DomainGrid) -> "DiffeoField":
        psi = np.stack(grid.coords, axis=-1)
        jac = np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()
        return cls(grid, psi, jac)

    @classmethod
    def from_map(cls, grid: DomainGrid, fn) -> "DiffeoField":
        """Sample `fn((N, d) points) -> (N, d)` at the nodes; Jacobian by central differences."""
        psi = np.asarray(fn(grid.points), dtype=float).reshape(grid.shape + (grid.dim,))
        jac = np.empty(grid.shape + (grid.dim, grid.dim))
        for j in range(grid.dim):
            jac[..., :, j] = np.gradient(psi, grid.spacing[j], axis=j, edge_order=2)
        ident = np.stack(grid.coords, axis=-1)
        residual = float(np.max(np.abs(psi - ident)[grid.collar_mask])) if np.any(grid.collar_mask) else 0.0
        return cls(grid, psi, jac, collar_residual=residual)

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.jac)


@dataclass
class AdmissibilityReport:
    collar_residual_g1: float
    collar_residual_g2: float
    c0_difference: float
    c2_difference: float
    c2_deviation_g1: float
    c2_deviation_g2: float
    max_length_discrepancy: float
    max_exit_point_mismatch: float
    max_exit_direction_mismatch: float
    n_rays: int
    tol: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)
