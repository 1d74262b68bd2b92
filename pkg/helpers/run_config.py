# helpers/run_config.py
import argparse
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from helpers.field_classes import ConfigError, DomainGrid
from helpers.field_io import content_hash
from helpers.go_builder import DEFAULT_DELTA_FACTOR, NODES_PER_WAVELENGTH, SOURCE_MODES
from helpers.metric_families import FAMILIES
from helpers.worker_pool import StageTimer

# Get a logger for this specific module
log = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path("data/default_config.toml")
DEFAULT_OUT = "runs"


# --- Sections ---

@dataclass(frozen=True)
class GridSpec:
    dim: int = 2
    n: int = 48
    shape_kind: str = "ball"
    radius: float = 1.0
    half_width: Optional[float] = None
    collar_width: Optional[float] = None

    def build(self, n: int = None) -> DomainGrid:
        n = self.n if n is None else n
        if self.shape_kind == "ball":
            return DomainGrid.ball(self.dim, n, self.radius, self.half_width, self.collar_width)
        half = self.radius if self.half_width is None else self.half_width
        return DomainGrid.box([-half] * self.dim, [half] * self.dim, n,
                              0.3 * half if self.collar_width is None else self.collar_width)

    def nodes_for_h(self, h: float) -> int:
        """Fewest nodes per axis that resolve wavelength 2πh with NODES_PER_WAVELENGTH nodes."""
        if self.half_width is not None:
            half = self.half_width
        else:
            half = 1.25 * self.radius if self.shape_kind == "ball" else self.radius
        needed = int(np.ceil(1.0 + 2.0 * half * NODES_PER_WAVELENGTH / (2.0 * np.pi * h) + 1e-9))
        return max(self.n, needed)


@dataclass(frozen=True)
class MetricSpec:
    family: str = "conformal"
    epsilon: float = 0.05
    support_radius: Optional[float] = None
    offset: Optional[Tuple[float, ...]] = None

    def params(self) -> dict:
        return {"radius": self.support_radius, "offset": self.offset}


@dataclass(frozen=True)
class BundleSpec:
    n_points: int = 64
    n_dirs: int = 32
    launch_margin: Optional[float] = None


@dataclass(frozen=True)
class TimeSpec:
    cfl: float = 0.5
    T_factor: float = 1.0
    delta_factor: float = DEFAULT_DELTA_FACTOR
    geodesic_step: float = 1e-3


@dataclass(frozen=True)
class WkbSpec:
    h: Tuple[float, ...] = (0.25, 0.125)
    source_mode: str = "transport"


@dataclass(frozen=True)
class UcpSpec:
    gamma: Tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    mu: float = 1.0
    gamma_sharp_fractions: Tuple[float, ...] = (0.5, 1.0)
    epsilons: Tuple[float, ...] = (0.1, 0.05, 0.025)


@dataclass(frozen=True)
class SolverSpec:
    cg_tol: float = 1e-8
    cg_maxiter: int = 2000
    reg_lambda: float = 1e-6
    power_tol: float = 1e-8
    power_maxiter: int = 500


@dataclass(frozen=True)
class DtnSpec:
    n_spatial: int = 8
    n_temporal: int = 3
    gamma_sharp_fraction: float = 1.0


@dataclass(frozen=True)
class StabilitySpec:
    family: str = "block"
    epsilons: Tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1)


@dataclass(frozen=True)
class GaugeSpec:
    refinements: Tuple[int, ...] = (24, 32, 48)
    bump_amplitude: float = 0.1
    dilation: float = 0.05


@dataclass(frozen=True)
class RecoverSpec:
    family: str = "block"
    h: Optional[float] = None
    n_sources: int = 8
    n_probe_dirs: int = 9
    direction_width: float = 0.2


SECTIONS = {
    "grid": GridSpec, "metric": MetricSpec, "bundle": BundleSpec, "time": TimeSpec, "wkb": WkbSpec,
    "ucp": UcpSpec, "solver": SolverSpec, "dtn": DtnSpec, "stability": StabilitySpec, "gauge": GaugeSpec,
    "recover": RecoverSpec,
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    metric: MetricSpec = field(default_factory=MetricSpec)
    bundle: BundleSpec = field(default_factory=BundleSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    wkb: WkbSpec = field(default_factory=WkbSpec)
    ucp: UcpSpec = field(default_factory=UcpSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    dtn: DtnSpec = field(default_factory=DtnSpec)
    stability: StabilitySpec = field(default_factory=StabilitySpec)
    gauge: GaugeSpec = field(default_factory=GaugeSpec)
    recover: RecoverSpec = field(default_factory=RecoverSpec)
    seed: int = 0
    out_dir: str = DEFAULT_OUT
    threads: int = 1

    def experiment_dict(self) -> dict:
        """Everything that can change a result; output location and worker count excluded."""
        data = asdict(self)
        data.pop("out_dir")
        data.pop("threads")
        return data

    @property
    def config_hash(self) -> str:
        return content_hash(self.experiment_dict())

    def with_overrides(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return validate(replace(self, **changes)) if changes else self


# --- Loading ---

def _coerce(value, default):
    if isinstance(value, list):
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build_section(name: str, table: dict):
    cls = SECTIONS[name]
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(table) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    defaults = cls()
    kwargs = {k: _coerce(v, getattr(defaults, k)) for k, v in table.items()}
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(SECTIONS) - {"seed", "out_dir", "threads"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    kwargs = {name: _build_section(name, data[name]) for name in SECTIONS if name in data}
    for key in ("seed", "out_dir", "threads"):
        if key in data:
            kwargs[key] = data[key]
    return validate(ExperimentConfig(**kwargs))


def load_config(path=None, out_dir: str = None, seed: int = None, threads: int = None) -> ExperimentConfig:
    """
    TOML file, then `.env` defaults (WORKBENCH_OUT, WORKBENCH_THREADS), then explicit overrides.
    """
    load_dotenv()
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    if path.exists():
        try:
            with path.open("rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"could not parse {path}: {e}") from e
        log.info(f"Loaded configuration from {path}")
    elif path != DEFAULT_CONFIG_PATH:
        raise ConfigError(f"config file {path} not found")
    else:
        log.warning(f"{path} not found, using built-in defaults")
        data = {}

    if os.getenv("WORKBENCH_OUT"):
        data["out_dir"] = os.getenv("WORKBENCH_OUT")
    if os.getenv("WORKBENCH_THREADS"):
        try:
            data["threads"] = int(os.getenv("WORKBENCH_THREADS"))
        except ValueError:
            raise ConfigError(f"WORKBENCH_THREADS must be an integer, got '{os.getenv('WORKBENCH_THREADS')}'")

    cfg = config_from_dict(data)
    return cfg.with_overrides(out_dir=out_dir, seed=seed, threads=threads)


# --- Validation ---

def _positive(name: str, values):
    for v in values if isinstance(values, tuple) else (values,):
        if not v > 0:
            raise ConfigError(f"{name} must be positive, got {v}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    g = cfg.grid
    if g.dim not in (2, 3):
        raise ConfigError(f"grid.dim must be 2 or 3, got {g.dim}")
    if g.n < 8:
        raise ConfigError(f"grid.n = {g.n} is too coarse (need at least 8)")
    if g.shape_kind not in DomainGrid.SHAPE_KINDS:
        raise ConfigError(f"grid.shape_kind must be one of {DomainGrid.SHAPE_KINDS}")
    _positive("grid.radius", g.radius)

    for name, family in (("metric.family", cfg.metric.family), ("stability.family", cfg.stability.family),
                         ("recover.family", cfg.recover.family)):
        if family not in FAMILIES:
            raise ConfigError(f"{name} '{family}' is unknown (known: {', '.join(FAMILIES)})")
    _positive("bundle.n_points", cfg.bundle.n_points)
    _positive("bundle.n_dirs", cfg.bundle.n_dirs)
    _positive("time.cfl", cfg.time.cfl)
    if cfg.time.cfl > 1.0:
        raise ConfigError(f"time.cfl = {cfg.time.cfl} exceeds the stability limit 1")
    _positive("time.T_factor", cfg.time.T_factor)
    _positive("time.delta_factor", cfg.time.delta_factor)
    _positive("time.geodesic_step", cfg.time.geodesic_step)
    _positive("wkb.h", cfg.wkb.h)
    if cfg.wkb.source_mode not in SOURCE_MODES:
        raise ConfigError(f"wkb.source_mode must be one of {SOURCE_MODES}")
    _positive("ucp.gamma", cfg.ucp.gamma)
    _positive("ucp.mu", cfg.ucp.mu)
    for frac in cfg.ucp.gamma_sharp_fractions + (cfg.dtn.gamma_sharp_fraction,):
        if not 0.0 < frac <= 1.0:
            raise ConfigError(f"Γ♮ fractions must lie in (0, 1], got {frac}")
    _positive("solver.cg_tol", cfg.solver.cg_tol)
    if cfg.solver.reg_lambda < 0.0:
        raise ConfigError("solver.reg_lambda must be non-negative")
    _positive("dtn.n_spatial", cfg.dtn.n_spatial)
    _positive("dtn.n_temporal", cfg.dtn.n_temporal)
    if any(e < 0.0 for e in cfg.stability.epsilons):
        raise ConfigError("stability.epsilons must be non-negative")
    if list(cfg.gauge.refinements) != sorted(cfg.gauge.refinements):
        raise ConfigError("gauge.refinements must be increasing")
    if cfg.recover.h is not None:
        _positive("recover.h", cfg.recover.h)
    _positive("recover.n_sources", cfg.recover.n_sources)
    _positive("recover.n_probe_dirs", cfg.recover.n_probe_dirs)
    if cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg


# --- Per-run context handed to every command ---

@dataclass
class RunContext:
    cfg: ExperimentConfig
    command: str
    args: argparse.Namespace = field(default_factory=argparse.Namespace)
    timer: StageTimer = field(default_factory=StageTimer)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.cfg.seed)

    @property
    def out_dir(self) -> Path:
        path = Path(self.cfg.out_dir) / self.command
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def threads(self) -> int:
        return self.cfg.threads
