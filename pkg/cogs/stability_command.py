import logging
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from helpers.field_classes import ConfigError
from helpers.field_io import write_csv
from helpers.geodesic_flow import pullback_metric, semi_geodesic_map
from helpers.helper_methods import fit_log_stability, phi_alpha_beta, spearman
from helpers.metric_core import metric_difference_norms
from helpers.metric_families import admissible_pair, common_support_radius
from helpers.run_config import ExperimentConfig, RunContext
from helpers.wave_dtn import dtn_difference
from helpers.worker_pool import gather_in_order

log = logging.getLogger(__name__)

MIN_PAIRS = 10
SPEARMAN_TOL = 0.9
RESIDUAL_TOL = 0.2
COLUMNS = ["pair_id", "epsilon", "g_diff_l2", "dtn_diff", "C", "alpha", "beta", "fit_ok", "phi_value"]


@dataclass
class StabilityRecord:
    pair_id: int
    epsilon: float
    g_diff_l2: float
    dtn_diff: float
    C: float = float("nan")
    alpha: float = float("nan")
    beta: float = float("nan")
    fit_ok: bool = False
    phi_value: float = float("nan")

    def __post_init__(self):
        if self.g_diff_l2 < 0.0 or self.dtn_diff < 0.0:
            raise ValueError("stability norms must be non-negative")


def semi_geodesic_normal_form(m):
    """ψ*g with ψ the semi-geodesic map of g; the last row and column of the result are e_n."""
    return pullback_metric(m, semi_geodesic_map(m))


def stability_pair(cfg: ExperimentConfig, pair_id: int, epsilon: float, radius: float) -> StabilityRecord:
    grid = cfg.grid.build()
    g1, g2 = admissible_pair(grid, cfg.stability.family, epsilon, radius=radius, offset=cfg.metric.offset)

    # 1. Boundary data
    comp = dtn_difference(g1, g2, cfg.time.T_factor * grid.diameter, cfg.dtn.n_spatial, cfg.dtn.n_temporal,
                          cfg.dtn.gamma_sharp_fraction, cfl=cfg.time.cfl, power_tol=cfg.solver.power_tol,
                          power_maxiter=cfg.solver.power_maxiter)

    # 2. Metric difference after normalizing both metrics to semi-geodesic form
    if epsilon == 0.0:
        g_diff = 0.0
    else:
        n1 = semi_geodesic_normal_form(g1)
        n2 = semi_geodesic_normal_form(g2)
        g_diff = metric_difference_norms(n1, n2)["l2"]
    log.info(f"Pair {pair_id} (ε={epsilon}): ‖g₁−g₂‖={g_diff:.4e}, ‖Λ♮ diff‖={comp.diff_norm:.4e}")
    return StabilityRecord(pair_id, epsilon, g_diff, comp.diff_norm)


def apply_fit(records: list) -> dict:
    """Fit g_diff ≤ C·Φ_{α,β}(dtn_diff) and write the parameters into every record."""
    fit = fit_log_stability([r.dtn_diff for r in records], [r.g_diff_l2 for r in records])
    for r in records:
        r.C, r.alpha, r.beta, r.fit_ok = fit["C"], fit["alpha"], fit["beta"], fit["fit_ok"]
        if fit["fit_ok"]:
            r.phi_value = float(fit["C"] * phi_alpha_beta(r.dtn_diff, fit["alpha"], fit["beta"]))
    return fit


class StabilityCommands:
    def __init__(self, bench):
        self.bench = bench

    async def stability(self, ctx: RunContext) -> dict:
        """‖g₁ − g₂‖ against ‖Λ♮₁ − Λ♮₂‖ over a family of admissible pairs, with the log-type fit."""
        cfg = ctx.cfg
        epsilons = list(cfg.stability.epsilons)
        perturbed = sum(1 for e in epsilons if e > 0.0)
        if perturbed < MIN_PAIRS:
            raise ConfigError(f"stability needs at least {MIN_PAIRS} perturbed pairs, got {perturbed}")
        radius = cfg.metric.support_radius or common_support_radius([cfg.grid.build()])

        jobs = [partial(stability_pair, cfg, i, eps, radius) for i, eps in enumerate(epsilons)]
        with ctx.timer.stage("pairs"):
            records = await gather_in_order(jobs, ctx.threads)

        with ctx.timer.stage("fit"):
            fit = apply_fit(records)
        write_csv(ctx.out_dir / "stability.csv", [asdict(r) for r in records], COLUMNS)

        rho = spearman([r.g_diff_l2 for r in records], [r.dtn_diff for r in records])
        summary = {
            "n_pairs": len(records),
            "spearman": rho,
            "spearman_ok": bool(rho >= SPEARMAN_TOL),
            **fit,
            "residual_ok": bool(np.isfinite(fit["residual"]) and fit["residual"] <= RESIDUAL_TOL),
        }
        if not fit["fit_ok"]:
            log.warning("Stability fit failed; raw pairs were written without fit parameters")
        log.info(f"Stability:\n  - Spearman {rho:.3f}\n  - C={fit['C']:.4g}, α={fit['alpha']:.4g}, "
                 f"β={fit['beta']:.4g}, residual {fit['residual']:.3g}")
        return summary


# --- Setup Function ---
async def setup(bench):
    commands = StabilityCommands(bench)
    bench.add_command("stability", commands.stability,
                      help="Metric difference against partial DtN difference over a family of pairs")
    print("✅ Command module 'stabilityCommands' loaded.")
