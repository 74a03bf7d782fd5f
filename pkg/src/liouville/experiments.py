"""Batch experiments: each writes CSV/JSON result files and returns a manifest.

Result files are a pure function of the configuration (including the master
seed) and the package version.  The manifest also records wall time, so it is
kept apart from the result files.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.stats import kstest

from . import __version__
from ._rng import derive_rng, derive_seed
from .boundary import (boundary_heat_kernel, boundary_spectral_dimension, lbm_with_auto_box,
                       sample_boundary_map, sample_critical_map, boundary_grid)
from .bridge import (TransformConfig, couple_paths_batch, integral_transform, occupation_kernel_integral,
                     rn_weight_values, sample_bridges, spectral_dimension_fit)
from .chaos import ball_mass_exponent, critical_boundary_measure, gmc_measure, multifractal_beta
from .config import ExperimentConfig, config_dict
from .field import CovarianceSpec, GridSpec, cutoff_covariance, grid_for_box, sample_field_grid
from .io import export_heat_kernel, export_paths, export_transforms, save_field, write_csv, write_json


class ExperimentError(RuntimeError):
    """A module error raised while running an experiment."""


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    files: list
    warnings: list = dc_field(default_factory=list)
    passed: bool | None = None
    summary: dict = dc_field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "wall_time": self.wall_time,
            "files": self.files,
            "warnings": self.warnings,
            "passed": self.passed,
        }


class _Outputs:
    """Tracks written files so a failed run can be cleaned up."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        self.summary: dict = {}
        self.passed: bool | None = None

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _field_spec(cfg: ExperimentConfig, dimension: int, eps: float | None = None) -> CovarianceSpec:
    return CovarianceSpec(dimension, cfg.mass, cfg.eps if eps is None else eps)


def _transform_cfg(cfg: ExperimentConfig, key: str) -> TransformConfig:
    return TransformConfig(n_bridges=cfg.n_bridges, n_steps=cfg.n_steps, t_low=cfg.t_low, t_high=cfg.t_high,
                           n_t_points=cfg.n_t_points, seed=derive_seed(cfg.master_seed, key), n_fields=cfg.n_fields,
                           refinements=cfg.refinements, workers=cfg.workers)


def _bulk_field_access(cfg: ExperimentConfig, out: _Outputs):
    spec = _field_spec(cfg, 2)
    if not cfg.quenched:
        return spec
    grid = grid_for_box((0.0, 0.0), cfg.half_width, cfg.eps)
    sample = sample_field_grid(grid, spec, derive_seed(cfg.master_seed, "quenched-field"))
    save_field(out.path("field.bin"), sample)
    return sample


# ------------------------------------------------------------ experiments ---

def field_check(cfg: ExperimentConfig, out: _Outputs):
    """Empirical covariance of grid fields against the kernel, and unit-mean chaos masses."""
    spec2 = _field_spec(cfg, 2)
    cell = cfg.cell or cfg.eps / 2
    n = 2 ** max(1, math.ceil(math.log2(2 * cfg.half_width / cell)))
    grid2 = GridSpec.centered((0.0, 0.0), cfg.half_width, n)
    grid1 = GridSpec.centered((0.0,), cfg.half_width, n)
    spec1 = _field_spec(cfg, 1)
    lags = np.array([0, 1, 2, 4, 8, 16])
    i0 = n // 2
    prods = np.zeros((cfg.replicates, lags.size))
    m2 = np.empty(cfg.replicates)
    m1 = np.empty(cfg.replicates)
    for r in range(cfg.replicates):
        f2 = sample_field_grid(grid2, spec2, derive_seed(cfg.master_seed, "field-check", r))
        v = f2.values
        prods[r] = v[i0, i0] * v[i0, i0 + lags]
        m2[r] = gmc_measure(f2, cfg.gamma, "bulk").total_mass(((0.0, 1.0), (0.0, 1.0)))
        f1 = sample_field_grid(grid1, spec1, derive_seed(cfg.master_seed, "field-check-1d", r))
        m1[r] = gmc_measure(f1, cfg.gamma, "boundary").total_mass((0.0, 1.0))
        if r == 0:
            save_field(out.path("field.bin"), f2)
    theory = cutoff_covariance(lags * grid2.cell, spec2)
    emp = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(cfg.replicates)
    write_csv(out.path("covariance.csv"), ["lag", "empirical", "stderr", "kernel"],
              zip(lags * grid2.cell, emp, se, np.atleast_1d(theory)))
    # exact mass of the cells with centre in the unit box
    vol2 = float(grid2.cell_mask(((0.0, 1.0), (0.0, 1.0))).sum() * grid2.cell_volume)
    vol1 = float(grid1.cell_mask((0.0, 1.0)).sum() * grid1.cell_volume)
    out.summary = {
        "covariance_max_z": float(np.max(np.abs(emp - theory) / se)),
        "bulk_mass_mean": float(m2.mean()),
        "bulk_mass_stderr": float(m2.std(ddof=1) / math.sqrt(m2.size)),
        "bulk_cells_volume": vol2,
        "boundary_mass_mean": float(m1.mean()),
        "boundary_mass_stderr": float(m1.std(ddof=1) / math.sqrt(m1.size)),
        "boundary_cells_volume": vol1,
    }
    write_json(out.path("summary.json"), out.summary)


def boundary_specdim(cfg: ExperimentConfig, out: _Outputs):
    """Spectral dimension of boundary Liouville Brownian motion (heat kernel in phi coordinates)."""
    spec = _field_spec(cfg, 1)
    box = (-cfg.half_width, cfg.half_width)
    times = np.asarray(cfg.times)
    rows, ds, rejected, paths_rows = [], [], [], None
    for r in range(cfg.replicates):
        seed = derive_seed(cfg.master_seed, "boundary", r)
        if cfg.flavor == "critical_boundary":
            def build(b, seed=seed):
                return sample_critical_map(spec, seed, b, cfg.cell)[0]
            _, _, n_rej = sample_critical_map(spec, seed, box, cfg.cell)
            rejected.append(n_rej)
        else:
            def build(b, seed=seed):
                return sample_boundary_map(cfg.gamma, spec, seed, b, cfg.cell)
        paths, m, used_box = lbm_with_auto_box(build, 0.0, times, 8, derive_seed(seed, "paths"), box)
        ds.append(boundary_spectral_dimension(m, times))
        rows.extend((t, 0.0, 0.0, p) for t, p in zip(times, boundary_heat_kernel(m, 0.0, 0.0, times)))
        if r == 0:
            paths_rows = paths
    export_heat_kernel(out.path("heat_kernel.csv"), rows)
    export_paths(out.path("paths.csv"), times, paths_rows)
    out.summary = {
        "flavor": cfg.flavor,
        "gamma": cfg.gamma if cfg.flavor == "boundary" else 2 * math.sqrt(2),
        "d_S": ds,
        "max_abs_error": float(np.max(np.abs(np.asarray(ds) - 1.0))),
        "rejected_realisations": rejected,
    }
    write_json(out.path("summary.json"), out.summary)


def critical_phi_table(cfg: ExperimentConfig):
    """``phi(1)`` under both critical normalisations for every replicate and cutoff.

    The same seed is used on the same grid for every cutoff, so each replicate
    is one white-noise realisation seen through the whole cutoff family.
    """
    eps_list = sorted(cfg.eps_list, reverse=True)
    cell = cfg.cell or min(eps_list) / 8
    lo, hi = 0.5 - cfg.half_width, 0.5 + cfg.half_width
    grid = boundary_grid((lo, hi), cell)
    deriv = np.empty((cfg.replicates, len(eps_list)))
    sh = np.empty_like(deriv)
    for r in range(cfg.replicates):
        seed = derive_seed(cfg.master_seed, "critical", r)
        for k, eps in enumerate(eps_list):
            m = critical_boundary_measure(sample_field_grid(grid, CovarianceSpec(1, cfg.mass, eps), seed))
            deriv[r, k] = m.total_mass((0.0, 1.0))
            sh[r, k] = m.seneta_heyde_mass((0.0, 1.0))
    return np.asarray(eps_list), deriv, sh


def critical_summary(eps, deriv, sh) -> dict:
    cauchy = [float(np.median(np.abs(deriv[:, k + 1] - deriv[:, k]) / np.abs(deriv[:, k + 1])))
              for k in range(eps.size - 1)]
    rel = np.abs(sh[:, -1] - deriv[:, -1]) / np.abs(deriv[:, -1])
    return {
        "eps": eps.tolist(),
        "cauchy_median_rel_change": cauchy,
        "sh_vs_derivative_median_rel_diff": float(np.median(rel)),
        "median_derivative": float(np.median(deriv[:, -1])),
        "median_seneta_heyde": float(np.median(sh[:, -1])),
        "median_ratio": float(np.median(sh[:, -1] / deriv[:, -1])),
    }


def critical_boundary(cfg: ExperimentConfig, out: _Outputs):
    eps, deriv, sh = critical_phi_table(cfg)
    rows = [(r, e, deriv[r, k], sh[r, k]) for r in range(deriv.shape[0]) for k, e in enumerate(eps)]
    write_csv(out.path("phi1.csv"), ["replicate", "eps", "phi1_derivative", "phi1_seneta_heyde"], rows)
    out.summary = critical_summary(eps, deriv, sh)
    write_json(out.path("summary.json"), out.summary)


def bulk_specdim(cfg: ExperimentConfig, out: _Outputs):
    access = _bulk_field_access(cfg, out)
    fits, ests = [], []
    for a in cfg.alphas:
        fit = spectral_dimension_fit((0.0, 0.0), cfg.gamma, a, cfg.lambdas, _transform_cfg(cfg, "bulk"), access)
        fits.append(dict(fit.summary(), alpha=a))
        ests.extend(fit.estimates)
    export_transforms(out.path("transforms.csv"), ests)
    out.summary = {"gamma": cfg.gamma, "mode": "quenched" if cfg.quenched else "annealed", "fits": fits}
    write_json(out.path("summary.json"), out.summary)


def transform_table(cfg: ExperimentConfig, out: _Outputs):
    access = _bulk_field_access(cfg, out)
    ests = []
    for dx in cfg.dxs:
        for a in cfg.alphas:
            for lam in cfg.lambdas:
                ests.append(integral_transform((0.0, 0.0), (dx, 0.0), cfg.gamma, a, lam, _transform_cfg(cfg, "table"), access))
    export_transforms(out.path("transforms.csv"), ests)
    out.summary = {"n_rows": len(ests), "divergent": sum(e.divergent for e in ests)}
    write_json(out.path("summary.json"), out.summary)


def ball_mass(cfg: ExperimentConfig, out: _Outputs):
    """Sup-ball mass scaling exponent per replicate (planar chaos)."""
    spec = _field_spec(cfg, 2)
    cell = cfg.cell or cfg.eps / 2
    n = 2 ** max(1, math.ceil(math.log2(2 * cfg.half_width / cell)))
    grid = GridSpec.centered((cfg.half_width, cfg.half_width), cfg.half_width, n)
    region = ((cfg.half_width - 1.0, cfg.half_width + 1.0),) * 2
    rows, expo = [], []
    for r in range(cfg.replicates):
        f = sample_field_grid(grid, spec, derive_seed(cfg.master_seed, "ball", r))
        rep = ball_mass_exponent(gmc_measure(f, cfg.gamma, "bulk"), cfg.radii, region)
        expo.append(rep.fitted_exponent)
        rows.extend((r, rad, m) for rad, m in zip(rep.radii, rep.sup_masses))
    write_csv(out.path("ball_masses.csv"), ["replicate", "radius", "sup_mass"], rows)
    beta = multifractal_beta(cfg.gamma, "bulk")
    expo = np.asarray(expo)
    out.summary = {
        "gamma": cfg.gamma,
        "beta": beta,
        "exponents": expo.tolist(),
        "median_exponent": float(np.median(expo)),
        "fraction_above_beta_minus_0.2": float(np.mean(expo >= beta - 0.2)),
    }
    write_json(out.path("summary.json"), out.summary)


def coupling_runs(y0, y, horizon, n_steps, replicates, seed, batch=1000):
    """Meeting times and per-coordinate unit-time increments of the spliced path."""
    t1s, t2s, incs, post = [], [], [], 0.0
    for b, lo in enumerate(range(0, replicates, batch)):
        n = min(batch, replicates - lo)
        times, p0, p1, bar, t1, t2 = couple_paths_batch(y0, y, horizon, n_steps, n, derive_rng(seed, "coupling", b))
        t1s.append(t1)
        t2s.append(t2)
        tau = np.maximum(t1, t2)
        after = times[None, :] > tau[:, None]
        if after.any():
            post = max(post, float(np.abs(bar - p1)[after].max()))
        k1 = int(round(n_steps / horizon))
        incs.append(bar[:, k1, :] - bar[:, 0, :])
    return np.concatenate(t1s), np.concatenate(t2s), np.concatenate(incs), post


def coupling_check(cfg: ExperimentConfig, out: _Outputs):
    gap = cfg.dxs[0]
    horizon = cfg.t_high or 8.0
    seed = derive_seed(cfg.master_seed, "coupling")
    t1, t2, incs, post = coupling_runs((0.0, 0.0), (gap, gap), horizon, cfg.n_steps, cfg.replicates, seed)
    write_csv(out.path("meeting_times.csv"), ["replicate", "tau1", "tau2", "tau"],
              ((i, a, b, max(a, b)) for i, (a, b) in enumerate(zip(t1, t2))))
    trend = []
    for g in (1.0, 0.5, 0.25):
        a, b, _, _ = coupling_runs((0.0, 0.0), (g, g), 1.0, 1024, 2000, derive_seed(seed, "trend", str(g)))
        trend.append({"gap": g, "p_tau_above_1": float(np.mean(np.maximum(a, b) > 1.0))})
    out.summary = {
        "gap": gap,
        "median_tau1": float(np.median(t1)),
        "oracle_median_tau1": gap * gap / (2 * 0.6744897501960817 ** 2),
        "ks_pvalues": [float(kstest(incs[:, i], "norm").pvalue) for i in range(2)],
        "max_post_tau_deviation": post,
        "trend": trend,
    }
    write_json(out.path("summary.json"), out.summary)


def identity_suite(cfg: ExperimentConfig) -> dict:
    """Closed-form and oracle identities with pass/fail flags."""
    res = {}
    n = cfg.replicates
    # Radon-Nikodym weight of the bridge: unit mean and box probabilities
    x, y, t = np.zeros(2), np.array([1.0, 0.0]), 1.0
    box = ((0.25, 0.75), (-0.25, 0.25))
    rng = derive_rng(cfg.master_seed, "identity", "rn")
    checks = []
    for s in (t / 4, t / 2, 3 * t / 4):
        bs = x + rng.standard_normal((n, 2)) * math.sqrt(s)
        w = rn_weight_values(x, bs, y, s, t)
        inside = (bs[:, 0] >= 0.25) & (bs[:, 0] <= 0.75) & (bs[:, 1] >= -0.25) & (bs[:, 1] <= 0.25)
        k = int(round(4 * s / t))
        br = sample_bridges(x, y, t, 4, n, rng)[:, k]
        ib = (br[:, 0] >= 0.25) & (br[:, 0] <= 0.75) & (br[:, 1] >= -0.25) & (br[:, 1] <= 0.25)
        a, sa = float((w * inside).mean()), float((w * inside).std(ddof=1) / math.sqrt(n))
        b, sb = float(ib.mean()), float(ib.std(ddof=1) / math.sqrt(n))
        wm, ws = float(w.mean()), float(w.std(ddof=1) / math.sqrt(n))
        checks.append({"s": s, "weight_mean": wm, "weight_se": ws, "weighted_bm": a, "bridge": b,
                       "z": (a - b) / math.hypot(sa, sb),
                       "pass": abs(wm - 1) <= 3 * ws and abs(a - b) <= 3 * math.hypot(sa, sb)})
    res["bridge_weight"] = checks
    # occupation kernel closed form against quadrature
    rng = derive_rng(cfg.master_seed, "identity", "occupation")
    worst = 0.0
    for _ in range(20):
        yy, zz, tt = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), rng.uniform(0.1, 2.0)
        d2 = float(np.sum((yy - zz) ** 2))
        q, _ = integrate.quad(lambda s: math.exp(-d2 / (2 * s)) / (2 * math.pi * s), 0, tt / 2, epsabs=0, epsrel=1e-12,
                              limit=200)
        worst = max(worst, abs(occupation_kernel_integral(yy, zz, tt) - q))
    res["occupation_quadrature"] = {"max_abs_error": worst, "pass": worst < 1e-8}
    # gamma = 0 transform closed form
    rows = []
    for a in (0.5, 1.0, 2.0):
        for lam in (0.5, 1.0, 2.0, 4.0):
            e = integral_transform(x, x, 0.0, a, lam, _transform_cfg(cfg, "identity-transform"))
            exact = math.gamma(a) * lam ** -a / (2 * math.pi)
            rows.append({"alpha": a, "lambda": lam, "value": e.value, "exact": exact, "stderr": e.stderr,
                         "pass": abs(e.value - exact) <= 3 * e.stderr})
    res["gamma0_transform"] = rows
    res["passed"] = bool(all(c["pass"] for c in checks) and res["occupation_quadrature"]["pass"]
                         and all(r["pass"] for r in rows))
    return res


def identity_checks(cfg: ExperimentConfig, out: _Outputs):
    out.summary = identity_suite(cfg)
    out.passed = out.summary["passed"]
    write_json(out.path("identities.json"), out.summary)


RUNNERS = {
    "field_check": field_check,
    "boundary_specdim": boundary_specdim,
    "critical_boundary": critical_boundary,
    "bulk_specdim": bulk_specdim,
    "transform_table": transform_table,
    "ball_mass": ball_mass,
    "coupling_check": coupling_check,
    "identity_checks": identity_checks,
}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run ``cfg.experiment`` into ``cfg.output_dir``; partial outputs are removed on failure."""
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            RUNNERS[cfg.experiment](cfg, out)
        except Exception as exc:
            out.cleanup()
            raise ExperimentError(f"{cfg.experiment}: {type(exc).__name__}: {exc}") from exc
    for p in out.files:
        if not p.exists() or p.stat().st_size == 0:
            out.cleanup()
            raise ExperimentError(f"{cfg.experiment}: output {p.name} missing or empty")
    manifest = RunManifest(
        config=config_dict(cfg),
        version=__version__,
        wall_time=time.perf_counter() - t0,
        files=[p.name for p in out.files],
        warnings=sorted({str(w.message) for w in caught}),
        passed=out.passed,
        summary=out.summary,
    )
    write_json(root / "manifest.json", manifest.as_dict())
    return manifest


__all__ = ["RunManifest", "ExperimentError", "run_experiment", "identity_suite", "critical_phi_table",
           "critical_summary", "coupling_runs", "RUNNERS"]
