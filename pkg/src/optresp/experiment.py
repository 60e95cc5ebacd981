"""End-to-end experiment pipeline and cross-validation suites.

Stages: kernel -> invariant density -> response coefficients -> optimal
perturbation -> perturbed kernels -> perturbed invariant densities -> audits.
Perturbed densities are always recomputed from the perturbed kernel's own
eigenproblem, so the response checks compare two independent routes.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import AuditFailure
from .fpe import OUParams, PotentialSpec, analytic_ou_density, dirac_approximation, solve_fpe
from .mesh import build_grid, build_time_grid, integrate
from .optimal import (
    CoefficientTable,
    WaveletBasis,
    assemble_optimal,
    coefficient_table,
    export_optimal,
    objective_value,
    sample_objectives,
)
from .response import Resolvent, perturb_kernel, response
from .transfer import (
    CACHE_VERSION,
    Density,
    KernelMatrix,
    apply,
    invariant_density,
    load_or_build_kernel,
    spectral_gap_estimate,
    write_kernel_csv,
)

__all__ = [
    "ExperimentContext",
    "RunReport",
    "run_experiment",
    "linear_response_convergence",
    "optimality_sampling",
    "ou_oracle_suite",
    "operator_law_audit",
    "local_maxima",
    "symmetry_defect",
]

log = logging.getLogger(__name__)


def local_maxima(f, y, floor=1e-6):
    """Interior strict local maxima of ``f`` whose value exceeds ``floor * max(f)``.

    The floor discards rounding-level wiggles in the far tails.
    """
    f = np.asarray(f, dtype=float)
    inner = np.arange(1, f.size - 1)
    is_max = (f[inner] > f[inner - 1]) & (f[inner] >= f[inner + 1]) & (f[inner] > floor * f.max())
    return np.asarray(y)[inner[is_max]]


def symmetry_defect(f, weights) -> float:
    """Simpson L1 distance between ``f(x)`` and ``f(-x)``."""
    f = np.asarray(f, dtype=float)
    return float(weights @ np.abs(f - f[::-1]))


def _audit(name, ok, value, threshold, detail="", warn=False):
    status = "pass" if ok else ("warn" if warn else "fail")
    return {"name": name, "status": status, "value": float(value), "threshold": float(threshold), "detail": detail}


class ExperimentContext:
    """Lazily computed pipeline objects for one configuration."""

    def __init__(self, config: ExperimentConfig, cache_dir=None):
        self.config = config
        self.cache_dir = cache_dir
        self.timings = {}
        self.cache_status = None

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = time.perf_counter() - t0
        return out

    @cached_property
    def grid(self):
        return self.config.grid

    @cached_property
    def restriction(self):
        return self.config.restriction

    @cached_property
    def kernel(self) -> KernelMatrix:
        K, status = self._timed("kernel", lambda: load_or_build_kernel(self.config, self.cache_dir))
        self.cache_status = status
        return K

    @cached_property
    def f0(self) -> Density:
        c = self.config
        return self._timed("invariant_density", lambda: invariant_density(self.kernel, c.eig_tol, c.max_iter))

    @cached_property
    def gap(self) -> float:
        return self._timed("spectral_gap", lambda: spectral_gap_estimate(self.kernel, self.f0))

    @cached_property
    def resolvent(self) -> Resolvent:
        c = self.config
        gap = self.gap if c.resolvent == "full" else None
        return self._timed(
            "resolvent",
            lambda: Resolvent(self.kernel, self.f0, self.restriction, c.resolvent, c.max_condition, gap=gap),
        )

    @cached_property
    def basis(self) -> WaveletBasis:
        return WaveletBasis(self.restriction, self.config.I, self.config.J, self.config.constraint_axis)

    @cached_property
    def phi(self) -> np.ndarray:
        return self.config.observable_samples(self.restriction.nodes)

    @cached_property
    def table(self) -> CoefficientTable:
        return self._timed("coefficients", lambda: coefficient_table(self.basis, self.phi, self.resolvent))

    @cached_property
    def optimal(self):
        return assemble_optimal(self.table, self.basis)

    @cached_property
    def optimal_response(self):
        return response(self.optimal, resolvent=self.resolvent)

    def perturbed(self, delta):
        if delta == 0:
            return self.kernel, self.f0
        Kd = perturb_kernel(self.kernel, self.optimal, delta)
        c = self.config
        return Kd, invariant_density(Kd, c.eig_tol, c.max_iter)

    def rate(self, f) -> float:
        r = self.restriction
        return float(r.weights @ (self.phi * r.restrict(np.asarray(f))))


@dataclass
class RunReport:
    config: dict
    metadata: dict
    audits: list
    f0: Density = None
    optimal: object = None
    table: CoefficientTable = None
    f_delta: dict = field(default_factory=dict)
    perturbed: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [a for a in self.audits if a["status"] == "fail"]

    def to_dict(self) -> dict:
        f0 = self.f0
        grid = f0.grid if f0 is not None else None
        return {
            "config": self.config,
            "metadata": self.metadata,
            "audits": self.audits,
            "f0": None if f0 is None else {
                "eigenvalue": f0.eigenvalue,
                "residual": f0.residual,
                "iterations": f0.iterations,
                "mass": f0.mass,
                "maxima": local_maxima(f0.values, grid.nodes).tolist(),
            },
            "objective": self.objective,
            "perturbed": self.perturbed,
            "f_delta": {
                str(k): {
                    "eigenvalue": v.eigenvalue,
                    "residual": v.residual,
                    "mass": v.mass,
                    "maxima": local_maxima(v.values, grid.nodes).tolist(),
                }
                for k, v in self.f_delta.items()
            },
            "files": self.files,
            "wall_clock": self.timings,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float))
        return path


def _fig_prefix(config: ExperimentConfig) -> str:
    symmetric = config.observable == "gaussian" and config.obs_mu == 0.0
    return "fig3" if symmetric else "fig4"


def run_experiment(config: ExperimentConfig, output_dir=None, cache_dir=None, write=True,
                   context: ExperimentContext | None = None) -> RunReport:
    """Run the whole pipeline, audit every stage, and write CSV/JSON artifacts."""
    ctx = context or ExperimentContext(config, cache_dir)
    c = config
    grid, r = ctx.grid, ctx.restriction
    w = grid.weights
    audits = []

    K = ctx.kernel
    audits += K.meta.get("audits") or K.audit(c.row_mass_tol, c.positivity_tol)

    f0 = ctx.f0
    audits.append(_audit("f0_residual", f0.residual <= c.eig_tol, f0.residual, c.eig_tol))
    symmetric_dynamics = c.potential in ("double_well", "quadratic")
    if symmetric_dynamics:
        sd = symmetry_defect(f0.values, w)
        audits.append(_audit("f0_symmetry", sd <= c.symmetry_tol_f0, sd, c.symmetry_tol_f0))
    audits.append(_audit("f0_positivity", f0.values.min() >= -1e-10, f0.values.min(), -1e-10))

    gap = ctx.gap
    audits.append(_audit("spectral_gap", gap < 1.0, gap, 1.0))

    table = ctx.table
    g = ctx.optimal
    obj = objective_value(g, ctx.phi, ctx.resolvent)
    rel = abs(obj - table.norm) / table.norm
    audits.append(_audit("representer_identity", rel <= 1e-8, rel, 1e-8))
    gnorm = g.l2_norm()
    audits.append(_audit("optimal_unit_norm", abs(gnorm - 1) <= 1e-6, abs(gnorm - 1), 1e-6))
    zm = g.constraint_violation()
    audits.append(_audit(f"optimal_{c.constraint_axis}", zm <= c.zero_mean_tol, zm, c.zero_mean_tol))

    f_delta, perturbed = {}, {}
    for delta in c.delta:
        Kd, fd = ctx.perturbed(delta)
        f_delta[delta] = fd
        lam = fd.eigenvalue
        perturbed[str(delta)] = {
            "min_entry": float(Kd.values.min()),
            "max_row_mass_change": float(Kd.meta.get("max_row_mass_change", 0.0)),
            "eigenvalue": lam,
            "growth_vs_f0": lam - f0.eigenvalue,
            "rate_change": (ctx.rate(fd.values) - ctx.rate(f0.values)),
        }
        if Kd.values.min() < -c.positivity_tol:
            audits.append(_audit(f"perturbed_kernel_min_delta={delta}", False, Kd.values.min(),
                                 -c.positivity_tol, "perturbed kernel takes negative values", warn=True))
        # row-mass audit rerun against the unperturbed kernel
        mass_dev = float(Kd.meta.get("max_row_mass_change", 0.0))
        if c.constraint_axis == "zero_mean_in_y":
            audits.append(_audit(f"perturbed_row_mass_delta={delta}", mass_dev <= 1e-8, mass_dev, 1e-8))
        else:
            audits.append(_audit(f"perturbed_row_mass_delta={delta}", mass_dev <= 1e-8, mass_dev, 1e-8,
                                 "perturbation with zero x-mean does not preserve integrals", warn=True))
        if symmetric_dynamics and c.observable == "gaussian" and c.obs_mu == 0.0:
            sd = symmetry_defect(fd.values, w)
            audits.append(_audit(f"f_delta_symmetry_delta={delta}", sd <= c.symmetry_tol_fdelta, sd,
                                 c.symmetry_tol_fdelta))

    metadata = {
        "version": __version__,
        "cache_format_version": CACHE_VERSION,
        "cache": ctx.cache_status,
        "d_snapped": r.d,
        "n1": r.n1,
        "dx": grid.dx,
        "dt": c.timegrid.dt,
        "dirac_sigma": c.sigma,
        "dirac_sigma_override": c.dirac_sigma is not None,
        "seed": c.seed,
        "lambda2": gap,
        "f0_eigenvalue": f0.eigenvalue,
        "resolvent_mode": c.resolvent,
        "resolvent_condition": ctx.resolvent.condition,
        "kernel_min_pivot": K.meta.get("min_pivot"),
        "n_basis": len(ctx.basis),
        "python": platform.python_version(),
    }
    report = RunReport(
        config=c.to_dict(),
        metadata=metadata,
        audits=audits,
        f0=f0,
        optimal=g,
        table=table,
        f_delta=f_delta,
        perturbed=perturbed,
        objective={"norm_G": table.norm, "objective_g": obj},
        timings=ctx.timings,
    )
    if write:
        out = Path(output_dir or c.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.files = write_figures(ctx, report, out)
        report.write_json(out / "report.json")
    return report


def write_figures(ctx: ExperimentContext, report: RunReport, out: Path) -> list:
    c, grid, r = ctx.config, ctx.grid, ctx.restriction
    y = grid.nodes
    files = []
    files.append(write_kernel_csv(out / "fig1a_kernel.csv", ctx.kernel.values, y, y))
    files.append(_write_columns(out / "fig1b_f0.csv", {"y": y, "f0": report.f0.values}))
    pre = _fig_prefix(c)
    files.append(_write_columns(out / f"{pre}a_observable.csv", {"y": r.nodes, "phi": ctx.phi}))
    write_kernel_csv(out / f"{pre}b_optimal_pert.csv", report.optimal.values, r.nodes, r.nodes, label="g")
    files.append(out / f"{pre}b_optimal_pert.csv")
    meta_path = out / f"{pre}b_optimal_meta.json"
    export_optimal(out / f"{pre}b_optimal_pert.csv", meta_path, report.optimal, report.table, ctx.basis,
                   seed=c.seed, extra={"objective_g": report.objective["objective_g"]})
    files.append(meta_path)
    files.append(report.table.to_csv(out / f"{pre}_coefficients.csv"))
    nonzero = [dl for dl in c.delta if dl != 0]
    if nonzero:
        delta = 0.5 if 0.5 in nonzero else nonzero[0]
        Kd = perturb_kernel(ctx.kernel, report.optimal, delta)
        files.append(write_kernel_csv(out / f"{pre}c_perturbed_kernel.csv", Kd.values, y, y))
    cols = {"y": y, "f0": report.f0.values}
    for delta, fd in report.f_delta.items():
        cols[f"f_delta_{delta:g}"] = fd.values
    files.append(_write_columns(out / f"{pre}d_densities.csv", cols))
    files.append(_write_columns(out / "response.csv", {"y": y, "R": ctx.optimal_response.values}))
    return [str(Path(f).name) for f in files]


def _write_columns(path, columns: dict) -> Path:
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])
    return path


# ----------------------------------------------------------------------------
# cross-validation suites


def linear_response_convergence(ctx: ExperimentContext, deltas=None, kdot=None) -> dict:
    """Compare finite differences ``(f_delta - f0) / delta`` against ``R`` for shrinking ``delta``.

    ``kdot`` defaults to the optimal perturbation.  Rows with ``delta == 0``
    are skipped with a note.
    """
    deltas = ctx.config.lr_deltas if deltas is None else deltas
    kdot = ctx.optimal if kdot is None else kdot
    R = response(kdot, resolvent=ctx.resolvent)
    f0 = ctx.f0.values
    w = ctx.grid.weights
    rate_R = ctx.rate(R.values)
    rows, notes = [], []
    for delta in deltas:
        if delta == 0:
            notes.append("delta=0 skipped: finite difference undefined")
            continue
        Kd = perturb_kernel(ctx.kernel, kdot, delta)
        fd = invariant_density(Kd, ctx.config.eig_tol, ctx.config.max_iter).values
        fd_quot = (fd - f0) / delta
        rows.append({
            "delta": float(delta),
            "l1_error": float(w @ np.abs(fd_quot - R.values)),
            "rate_error": abs((ctx.rate(fd) - ctx.rate(f0)) / delta - rate_R),
            "rate_fd": (ctx.rate(fd) - ctx.rate(f0)) / delta,
        })
    ordered = sorted(rows, key=lambda row: -row["delta"])
    l1 = [row["l1_error"] for row in ordered]
    rate = [row["rate_error"] for row in ordered]
    return {
        "rows": ordered,
        "rate_R": rate_R,
        "l1_decreasing": all(a > b for a, b in zip(l1, l1[1:])),
        "rate_decreasing": all(a > b for a, b in zip(rate, rate[1:])),
        "notes": notes,
    }


def optimality_sampling(ctx: ExperimentContext, n=None, seed=None, coeffs=None) -> dict:
    """Objective of ``n`` random unit-norm span elements against the optimum."""
    n = ctx.config.n_samples if n is None else n
    seed = ctx.config.seed if seed is None else seed
    vals, _ = sample_objectives(ctx.basis, ctx.phi, ctx.resolvent, n, seed, coeffs=coeffs)
    obj_g = objective_value(ctx.optimal, ctx.phi, ctx.resolvent)
    return {
        "n": int(vals.size),
        "seed": seed,
        "max_sampled": float(vals.max()),
        "objective_g": obj_g,
        "norm_G": ctx.table.norm,
        "excess": float(vals.max() - obj_g),
        "values": vals,
    }


def ou_oracle_suite(levels=((0.02, 0.02), (0.01, 0.01), (0.005, 0.005)), a=6.0, x0=0.5, sigma0=0.2,
                    eps=1.0, T=1.0) -> dict:
    """Final-time L1 error of the FPE solver against the exact OU law on several meshes."""
    pot = PotentialSpec("quadratic", eps, curvature=1.0)
    rows = []
    for dx, dt in levels:
        grid = build_grid(a, int(round(2 * a / dx)))
        tg = build_time_grid(T, int(round(T / dt)))
        t0 = time.perf_counter()
        init = dirac_approximation(x0, grid, sigma0)
        p = solve_fpe(x0, pot, grid, tg, initial=init)
        exact = analytic_ou_density(OUParams(x0, sigma0, T, eps), grid)
        rows.append({
            "dx": dx,
            "dt": dt,
            "l1_error": float(integrate(np.abs(p.values - exact.values), grid.weights)),
            "mass": p.mass,
            "seconds": time.perf_counter() - t0,
        })
    grid = build_grid(a, int(round(2 * a / levels[0][0])))
    init = dirac_approximation(x0, grid, sigma0)
    exact0 = analytic_ou_density(OUParams(x0, sigma0, 0.0, eps), grid)
    ratios = [rows[k]["l1_error"] / rows[k + 1]["l1_error"] for k in range(len(rows) - 1)]
    return {
        "rows": rows,
        "ratios": ratios,
        "t0_error": float(integrate(np.abs(init.values - exact0.values), grid.weights)),
    }


def operator_law_audit(K: KernelMatrix, n=100, seed=0, mass_tol=1e-2, pos_tol=1e-10) -> dict:
    """Integral preservation and L1 weak contraction on random signed functions,
    positivity on random nonnegative ones."""
    rng = np.random.default_rng(seed)
    w = K.weights
    F = rng.standard_normal((K.grid.size, n))
    LF = apply(K, F)
    l1 = w @ np.abs(F)
    mass_err = np.abs(w @ LF - w @ F) / l1
    contraction = (w @ np.abs(LF)) / l1 - 1.0
    P = rng.random((K.grid.size, n))
    LP = apply(K, P)
    return {
        "max_mass_error": float(mass_err.max()),
        "max_contraction_excess": float(contraction.max()),
        "min_positive_image": float(LP.min()),
        "mass_ok": bool(mass_err.max() <= mass_tol),
        "contraction_ok": bool(contraction.max() <= mass_tol),
        "positivity_ok": bool(LP.min() >= -pos_tol),
    }


def verify(config: ExperimentConfig, cache_dir=None, context=None) -> dict:
    """Run every cross-validation suite and collect audit records."""
    ctx = context or ExperimentContext(config, cache_dir)
    audits = []
    laws = operator_law_audit(ctx.kernel, seed=config.seed, mass_tol=config.row_mass_tol)
    audits.append(_audit("operator_integral_preservation", laws["mass_ok"], laws["max_mass_error"], config.row_mass_tol))
    audits.append(_audit("operator_weak_contraction", laws["contraction_ok"], laws["max_contraction_excess"],
                         config.row_mass_tol))
    audits.append(_audit("operator_positivity", laws["positivity_ok"], laws["min_positive_image"], -1e-10))
    lr = linear_response_convergence(ctx)
    audits.append(_audit("linear_response_l1_decreasing", lr["l1_decreasing"], lr["rows"][-1]["l1_error"], 0))
    audits.append(_audit("linear_response_rate_decreasing", lr["rate_decreasing"], lr["rows"][-1]["rate_error"], 0))
    opt = optimality_sampling(ctx)
    audits.append(_audit("optimality_sampling", opt["excess"] <= config.optimality_tol, opt["excess"],
                         config.optimality_tol))
    ou = ou_oracle_suite()
    audits.append(_audit("ou_oracle_error", ou["rows"][1]["l1_error"] <= 5e-2, ou["rows"][1]["l1_error"], 5e-2))
    audits.append(_audit("ou_oracle_order", min(ou["ratios"]) >= 1.5, min(ou["ratios"]), 1.5))
    opt.pop("values")
    return {"audits": audits, "linear_response": lr, "optimality": opt, "ou": ou, "operator_laws": laws}
