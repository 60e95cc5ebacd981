"""Implicit finite-difference solver for the 1-D Fokker-Planck equation.

The density evolves under

    dp/dt = (eps^2 / 2) p'' - (b p)'

on ``(-a, a)`` with zero-flux (reflecting) walls.  One backward-Euler step is a
tridiagonal solve; the matrix only depends on the drift, ``dt`` and ``eps``,
so it is factorized once and reused for every step and every initial
condition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AuditFailure, ConfigurationError, NumericError
from .mesh import TimeGrid, UniformGrid1D, integrate

__all__ = [
    "PotentialSpec",
    "DriftSamples",
    "DensitySnapshot",
    "OUParams",
    "TridiagonalFactor",
    "ImplicitStepper",
    "drift_samples",
    "dirac_approximation",
    "gaussian_pdf",
    "step_implicit",
    "solve_fpe",
    "solve_fpe_batch",
    "analytic_ou_density",
    "write_snapshot_csv",
]

DIRAC_SIGMA_FACTOR = 100.0


@dataclass(frozen=True)
class PotentialSpec:
    """Gradient drift ``b = -V'`` plus the noise intensity ``eps``.

    kind:
        ``"double_well"`` (``V = y^4/4 - y^2/2``), ``"quadratic"``
        (``V = curvature * y^2 / 2``) or ``"tabulated"`` (``V'`` given at the
        points ``table_y``, linearly interpolated and extrapolated).
    """

    kind: str = "double_well"
    eps: float = 0.25
    curvature: float = 1.0
    table_y: tuple = ()
    table_dV: tuple = ()

    def __post_init__(self):
        if self.kind not in ("double_well", "quadratic", "tabulated"):
            raise ConfigurationError(f"unknown potential {self.kind!r}", field="potential")
        if not np.isfinite(self.eps) or self.eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps!r}", field="epsilon")
        if self.kind == "tabulated":
            ty = np.asarray(self.table_y, dtype=float)
            if ty.size < 2 or ty.shape != np.shape(self.table_dV) or np.any(np.diff(ty) <= 0):
                raise ConfigurationError(
                    "tabulated potential needs >= 2 strictly increasing points", field="potential_file"
                )

    def drift(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "double_well":
            return y - y**3
        if self.kind == "quadratic":
            return -self.curvature * y
        ty = np.asarray(self.table_y, dtype=float)
        tv = np.asarray(self.table_dV, dtype=float)
        dv = np.interp(y, ty, tv)
        lo, hi = y < ty[0], y > ty[-1]
        dv[lo] = tv[0] + (y[lo] - ty[0]) * (tv[1] - tv[0]) / (ty[1] - ty[0])
        dv[hi] = tv[-1] + (y[hi] - ty[-1]) * (tv[-1] - tv[-2]) / (ty[-1] - ty[-2])
        return -dv


@dataclass(frozen=True)
class DriftSamples:
    values: np.ndarray
    ghost_left: float
    ghost_right: float


@dataclass
class DensitySnapshot:
    values: np.ndarray
    grid: UniformGrid1D
    t: float = 0.0

    @property
    def mass(self) -> float:
        return float(integrate(self.values, self.grid.weights))

    @property
    def min_value(self) -> float:
        return float(np.min(self.values))


@dataclass(frozen=True)
class OUParams:
    """Gaussian initial law ``N(mu0, sigma0^2)`` evolved for time ``t``.

    ``curvature`` is the OU restoring rate (drift ``-curvature * y``).
    """

    mu0: float
    sigma0: float
    t: float
    eps: float = 1.0
    curvature: float = 1.0

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ConfigurationError("sigma0 must be >= 0", field="sigma0")
        if self.t < 0:
            raise ConfigurationError("t must be >= 0", field="t")

    @property
    def mean(self) -> float:
        return self.mu0 * np.exp(-self.curvature * self.t)

    @property
    def variance(self) -> float:
        k, t = self.curvature, self.t
        return self.sigma0**2 * np.exp(-2 * k * t) + self.eps**2 * (-np.expm1(-2 * k * t)) / (2 * k)


def gaussian_pdf(y, mu, sigma):
    y = np.asarray(y, dtype=float)
    return np.exp(-0.5 * ((y - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))


def drift_samples(potential: PotentialSpec, grid: UniformGrid1D) -> DriftSamples:
    """Drift at the nodes and at the two ghost nodes ``y_0 - dx``, ``y_n + dx``."""
    b = potential.drift(grid.nodes)
    ghosts = potential.drift(np.array([grid.nodes[0] - grid.dx, grid.nodes[-1] + grid.dx]))
    bad = np.flatnonzero(~np.isfinite(b))
    if bad.size:
        raise NumericError(f"non-finite drift at node {bad[0]}", {"node": int(bad[0])})
    if not np.all(np.isfinite(ghosts)):
        raise NumericError("non-finite drift at a ghost node", {"ghosts": ghosts.tolist()})
    return DriftSamples(b, float(ghosts[0]), float(ghosts[1]))


def dirac_approximation(center: float, grid: UniformGrid1D, sigma: float | None = None) -> DensitySnapshot:
    """Gaussian stand-in for a point mass at the node ``center``.

    The default width is ``100 * dx``; samples are rescaled to unit Simpson mass.
    """
    grid.node_index(center)
    sigma = DIRAC_SIGMA_FACTOR * grid.dx if sigma is None else float(sigma)
    if sigma <= 0:
        raise ConfigurationError("dirac sigma must be positive", field="dirac_sigma")
    p = gaussian_pdf(grid.nodes, center, sigma)
    p /= integrate(p, grid.weights)
    return DensitySnapshot(p, grid, 0.0)


class TridiagonalFactor:
    """Thomas elimination of a tridiagonal matrix, factored once.

    ``lower[0]`` and ``upper[-1]`` are ignored.  No pivoting: the FPE matrix is
    column diagonally dominant whenever ``|b| dx <= eps^2``.  ``min_pivot``
    records the smallest pivot magnitude met during elimination.
    """

    def __init__(self, lower, diag, upper):
        lower = np.asarray(lower, dtype=float)
        diag = np.asarray(diag, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = diag.size
        inv_piv = np.empty(n)
        cp = np.empty(n)
        piv = diag[0]
        pivots = [piv]
        for i in range(n):
            if i:
                piv = diag[i] - lower[i] * cp[i - 1]
                pivots.append(piv)
            if piv == 0 or not np.isfinite(piv):
                raise NumericError("zero pivot in tridiagonal elimination", {"row": i})
            inv_piv[i] = 1.0 / piv
            cp[i] = upper[i] * inv_piv[i] if i < n - 1 else 0.0
        self.lower = lower
        self.inv_piv = inv_piv
        self.cp = cp
        self.min_pivot = float(np.min(np.abs(pivots)))
        self.size = n

    def solve(self, rhs) -> np.ndarray:
        d = np.array(rhs, dtype=float)
        if d.shape[0] != self.size:
            raise ValueError(f"rhs has {d.shape[0]} rows, expected {self.size}")
        a, ip, cp = self.lower, self.inv_piv, self.cp
        d[0] *= ip[0]
        for i in range(1, self.size):
            d[i] -= a[i] * d[i - 1]
            d[i] *= ip[i]
        for i in range(self.size - 2, -1, -1):
            d[i] -= cp[i] * d[i + 1]
        return d


class ImplicitStepper:
    """Backward-Euler step ``A p_new = p_old`` with the reflecting closure.

    Ghost values are eliminated through
    ``(eps^2/2) (p_1 - p_-1) / (2 dx) - b_0 p_0 = 0`` on the left and the mirror
    relation on the right.
    """

    def __init__(self, grid: UniformGrid1D, drift: DriftSamples, dt: float, eps: float):
        if dt <= 0:
            raise ConfigurationError("dt must be positive", field="m")
        self.grid, self.dt, self.eps = grid, float(dt), float(eps)
        self.lower, self.diag, self.upper = self._coefficients(grid, drift, dt, eps)
        try:
            self.factor = TridiagonalFactor(self.lower, self.diag, self.upper)
        except NumericError as exc:
            exc.diagnostics.update(dt=dt, dx=grid.dx, eps=eps)
            raise NumericError(f"singular implicit FPE matrix (dt={dt}, dx={grid.dx}, eps={eps})",
                               exc.diagnostics) from exc

    @staticmethod
    def _coefficients(grid, drift, dt, eps):
        n, dx = grid.n, grid.dx
        b = drift.values
        diff = eps**2 / (2 * dx**2)
        adv = 1.0 / (2 * dx)
        lower = np.zeros(n + 1)
        upper = np.zeros(n + 1)
        diag = np.full(n + 1, 1.0 + 2.0 * dt * diff)
        lower[1:] = -dt * (diff + adv * b[:-1])
        upper[:-1] = -dt * (diff - adv * b[1:])
        # ghost p_{-1} = p_1 - (4 dx / eps^2) b_0 p_0
        ghost = -dt * (diff + adv * drift.ghost_left)
        upper[0] += ghost
        diag[0] += ghost * (-4 * dx * b[0] / eps**2)
        # ghost p_{n+1} = p_{n-1} + (4 dx / eps^2) b_n p_n
        ghost = -dt * (diff - adv * drift.ghost_right)
        lower[n] += ghost
        diag[n] += ghost * (4 * dx * b[n] / eps**2)
        return lower, diag, upper

    def dense_matrix(self) -> np.ndarray:
        n = self.grid.size
        A = np.diag(self.diag)
        A[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        A[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return A

    def step(self, p) -> np.ndarray:
        out = self.factor.solve(p)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite values after implicit step",
                               {"dt": self.dt, "dx": self.grid.dx, "eps": self.eps})
        return out


def step_implicit(p: DensitySnapshot, drift: DriftSamples, dt: float, eps: float) -> DensitySnapshot:
    stepper = ImplicitStepper(p.grid, drift, dt, eps)
    return DensitySnapshot(stepper.step(p.values), p.grid, p.t + dt)


def _check_positivity(values, tol, where):
    lo = float(np.min(values))
    if lo < -tol:
        raise AuditFailure(f"negative density {lo:.3e} below -{tol:g} ({where})",
                           [{"name": "positivity", "status": "fail", "value": lo}])
    return lo


def solve_fpe(
    x0: float,
    potential: PotentialSpec,
    grid: UniformGrid1D,
    timegrid: TimeGrid,
    sigma: float | None = None,
    snapshot_times=(),
    positivity_tol: float = 1e-8,
    initial: DensitySnapshot | None = None,
) -> DensitySnapshot:
    """Evolve the Dirac surrogate at ``x0`` up to ``timegrid.T``.

    ``initial`` replaces the surrogate when given.  Snapshots at the time
    nodes closest to ``snapshot_times`` are attached as ``result.snapshots``.
    The minimum over all steps is kept in ``result.min_over_steps``.
    """
    p0 = dirac_approximation(x0, grid, sigma) if initial is None else initial
    stepper = ImplicitStepper(grid, drift_samples(potential, grid), timegrid.dt, potential.eps)
    wanted = {int(round(t / timegrid.dt)): t for t in snapshot_times}
    snaps = {}
    p = p0.values.copy()
    lo = float(p.min())
    if 0 in wanted:
        snaps[wanted[0]] = DensitySnapshot(p.copy(), grid, 0.0)
    for j in range(1, timegrid.m + 1):
        p = stepper.step(p)
        lo = min(lo, float(p.min()))
        if j in wanted:
            snaps[wanted[j]] = DensitySnapshot(p.copy(), grid, j * timegrid.dt)
    _check_positivity(np.array([lo]), positivity_tol, f"x0={x0}")
    out = DensitySnapshot(p, grid, timegrid.T)
    out.snapshots = snaps
    out.min_over_steps = lo
    out.initial_mass = p0.mass
    return out


def solve_fpe_batch(
    columns,
    potential: PotentialSpec,
    grid: UniformGrid1D,
    timegrid: TimeGrid,
    sigma: float | None = None,
    stepper: ImplicitStepper | None = None,
) -> np.ndarray:
    """Final-time densities for the initial nodes ``columns`` (node indices).

    Returns an array of shape ``(grid.size, len(columns))``.  Columns never mix,
    so the result does not depend on how ``columns`` is chunked.
    """
    columns = np.asarray(columns, dtype=int)
    if stepper is None:
        stepper = ImplicitStepper(grid, drift_samples(potential, grid), timegrid.dt, potential.eps)
    P = np.empty((grid.size, columns.size))
    for k, c in enumerate(columns):
        P[:, k] = dirac_approximation(grid.nodes[c], grid, sigma).values
    for _ in range(timegrid.m):
        P = stepper.factor.solve(P)
    if not np.all(np.isfinite(P)):
        raise NumericError("non-finite values in FPE solve",
                           {"dt": timegrid.dt, "dx": grid.dx, "eps": potential.eps})
    return P


def analytic_ou_density(params: OUParams, grid: UniformGrid1D) -> DensitySnapshot:
    """Exact Gaussian law of the OU process ``dX = -k X dt + eps dW``."""
    var = params.variance
    if var <= 0:
        raise ConfigurationError("degenerate law: sigma0 = 0 at t = 0", field="sigma0")
    return DensitySnapshot(gaussian_pdf(grid.nodes, params.mean, np.sqrt(var)), grid, params.t)


def write_snapshot_csv(path, snapshot: DensitySnapshot) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "p"])
        for y, p in zip(snapshot.grid.nodes, snapshot.values):
            w.writerow([repr(float(y)), repr(float(p))])
    return path
