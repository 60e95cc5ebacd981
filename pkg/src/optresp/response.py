"""Linear response of the invariant density to kernel perturbations on ``D x D``.

A perturbation ``kdot`` lives on the D-nodes in both variables.  Its operator

    (Ldot f)(y_j) = sum_i w'_i kdot_ij f_i

feeds the resolvent, and the response is the derivative in ``delta`` of the
unit-mass leading eigenvector of ``L + delta * Ldot``.

Two resolvent modes are available:

``"full"``
    Bordered solve on the whole grid::

        [lam0 I - L   f0] [R  ]   [c * Ldot f0]
        [  w^T        0 ] [lam'] = [     0     ]

    ``c`` are the restriction's transfer factors, which carry D-quadrature
    into the parent grid (see :func:`perturb_kernel`).  ``R`` is then the
    exact derivative of the discrete normalized eigenvector, so
    ``(f_delta - f0) / delta -> R``, and it has zero mass.

``"restricted"``
    ``(I - L_D) eta = Ldot f0`` with ``L_D`` the operator restricted to
    D-rows and D-columns.  Mass leaks out of ``D``, so ``I - L_D`` is
    invertible; ``eta`` is supported on ``D``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericError
from .mesh import SubgridRestriction
from .transfer import KernelMatrix, spectral_gap_estimate

__all__ = [
    "PerturbationKernel",
    "ResponseVector",
    "Resolvent",
    "axis_means",
    "project_constraint",
    "apply_dot",
    "restricted_operator",
    "resolvent_solve",
    "response",
    "expectation_rate",
    "perturb_kernel",
    "preserves_integrals",
]

AXES = ("zero_mean_in_x", "zero_mean_in_y")


def axis_means(values, restriction: SubgridRestriction, axis: str) -> np.ndarray:
    """Simpson mean of ``values[i, j]`` over x (per y-line) or over y (per x-line)."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    w = restriction.weights
    length = 2 * restriction.d
    values = np.asarray(values, dtype=float)
    return (w @ values) / length if axis == "zero_mean_in_x" else (values @ w) / length


def project_constraint(values, restriction: SubgridRestriction, axis: str) -> np.ndarray:
    """Subtract the line means so every line along ``axis`` has zero Simpson mean."""
    values = np.array(values, dtype=float)
    mu = axis_means(values, restriction, axis)
    if axis == "zero_mean_in_x":
        values -= mu[None, :]
    else:
        values -= mu[:, None]
    return values


@dataclass
class PerturbationKernel:
    """Kernel perturbation sampled on D x D (row = initial x', column = terminal y')."""

    values: np.ndarray
    restriction: SubgridRestriction
    axis: str = "zero_mean_in_x"
    remainder: np.ndarray | None = None  # o(delta) term, kept at zero

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        k = self.restriction.n1 + 1
        if self.values.shape != (k, k):
            raise ValueError(f"perturbation must be {k}x{k}, got {self.values.shape}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")

    def constraint_violation(self) -> float:
        return float(np.max(np.abs(axis_means(self.values, self.restriction, self.axis))))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.restriction.weights2d * self.values**2)))

    def __mul__(self, c):
        return PerturbationKernel(c * self.values, self.restriction, self.axis)

    __rmul__ = __mul__

    def __add__(self, other):
        return PerturbationKernel(self.values + other.values, self.restriction, self.axis)

    def __neg__(self):
        return self * -1.0


@dataclass
class ResponseVector:
    """Response on the full grid; ``on_domain`` gives the D-node values."""

    values: np.ndarray
    restriction: SubgridRestriction
    mode: str = "full"
    eigenvalue_derivative: float = 0.0

    @property
    def on_domain(self) -> np.ndarray:
        return self.restriction.restrict(self.values)

    @property
    def integral(self) -> float:
        return float(self.restriction.parent.weights @ self.values)

    @property
    def integral_on_domain(self) -> float:
        return float(self.restriction.weights @ self.on_domain)


def _density_on_domain(f, restriction):
    f = np.asarray(getattr(f, "values", f), dtype=float)
    if f.shape[0] == restriction.parent.size:
        return restriction.restrict(f)
    if f.shape[0] == restriction.n1 + 1:
        return f
    raise ValueError(f"density has {f.shape[0]} values; expected grid or D-grid size")


def apply_dot(kdot: PerturbationKernel, f) -> np.ndarray:
    """``d_j = sum_i w'_i kdot_ij f_i`` on the D-nodes."""
    fd = _density_on_domain(f, kdot.restriction)
    return (kdot.restriction.weights * fd) @ kdot.values


def restricted_operator(K: KernelMatrix, restriction: SubgridRestriction) -> np.ndarray:
    """Matrix of ``1_D L 1_D`` acting on D-node vectors: ``(L_D eta)_j = sum_i w'_i k_ij eta_i``."""
    s = restriction.slice
    return (restriction.weights[:, None] * K.values[s, s]).T


def _factor(A, max_condition, what):
    anorm = np.linalg.norm(A, 1)
    lu, piv = sla.lu_factor(A, check_finite=True)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if not np.isfinite(cond) or cond > max_condition:
        raise NumericError(
            f"{what} is ill-conditioned (condition ~ {cond:.3e} > {max_condition:.1e}); "
            "check that the restricted operator is strictly sub-Markov and the spectral gap is positive",
            {"condition": cond},
        )
    return (lu, piv), cond


def resolvent_solve(L_D, d, max_condition=1e12):
    """Solve ``(I - L_D) eta = d`` directly.  Returns ``(eta, condition_estimate)``."""
    L_D = np.asarray(L_D, dtype=float)
    A = np.eye(L_D.shape[0]) - L_D
    fac, cond = _factor(A, max_condition, "I - L_D")
    return sla.lu_solve(fac, np.asarray(d, dtype=float)), cond


def _perron_root(A, iters=5000, tol=1e-12):
    v = np.ones(A.shape[0])
    v /= v.sum()
    lam = 0.0
    for _ in range(iters):
        u = A @ v
        s = np.abs(u).sum()
        if s == 0:
            return 0.0
        u /= s
        if np.abs(u - v).sum() <= tol:
            return float(s)
        v, lam = u, s
    return float(lam)


class Resolvent:
    """Factorization shared by every response computation for one ``(K, f0, D)``.

    Immutable after construction; ``solve`` may be called from several threads.
    """

    def __init__(self, K: KernelMatrix, f0, restriction: SubgridRestriction, mode="full",
                 max_condition=1e12, gap=None):
        if mode not in ("full", "restricted"):
            raise ValueError("mode must be 'full' or 'restricted'")
        self.K, self.restriction, self.mode = K, restriction, mode
        w = K.weights
        f0 = np.asarray(getattr(f0, "values", f0), dtype=float)
        self.f0 = f0 / (w @ f0)
        L = K.operator_matrix()
        self.eigenvalue = float(w @ (L @ self.f0))
        if mode == "full":
            self.gap = spectral_gap_estimate(K, self.f0) if gap is None else float(gap)
            if not self.gap < 1.0:
                raise NumericError(f"no spectral gap: |lambda_2| ~ {self.gap:.6f}", {"lambda2": self.gap})
            N = K.grid.size
            B = np.zeros((N + 1, N + 1))
            B[:N, :N] = self.eigenvalue * np.eye(N) - L
            B[:N, N] = self.f0
            B[N, :N] = w
            self._fac, self.condition = _factor(B, max_condition, "bordered resolvent system")
        else:
            L_D = restricted_operator(K, restriction)
            self.spectral_radius = _perron_root(np.abs(L_D))
            if not self.spectral_radius < 1.0:
                raise NumericError(
                    f"restricted operator is not sub-Markov (spectral radius {self.spectral_radius:.6f})",
                    {"spectral_radius": self.spectral_radius},
                )
            self.gap = gap
            self._fac, self.condition = _factor(np.eye(L_D.shape[0]) - L_D, max_condition, "I - L_D")

    def solve(self, d_domain) -> np.ndarray:
        """Response on the full grid for D-node source(s) ``d_domain`` (shape ``(n1+1,)`` or ``(n1+1, k)``)."""
        d = np.asarray(d_domain, dtype=float)
        r = self.restriction
        if self.mode == "restricted":
            return r.embed(sla.lu_solve(self._fac, d))
        N = self.K.grid.size
        rhs = np.zeros((N + 1,) + d.shape[1:])
        rhs[r.slice] = r.transfer_factors.reshape((-1,) + (1,) * (d.ndim - 1)) * d
        return sla.lu_solve(self._fac, rhs)[:N]

    def solve_with_multiplier(self, d_domain):
        """Like :meth:`solve` but also returns ``lam'`` (``0`` in restricted mode)."""
        if self.mode == "restricted":
            return self.solve(d_domain), 0.0
        d = np.asarray(d_domain, dtype=float)
        N = self.K.grid.size
        rhs = np.zeros(N + 1)
        rhs[self.restriction.slice] = self.restriction.transfer_factors * d
        sol = sla.lu_solve(self._fac, rhs)
        return sol[:N], float(sol[N])


def response(kdot: PerturbationKernel, K: KernelMatrix = None, f0=None, *, resolvent: Resolvent = None,
             mode="full") -> ResponseVector:
    """``R(kdot)``: the resolvent applied to ``Ldot f0``."""
    if resolvent is None:
        if K is None or f0 is None:
            raise ValueError("need either a resolvent or both K and f0")
        resolvent = Resolvent(K, f0, kdot.restriction, mode)
    d = apply_dot(kdot, resolvent.f0)
    values, lam_dot = resolvent.solve_with_multiplier(d)
    return ResponseVector(values, kdot.restriction, resolvent.mode, lam_dot)


def expectation_rate(phi_domain, kdot: PerturbationKernel, resolvent: Resolvent) -> float:
    """``<phi, R(kdot)>`` by Simpson quadrature over the D-nodes."""
    phi = np.asarray(phi_domain, dtype=float)
    R = response(kdot, resolvent=resolvent)
    return float(kdot.restriction.weights @ (phi * R.on_domain))


def perturb_kernel(K: KernelMatrix, kdot: PerturbationKernel, delta: float) -> KernelMatrix:
    """``K + delta * kdot`` on the D x D block.

    The block is scaled by the transfer factors in both variables, so the
    perturbed operator is exactly ``L + delta * Ldot`` under D-quadrature and
    a zero y-mean on every line leaves every row mass unchanged.  Only the
    D-boundary rows and columns are affected (halved for an even start).
    Negative entries and row-mass changes are recorded in ``meta``, not raised.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    vals = K.values.copy()
    s = kdot.restriction.slice
    c = kdot.restriction.transfer_factors
    vals[s, s] += delta * (c[:, None] * kdot.values * c[None, :])
    out = KernelMatrix(vals, K.grid, {k: v for k, v in K.meta.items() if k != "audits"})
    mass_change = np.abs(out.row_masses - K.row_masses)
    out.meta.update(
        delta=float(delta),
        min_entry=float(vals.min()),
        max_row_mass_change=float(mass_change.max()),
        constraint_axis=kdot.axis,
    )
    return out


def preserves_integrals(K: KernelMatrix, reference: KernelMatrix | None = None, tol=1e-8) -> bool:
    """Whether ``mass(L f) == mass(f)`` for all ``f`` (every row mass is 1).

    With ``reference`` the comparison is against its row masses instead of 1,
    which isolates the effect of a perturbation from the discretization defect.
    """
    target = 1.0 if reference is None else reference.row_masses
    return bool(np.all(np.abs(K.row_masses - target) <= tol))
