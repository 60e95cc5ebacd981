"""Sine-cosine basis on D x D and the optimal unit-norm kernel perturbation.

Each basis element is a product ``u(x) v(y)`` of one-dimensional trig factors
of frequencies ``i`` (in x) and ``j`` (in y).  With the default constraint
(zero mean in x) the x-frequency starts at 1, so every element integrates to
zero along x.  Elements are normalized on the D-grid under tensor Simpson
weights, which makes the truncated basis orthonormal for the discrete inner
product as long as ``4 * max(I, J) < n1``.

The objective is ``J(kdot) = <phi, R(kdot)>`` (maximized).  Its Riesz
representer in the span has coefficients ``G_r = J(h_r)``, and the maximizer
over the unit ball is ``sum_r G_r h_r / ||G||``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, NumericError
from .fpe import gaussian_pdf
from .mesh import SubgridRestriction
from .response import PerturbationKernel, Resolvent, response

__all__ = [
    "WaveletIndex",
    "WaveletBasis",
    "CoefficientTable",
    "ObservableSpec",
    "enumerate_basis",
    "eval_wavelet",
    "coefficient",
    "coefficient_table",
    "assemble_optimal",
    "objective_value",
    "sample_objectives",
]

KINDS = ("cc", "cs", "sc", "ss")
_TRIG = {"c": np.cos, "s": np.sin}


class WaveletIndex(NamedTuple):
    """``kind`` names the x factor then the y factor, e.g. ``"sc"`` = sin(x) cos(y)."""

    i: int
    j: int
    kind: str

    def is_valid(self, axis="zero_mean_in_x") -> bool:
        if self.kind not in KINDS or self.i < 0 or self.j < 0:
            return False
        if axis == "zero_mean_in_x" and self.i < 1:
            return False
        if axis == "zero_mean_in_y" and self.j < 1:
            return False
        # a sine of frequency 0 vanishes identically
        if self.i == 0 and self.kind[0] == "s":
            return False
        if self.j == 0 and self.kind[1] == "s":
            return False
        return True


def enumerate_basis(I: int, J: int, axis: str = "zero_mean_in_x") -> list[WaveletIndex]:
    """Legal indices ordered by ``i``, then ``j``, then kind.

    For ``zero_mean_in_x`` ``1 <= i <= I`` and ``0 <= j <= J``; for
    ``zero_mean_in_y`` the roles swap (``0 <= i <= I``, ``1 <= j <= J``).
    """
    if I < 1 or J < 0:
        raise ConfigurationError("need I >= 1 and J >= 0", field="I")
    if axis == "zero_mean_in_y" and J < 1:
        raise ConfigurationError("zero_mean_in_y needs J >= 1", field="J")
    i0 = 1 if axis == "zero_mean_in_x" else 0
    out = []
    for i in range(i0, I + 1):
        for j in range(0, J + 1):
            for kind in KINDS:
                idx = WaveletIndex(i, j, kind)
                if idx.is_valid(axis):
                    out.append(idx)
    return out


def _factor(kind_char, freq, t, d):
    return _TRIG[kind_char](freq * np.pi * np.asarray(t, dtype=float) / d)


def _factor_norm(kind_char, freq, restriction):
    u = _factor(kind_char, freq, restriction.nodes, restriction.d)
    return float(np.sqrt(restriction.weights @ (u * u)))


def eval_wavelet(idx: WaveletIndex, x, y, restriction: SubgridRestriction):
    """Basis element at ``(x, y)``, scaled to unit discrete L2(D x D) norm."""
    d = restriction.d
    nx = _factor_norm(idx.kind[0], idx.i, restriction)
    ny = _factor_norm(idx.kind[1], idx.j, restriction)
    return _factor(idx.kind[0], idx.i, x, d) * _factor(idx.kind[1], idx.j, y, d) / (nx * ny)


class WaveletBasis:
    """Truncated basis sampled on the D-grid, stored as 1-D factor tables.

    ``xf[p]`` and ``yf[q]`` are unit-norm factors; element ``r`` is
    ``xf[px[r]] (x) yf[qy[r]]``.  Distinct elements use distinct ``(p, q)``
    pairs, so a coefficient vector maps one-to-one onto a small matrix.
    """

    def __init__(self, restriction: SubgridRestriction, I: int, J: int, axis: str = "zero_mean_in_x"):
        self.restriction, self.I, self.J, self.axis = restriction, I, J, axis
        self.indices = enumerate_basis(I, J, axis)
        if 4 * max(I, J) >= restriction.n1:
            warnings.warn(
                f"frequencies up to {max(I, J)} alias on {restriction.n1} D-intervals; "
                "the discrete basis is not orthonormal",
                RuntimeWarning,
            )
        xkeys = sorted({(k.kind[0], k.i) for k in self.indices}, key=lambda t: (t[1], t[0]))
        ykeys = sorted({(k.kind[1], k.j) for k in self.indices}, key=lambda t: (t[1], t[0]))
        self.xkeys, self.ykeys = xkeys, ykeys
        self.xf = self._table(xkeys)
        self.yf = self._table(ykeys)
        xpos = {k: p for p, k in enumerate(xkeys)}
        ypos = {k: q for q, k in enumerate(ykeys)}
        self.px = np.array([xpos[(k.kind[0], k.i)] for k in self.indices])
        self.qy = np.array([ypos[(k.kind[1], k.j)] for k in self.indices])

    def _table(self, keys):
        r = self.restriction
        rows = []
        for kind_char, freq in keys:
            u = _factor(kind_char, freq, r.nodes, r.d)
            rows.append(u / np.sqrt(r.weights @ (u * u)))
        return np.array(rows)

    def __len__(self):
        return len(self.indices)

    def position(self, idx: WaveletIndex) -> int:
        return self.indices.index(WaveletIndex(*idx))

    def element(self, idx) -> np.ndarray:
        r = self.position(idx) if not isinstance(idx, (int, np.integer)) else int(idx)
        return np.outer(self.xf[self.px[r]], self.yf[self.qy[r]])

    def coefficient_matrix(self, coeffs) -> np.ndarray:
        """Scatter coefficient vector(s) ``(..., len(basis))`` into ``(..., n_x, n_y)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        out = np.zeros(coeffs.shape[:-1] + (len(self.xkeys), len(self.ykeys)))
        out[..., self.px, self.qy] = coeffs
        return out

    def synthesize(self, coeffs) -> np.ndarray:
        """Grid samples of ``sum_r c_r h_r``."""
        return self.xf.T @ self.coefficient_matrix(coeffs) @ self.yf

    def gram_factors(self):
        w = self.restriction.weights
        return (self.xf * w) @ self.xf.T, (self.yf * w) @ self.yf.T

    def norms(self, coeffs) -> np.ndarray:
        """Exact discrete L2 norms of ``sum_r c_r h_r`` for a batch of coefficient vectors."""
        gx, gy = self.gram_factors()
        C = self.coefficient_matrix(coeffs)
        sq = np.sum((gx @ C @ gy) * C, axis=(-2, -1))
        return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class ObservableSpec:
    kind: str = "gaussian"
    mu: float = 0.0
    sigma: float = 0.1
    table_y: tuple = ()
    table_values: tuple = ()

    def sample(self, y) -> np.ndarray:
        if self.kind == "gaussian":
            out = gaussian_pdf(y, self.mu, self.sigma)
        elif self.kind == "tabulated":
            out = np.interp(np.asarray(y, dtype=float), self.table_y, self.table_values)
        else:
            raise ConfigurationError(f"unknown observable {self.kind!r}", field="observable")
        if not np.all(np.isfinite(out)):
            raise ConfigurationError("observable has non-finite samples", field="observable")
        return out

    def sup_norm(self, y) -> float:
        return float(np.max(np.abs(self.sample(y))))


@dataclass
class CoefficientTable:
    indices: list
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "kind", "G_r"])
            for idx, g in zip(self.indices, self.values):
                w.writerow([idx.i, idx.j, idx.kind, repr(float(g))])
        return path

    @classmethod
    def from_csv(cls, path) -> "CoefficientTable":
        idx, vals = [], []
        with Path(path).open() as fh:
            for row in csv.DictReader(fh):
                idx.append(WaveletIndex(int(row["i"]), int(row["j"]), row["kind"]))
                vals.append(float(row["G_r"]))
        return cls(idx, np.array(vals))


def _phi_domain(phi, restriction):
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] == restriction.parent.size:
        phi = restriction.restrict(phi)
    if phi.shape != (restriction.n1 + 1,):
        raise ValueError("observable must be sampled on the grid or the D-grid")
    return phi


def objective_value(kdot: PerturbationKernel, phi, resolvent: Resolvent) -> float:
    """``<phi, R(kdot)>`` over D; the quantity being maximized."""
    phi = _phi_domain(phi, kdot.restriction)
    R = response(kdot, resolvent=resolvent)
    return float(kdot.restriction.weights @ (phi * R.on_domain))


def coefficient(idx: WaveletIndex, phi, resolvent: Resolvent, basis: WaveletBasis | None = None) -> float:
    """``G_r`` for one element, through the generic grid-perturbation path."""
    r = resolvent.restriction
    if basis is None:
        X, Y = np.meshgrid(r.nodes, r.nodes, indexing="ij")
        h = eval_wavelet(WaveletIndex(*idx), X, Y, r)
        axis = "zero_mean_in_x" if idx[0] >= 1 else "zero_mean_in_y"
    else:
        h = basis.element(idx)
        axis = basis.axis
    return objective_value(PerturbationKernel(h, r, axis), phi, resolvent)


def coefficient_table(basis: WaveletBasis, phi, resolvent: Resolvent) -> CoefficientTable:
    """All ``G_r`` at once.

    For ``h = u (x) v`` the source is ``Ldot_h f0 = <u, f0>_D v``, so only one
    resolvent solve per distinct y-factor is needed.
    """
    r = basis.restriction
    phi = _phi_domain(phi, r)
    f0d = r.restrict(resolvent.f0)
    alpha = basis.xf @ (r.weights * f0d)  # per x-factor
    S = resolvent.solve(basis.yf.T)  # (N, n_y)
    beta = (r.weights * phi) @ r.restrict(S)  # per y-factor
    G = alpha[basis.px] * beta[basis.qy]
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite response coefficient")
    return CoefficientTable(list(basis.indices), G)


def assemble_optimal(table: CoefficientTable, basis: WaveletBasis) -> PerturbationKernel:
    """Unit-norm maximizer ``sum_r G_r h_r / ||G||``."""
    norm = table.norm
    if not norm > 0:
        raise NumericError(
            "objective vanishes on the whole basis: every feasible perturbation is optimal",
            {"norm_G": norm},
        )
    if list(table.indices) != list(basis.indices):
        raise ValueError("coefficient table does not match the basis")
    g = basis.synthesize(table.values / norm)
    return PerturbationKernel(g, basis.restriction, basis.axis)


def sample_objectives(basis: WaveletBasis, phi, resolvent: Resolvent, n: int, seed: int,
                      coeffs=None):
    """Objective values of ``n`` random unit-norm elements of the span.

    Directions are uniform on the coefficient sphere (seeded).  Each sample is
    rescaled by its exact discrete norm and pushed through the resolvent; the
    coefficient table is not used.  Returns ``(values, coefficient_vectors)``.
    """
    r = basis.restriction
    phi = _phi_domain(phi, r)
    if coeffs is None:
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal((n, len(basis)))
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    coeffs = coeffs / basis.norms(coeffs)[:, None]
    f0d = r.restrict(resolvent.f0)
    ax = basis.xf @ (r.weights * f0d)
    C = basis.coefficient_matrix(coeffs)  # (n, n_x, n_y)
    sources = ((ax @ C) @ basis.yf).T  # (n1+1, n)
    R = r.restrict(resolvent.solve(sources))
    vals = (r.weights * phi) @ R
    return vals, coeffs


def export_optimal(path_csv, path_json, g: PerturbationKernel, table: CoefficientTable, basis: WaveletBasis,
                   seed=None, extra=None):
    from .transfer import write_kernel_csv

    nodes = g.restriction.nodes
    write_kernel_csv(path_csv, g.values, nodes, nodes, label="g")
    meta = {"I": basis.I, "J": basis.J, "d": g.restriction.d, "norm_G": table.norm, "seed": seed,
            "constraint_axis": basis.axis, "n_basis": len(basis)}
    meta.update(extra or {})
    Path(path_json).write_text(json.dumps(meta, indent=2, sort_keys=True))
