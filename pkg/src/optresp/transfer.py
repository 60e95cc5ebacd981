"""Discrete transfer operator built from Fokker-Planck solves.

Row ``i`` of a :class:`KernelMatrix` is the density at time ``T`` of the
process started at node ``x_i``; column ``j`` indexes the terminal point
``y_j``.  The operator acts on a grid function ``f`` by Simpson quadrature
in the initial variable::

    (L f)_j = sum_i w_i kappa_ij f_i
"""

from __future__ import annotations

import csv
import hashlib
import logging
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AuditFailure, NumericError
from .fpe import ImplicitStepper, drift_samples, solve_fpe_batch
from .mesh import SubgridRestriction, UniformGrid1D, integrate

__all__ = [
    "KernelMatrix",
    "Density",
    "NormReport",
    "build_kernel",
    "assemble_kernel",
    "apply",
    "invariant_density",
    "spectral_gap_estimate",
    "norms",
    "write_kernel_cache",
    "read_kernel_cache",
    "load_or_build_kernel",
    "write_kernel_csv",
    "CACHE_MAGIC",
    "CACHE_VERSION",
]

log = logging.getLogger(__name__)

CACHE_MAGIC = b"ORTK"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQQddd")


@dataclass
class KernelMatrix:
    values: np.ndarray
    grid: UniformGrid1D
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size, self.grid.size):
            raise ValueError(f"kernel shape {self.values.shape} does not match grid size {self.grid.size}")

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def row_masses(self) -> np.ndarray:
        return self.values @ self.weights

    def operator_matrix(self) -> np.ndarray:
        """Matrix ``M`` with ``L f = M @ f`` (quadrature folded in, transposed)."""
        return (self.weights[:, None] * self.values).T

    def audit(self, row_mass_tol=1e-2, positivity_tol=1e-8) -> list[dict]:
        dev = np.abs(self.row_masses - 1.0)
        worst = int(np.argmax(dev))
        lo = float(self.values.min())
        return [
            {
                "name": "kernel_row_mass",
                "status": "pass" if dev[worst] <= row_mass_tol else "fail",
                "value": float(dev[worst]),
                "threshold": row_mass_tol,
                "detail": f"worst row x={self.grid.nodes[worst]:.6g}",
            },
            {
                "name": "kernel_positivity",
                "status": "pass" if lo >= -positivity_tol else "fail",
                "value": lo,
                "threshold": -positivity_tol,
            },
        ]


@dataclass
class Density:
    values: np.ndarray
    grid: UniformGrid1D
    eigenvalue: float = 1.0
    residual: float = 0.0
    iterations: int = 0

    @property
    def mass(self) -> float:
        return float(integrate(self.values, self.grid.weights))


@dataclass(frozen=True)
class NormReport:
    l1: float
    l2: float
    linf: float
    l1_alpha: float
    alpha: float
    strong: float


# ----------------------------------------------------------------------------
# assembly


def assemble_kernel(potential, grid, timegrid, sigma=None, threads=1) -> KernelMatrix:
    """Solve one FPE per initial node; rows are independent and chunked over threads."""
    stepper = ImplicitStepper(grid, drift_samples(potential, grid), timegrid.dt, potential.eps)
    cols = np.arange(grid.size)
    chunks = [c for c in np.array_split(cols, max(1, int(threads))) if c.size]

    def work(c):
        return solve_fpe_batch(c, potential, grid, timegrid, sigma, stepper=stepper)

    if len(chunks) == 1:
        blocks = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            blocks = list(pool.map(work, chunks))
    P = np.concatenate(blocks, axis=1)
    meta = {
        "m": timegrid.m,
        "a": grid.a,
        "T": timegrid.T,
        "eps": potential.eps,
        "sigma": grid.dx * 100.0 if sigma is None else float(sigma),
        "min_pivot": stepper.factor.min_pivot,
    }
    return KernelMatrix(P.T, grid, meta)


def build_kernel(config, check=True) -> KernelMatrix:
    """Kernel for an :class:`~optresp.config.ExperimentConfig`.

    With ``check`` the positivity audit raises :class:`AuditFailure`; the
    row-mass audit is recorded in ``meta["audits"]``.
    """
    K = assemble_kernel(config.potential_spec, config.grid, config.timegrid, config.sigma, config.threads)
    audits = K.audit(config.row_mass_tol, config.positivity_tol)
    K.meta["audits"] = audits
    if check and audits[1]["status"] == "fail":
        raise AuditFailure(f"kernel has negative entries ({audits[1]['value']:.3e})", audits)
    return K


# ----------------------------------------------------------------------------
# operator action


def apply(K: KernelMatrix, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[0] != K.grid.size:
        raise ValueError(f"grid function has {f.shape[0]} values, kernel expects {K.grid.size}")
    return np.tensordot(K.weights[:, None] * K.values, f, axes=(0, 0)) if f.ndim > 1 else (K.weights * f) @ K.values


def _l1(f, w):
    return float(w @ np.abs(f))


def invariant_density(K: KernelMatrix, tol=1e-10, max_iter=200000, start=None) -> Density:
    """Leading eigenvector of the transfer operator, by power iteration.

    Each sweep applies ``L`` and rescales to unit Simpson mass.  Iteration stops
    when ``||L f - lam f||_1 <= tol`` with ``lam = mass(L f) / mass(f)``.
    """
    w = K.weights
    M = w[:, None] * K.values
    f = np.full(K.grid.size, 1.0 / (2 * K.grid.a)) if start is None else np.array(start, dtype=float)
    mass = w @ f
    if not np.isfinite(mass) or mass == 0:
        raise NumericError("start vector has zero mass")
    f = f / mass
    prev_res = np.inf
    ratio = np.nan
    for it in range(1, max_iter + 1):
        Lf = f @ M
        lam = w @ Lf
        res = _l1(Lf - lam * f, w)
        if res <= tol:
            return Density(f, K.grid, float(lam), res, it - 1)
        if np.isfinite(prev_res) and prev_res > 0:
            ratio = res / prev_res
        prev_res = res
        if not np.isfinite(lam) or lam == 0:
            raise NumericError("power iteration collapsed", {"iteration": it, "eigenvalue": float(lam)})
        f = Lf / lam
    raise NumericError(
        f"power iteration did not reach residual {tol:g} in {max_iter} sweeps (residual {prev_res:.3e})",
        {"residual": prev_res, "lambda2_estimate": ratio},
    )


def spectral_gap_estimate(K: KernelMatrix, f0=None, max_iter=2000, tol=1e-8, seed=0) -> float:
    """Modulus of the second eigenvalue, by orthogonal iteration on zero-mass functions.

    A block of two vectors is iterated and projected back onto the zero-mass
    subspace along ``f0``.  The Ritz values of the block give ``|lambda_2|``
    even when the subdominant eigenvalues are a complex pair.
    """
    w = K.weights
    if f0 is None:
        f0 = invariant_density(K).values
    f0 = np.asarray(getattr(f0, "values", f0), dtype=float)
    f0 = f0 / (w @ f0)
    M = w[:, None] * K.values
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((K.grid.size, 2))
    V -= np.outer(f0, w @ V)
    Q, _ = np.linalg.qr(V)
    est_prev = np.nan
    for it in range(max_iter):
        W = (Q.T @ M).T
        W -= np.outer(f0, w @ W)
        est = float(np.max(np.abs(np.linalg.eigvals(Q.T @ W))))
        Q, Rq = np.linalg.qr(W)
        if np.max(np.abs(np.diag(Rq))) <= 1e-300:
            return 0.0
        if abs(est - est_prev) <= tol * max(est, 1e-300) and it >= 5:
            return est
        est_prev = est
    warnings.warn(f"spectral gap estimate not converged after {max_iter} sweeps", RuntimeWarning)
    return float(est_prev)


def norms(f, grid: UniformGrid1D, alpha=2.0, restriction: SubgridRestriction | None = None) -> NormReport:
    """L1, L2, sup, weighted L1 and the strong norm ``||f||_{L1_2} + ||1_D f||_2``.

    Without ``restriction`` the L2 part of the strong norm runs over the whole grid.
    """
    f = np.asarray(f, dtype=float)
    w, y = grid.weights, grid.nodes
    af = np.abs(f)
    l1_2 = float(w @ ((1 + y**2) * af))
    if restriction is None:
        l2_d = float(np.sqrt(w @ (f * f)))
    else:
        fd = restriction.restrict(f)
        l2_d = float(np.sqrt(restriction.weights @ (fd * fd)))
    return NormReport(
        l1=float(w @ af),
        l2=float(np.sqrt(w @ (f * f))),
        linf=float(af.max()),
        l1_alpha=float(w @ ((1 + y**2) ** (alpha / 2) * af)),
        alpha=float(alpha),
        strong=l1_2 + l2_d,
    )


# ----------------------------------------------------------------------------
# persistence


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def write_kernel_cache(path, K: KernelMatrix) -> Path:
    """Binary cache: header, row-major little-endian float64 payload, 64-bit checksum."""
    path = Path(path)
    payload = np.ascontiguousarray(K.values, dtype="<f8").tobytes()
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, K.grid.size, int(K.meta["m"]),
                          float(K.grid.a), float(K.meta["T"]), float(K.meta["eps"]))
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(_checksum(payload))
    tmp.replace(path)
    return path


class CacheError(NumericError):
    pass


def read_kernel_cache(path) -> tuple[np.ndarray, dict]:
    """Return ``(values, header)``; raise :class:`CacheError` on any inconsistency."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise CacheError("cache file truncated")
    magic, version, size, m, a, T, eps = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise CacheError(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    end = _HEADER.size + size * size * 8
    if len(data) != end + 8:
        raise CacheError("cache payload size mismatch")
    payload = data[_HEADER.size : end]
    if _checksum(payload) != data[end:]:
        raise CacheError("checksum mismatch")
    values = np.frombuffer(payload, dtype="<f8").reshape(size, size).astype(float)
    return values, {"version": version, "size": size, "m": m, "a": a, "T": T, "eps": eps}


def load_or_build_kernel(config, cache_dir=None) -> tuple[KernelMatrix, str]:
    """Kernel from ``cache_dir`` when a valid cached copy exists, else build and store it.

    Returns ``(kernel, status)`` with status ``"hit"``, ``"miss"``, ``"rebuilt"``
    (corrupt cache replaced) or ``"disabled"``.
    """
    if cache_dir is None:
        return build_kernel(config), "disabled"
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"kernel_{config.kernel_key()}.ortk"
    status = "miss"
    if path.exists():
        try:
            values, hdr = read_kernel_cache(path)
            grid = config.grid
            if (hdr["size"], hdr["m"], hdr["a"], hdr["T"], hdr["eps"]) != (
                grid.size, config.m, grid.a, config.T, config.epsilon
            ):
                raise CacheError("cache header does not match the configuration")
        except CacheError as exc:
            log.warning("kernel cache %s unusable (%s); rebuilding", path, exc)
            status = "rebuilt"
        else:
            log.info("kernel cache hit: %s", path)
            K = KernelMatrix(values, grid, {"m": config.m, "a": grid.a, "T": config.T,
                                            "eps": config.epsilon, "sigma": config.sigma,
                                            "cache": str(path)})
            K.meta["audits"] = K.audit(config.row_mass_tol, config.positivity_tol)
            return K, "hit"
    K = build_kernel(config)
    write_kernel_cache(path, K)
    K.meta["cache"] = str(path)
    return K, status


def write_kernel_csv(path, values, x, y, label="kappa") -> Path:
    """Long-format dump ``x,y,<label>`` (row index = x)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", label])
        for i, xi in enumerate(x):
            sx = repr(float(xi))
            row = values[i]
            w.writerows([sx, repr(float(yj)), repr(float(v))] for yj, v in zip(y, row))
    return path
