"""Uniform grids, composite Simpson weights and sub-domain restriction."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "UniformGrid1D",
    "TimeGrid",
    "SubgridRestriction",
    "build_grid",
    "build_time_grid",
    "simpson_weights",
    "integrate",
    "restrict_to_domain",
]


@dataclass(frozen=True)
class UniformGrid1D:
    """Uniform mesh of ``[-a, a]`` with ``n`` intervals (``n + 1`` nodes)."""

    a: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a <= 0:
            raise ConfigurationError(f"a must be positive, got {self.a!r}", field="a")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"n must be an integer >= 2, got {self.n!r}", field="n")
        if self.n % 2:
            raise ConfigurationError(f"n must be even, got {self.n}", field="n")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dx(self) -> float:
        return 2.0 * self.a / self.n

    @property
    def size(self) -> int:
        return self.n + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        y = -self.a + self.dx * np.arange(self.n + 1)
        y[0], y[-1] = -self.a, self.a
        # keep the node set exactly symmetric about 0
        half = self.n // 2
        y[half] = 0.0
        y[half + 1 :] = -y[half - 1 :: -1]
        y.flags.writeable = False
        return y

    @cached_property
    def weights(self) -> np.ndarray:
        w = simpson_weights(self)
        w.flags.writeable = False
        return w

    def node_index(self, x: float, atol: float | None = None) -> int:
        """Index of the node equal to ``x`` (within ``atol``, default ``1e-9 * dx``)."""
        atol = 1e-9 * self.dx if atol is None else atol
        i = int(round((x + self.a) / self.dx))
        if i < 0 or i > self.n or abs(self.nodes[i] - x) > atol:
            raise ConfigurationError(f"{x!r} is not a node of the grid (dx={self.dx})", field="x0")
        return i


@dataclass(frozen=True)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ConfigurationError(f"T must be positive, got {self.T!r}", field="T")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError(f"m must be an integer >= 1, got {self.m!r}", field="m")
        object.__setattr__(self, "m", int(self.m))

    @property
    def dt(self) -> float:
        return self.T / self.m

    @property
    def nodes(self) -> np.ndarray:
        t = self.dt * np.arange(self.m + 1)
        t[-1] = self.T
        return t


def build_grid(a: float, n: int) -> UniformGrid1D:
    return UniformGrid1D(float(a), n)


def build_time_grid(T: float, m: int) -> TimeGrid:
    return TimeGrid(float(T), m)


def _simpson_pattern(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def simpson_weights(grid: UniformGrid1D) -> np.ndarray:
    """Composite Simpson 1/3 weights ``(1, 4, 2, ..., 2, 4, 1) * dx / 3``."""
    return _simpson_pattern(grid.n, grid.dx)


def integrate(samples, weights) -> float:
    """Quadrature sum ``sum_i w_i f_i``.

    ``samples`` may carry extra trailing axes; the quadrature runs over axis 0.
    """
    f = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    if f.shape[:1] != w.shape:
        raise ValueError(f"shape mismatch: samples {f.shape} vs weights {w.shape}")
    return np.tensordot(w, f, axes=(0, 0))


@dataclass(frozen=True)
class SubgridRestriction:
    """Nodes of ``D = [-d, d]`` as a contiguous slice of a parent grid.

    ``d`` is the snapped half-width; ``d_requested`` keeps what was asked for.
    """

    parent: UniformGrid1D
    start: int
    stop: int  # exclusive
    d_requested: float = field(default=float("nan"), compare=False)

    @property
    def n1(self) -> int:
        return self.stop - self.start - 1

    @property
    def d(self) -> float:
        return float(self.parent.nodes[self.stop - 1])

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def nodes(self) -> np.ndarray:
        return self.parent.nodes[self.start : self.stop]

    @cached_property
    def weights(self) -> np.ndarray:
        w = _simpson_pattern(self.n1, self.parent.dx)
        w.flags.writeable = False
        return w

    @cached_property
    def weights2d(self) -> np.ndarray:
        w = np.outer(self.weights, self.weights)
        w.flags.writeable = False
        return w

    @cached_property
    def transfer_factors(self) -> np.ndarray:
        """``c = w' / w_parent`` on the D-nodes.

        A function supported on D and sampled as ``c * g`` on the parent grid
        has the same parent-Simpson integral as ``g`` has under the D rule.
        With an even start index ``c`` is 1 except 1/2 at the two endpoints,
        the midpoint of the jump to zero outside D.
        """
        c = self.weights / self.parent.weights[self.start : self.stop]
        c.flags.writeable = False
        return c

    def restrict(self, f) -> np.ndarray:
        return np.asarray(f)[self.start : self.stop]

    def embed(self, f_d) -> np.ndarray:
        f_d = np.asarray(f_d, dtype=float)
        if f_d.shape[:1] != (self.n1 + 1,):
            raise ValueError(f"expected {self.n1 + 1} D-node values, got shape {f_d.shape}")
        out = np.zeros((self.parent.size,) + f_d.shape[1:])
        out[self.start : self.stop] = f_d
        return out


def restrict_to_domain(grid: UniformGrid1D, d: float) -> SubgridRestriction:
    """Snap ``D = [-d, d]`` to the grid.

    The half-width is rounded to the nearest multiple of ``dx``; since the grid
    is symmetric and ``n`` even, the resulting ``n1 = 2k`` is always even.
    """
    if not np.isfinite(d) or d <= 0:
        raise ConfigurationError(f"d must be positive, got {d!r}", field="d")
    if d >= grid.a:
        raise ConfigurationError(f"d={d} must be smaller than a={grid.a}", field="d")
    k = int(round(d / grid.dx))
    half = grid.n // 2
    if k < 1 or k >= half:
        raise ConfigurationError(
            f"d={d} snaps to {k} intervals; need 1 <= k < {half}", field="d"
        )
    return SubgridRestriction(grid, half - k, half + k + 1, d_requested=float(d))
