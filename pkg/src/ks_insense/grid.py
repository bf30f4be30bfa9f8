"""Uniform grids, banded matrices and finite-difference operators on (0, 1).

Unknowns live on interior nodes only: x_j = j*h for j = 1..N-1, h = 1/N.
All boundary data are homogeneous, so boundary values are eliminated.
Fourth-order (KS-type) states are clamped (q = q_x = 0), second-order
(heat-type) states are Dirichlet (q = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg.lapack import dgbtrf, dgbtrs

from .errors import BadInterval, ConfigError, SingularMatrix

PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of [0, 1] with ``N`` cells; stores N and derives h."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N - 1 < 8:
            raise ConfigError(f"grid needs n_interior = N-1 >= 8, got N={self.N}")

    @property
    def n_interior(self) -> int:
        return self.N - 1

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def x(self) -> np.ndarray:
        """Interior node coordinates."""
        return np.arange(1, self.N) / self.N

    @property
    def x_full(self) -> np.ndarray:
        return np.arange(0, self.N + 1) / self.N


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"time horizon must satisfy T > 0, got T={self.T}")
        if int(self.M) != self.M or self.M < 4:
            raise ConfigError(f"time grid needs M >= 4 steps, got M={self.M}")

    @property
    def n_steps(self) -> int:
        return self.M

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def t(self) -> np.ndarray:
        """Time levels t_n = n*dt, n = 0..M."""
        return np.arange(self.M + 1) * self.dt

    @property
    def t_mid(self) -> np.ndarray:
        """Cell midpoints t_{n+1/2}, n = 0..M-1."""
        return (np.arange(self.M) + 0.5) * self.dt


class BandedMatrix:
    """Square banded matrix in LAPACK band layout.

    ``bands[upper_bw + i - j, j] == A[i, j]``. The LU factorization (partial
    pivoting, ``lower_bw`` extra fill rows) is computed on first solve and
    reused afterwards; instances are otherwise treated as immutable.
    """

    def __init__(self, bands: np.ndarray, lower_bw: int, upper_bw: int):
        bands = np.asarray(bands, dtype=float)
        if bands.shape[0] != lower_bw + upper_bw + 1:
            raise ValueError("band array height must be lower_bw + upper_bw + 1")
        self.bands = bands
        self.bands.setflags(write=False)
        self.lower_bw = int(lower_bw)
        self.upper_bw = int(upper_bw)
        self._lu = None

    @property
    def dim(self) -> int:
        return self.bands.shape[1]

    @classmethod
    def from_diagonals(cls, dim: int, diagonals: dict[int, np.ndarray]) -> "BandedMatrix":
        """Build from ``{offset: values}`` with offset = j - i."""
        kl = max([-d for d in diagonals] + [0])
        ku = max([d for d in diagonals] + [0])
        bands = np.zeros((kl + ku + 1, dim))
        for d, vals in diagonals.items():
            vals = np.broadcast_to(np.asarray(vals, dtype=float), (dim - abs(d),))
            if d >= 0:
                bands[ku - d, d:] += vals
            else:
                bands[ku - d, : dim + d] += vals
        return cls(bands, kl, ku)

    @classmethod
    def from_dense(cls, a: np.ndarray, lower_bw: int, upper_bw: int) -> "BandedMatrix":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        diags = {d: np.diagonal(a, d).copy() for d in range(-lower_bw, upper_bw + 1) if abs(d) < n}
        out = cls.from_diagonals(n, diags)
        # keep the requested bandwidths even when outer diagonals are zero
        if out.lower_bw != lower_bw or out.upper_bw != upper_bw:
            bands = np.zeros((lower_bw + upper_bw + 1, n))
            bands[upper_bw - out.upper_bw: upper_bw - out.upper_bw + out.bands.shape[0]] = out.bands
            out = cls(bands, lower_bw, upper_bw)
        return out

    def diagonal(self, d: int) -> np.ndarray:
        n, ku = self.dim, self.upper_bw
        if d > ku or -d > self.lower_bw or abs(d) >= n:
            return np.zeros(max(n - abs(d), 0))
        if d >= 0:
            return self.bands[ku - d, d:].copy()
        return self.bands[ku - d, : n + d].copy()

    def get(self, i: int, j: int) -> float:
        d = j - i
        if d > self.upper_bw or -d > self.lower_bw:
            return 0.0
        return float(self.bands[self.upper_bw + i - j, j])

    def to_dense(self) -> np.ndarray:
        n = self.dim
        a = np.zeros((n, n))
        for d in range(-self.lower_bw, self.upper_bw + 1):
            if abs(d) < n:
                a += np.diag(self.diagonal(d), d)
        return a

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        y = np.zeros_like(x)
        for d in range(-self.lower_bw, self.upper_bw + 1):
            if abs(d) >= n:
                continue
            v = self.diagonal(d)
            if x.ndim > 1:
                v = v[:, None]
            if d >= 0:
                y[: n - d] += v * x[d:]
            else:
                y[-d:] += v * x[: n + d]
        return y

    __matmul__ = matvec

    @property
    def T(self) -> "BandedMatrix":
        kl, ku, n = self.lower_bw, self.upper_bw, self.dim
        bands = np.zeros((kl + ku + 1, n))
        for d in range(-kl, ku + 1):
            if abs(d) >= n:
                continue
            # entry (i, i+d) of A is entry (i+d, i) of A^T, diagonal -d
            v = self.diagonal(d)
            if d >= 0:
                bands[kl + d, : n - d] = v
            else:
                bands[kl + d, -d:] = v
        return BandedMatrix(bands, ku, kl)

    def norm_inf(self) -> float:
        n = self.dim
        rows = np.zeros(n)
        for d in range(-self.lower_bw, self.upper_bw + 1):
            if abs(d) >= n:
                continue
            v = np.abs(self.diagonal(d))
            if d >= 0:
                rows[: n - d] += v
            else:
                rows[-d:] += v
        return float(rows.max())

    def _factor(self):
        if self._lu is None:
            kl, ku = self.lower_bw, self.upper_bw
            ab = np.zeros((2 * kl + ku + 1, self.dim))
            ab[kl:] = self.bands
            lu, ipiv, info = dgbtrf(ab, kl, ku)
            if info < 0:
                raise ValueError(f"dgbtrf: illegal argument {-info}")
            pivots = np.abs(lu[kl + ku])
            scale = self.norm_inf()
            if info > 0 or pivots.min() < PIVOT_RTOL * scale:
                raise SingularMatrix(
                    f"pivot {pivots.min():.3e} below {PIVOT_RTOL:g} * ||A||_inf = {PIVOT_RTOL * scale:.3e}"
                )
            self._lu = (lu, ipiv)
        return self._lu

    def factorize(self) -> "BandedMatrix":
        self._factor()
        return self

    def solve(self, b: np.ndarray, trans: bool = False) -> np.ndarray:
        """Solve ``A x = b`` (or ``A^T x = b`` with ``trans=True``)."""
        lu, ipiv = self._factor()
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        x, info = dgbtrs(lu, self.lower_bw, self.upper_bw, b[:, None] if vec else b, ipiv,
                         trans=1 if trans else 0)
        if info != 0:
            raise ValueError(f"dgbtrs: illegal argument {-info}")
        return x[:, 0] if vec else x

    def __repr__(self):
        return f"BandedMatrix(dim={self.dim}, lower_bw={self.lower_bw}, upper_bw={self.upper_bw})"


def banded_lu_solve(a: BandedMatrix, b: np.ndarray) -> np.ndarray:
    return a.solve(b)


BC = Literal["clamped", "dirichlet"]


def assemble_d1(grid: Grid, bc: BC = "dirichlet") -> BandedMatrix:
    """Central first derivative. Boundary values are zero for both bcs."""
    if bc not in ("clamped", "dirichlet"):
        raise ConfigError(f"unknown boundary condition {bc!r}")
    n, h = grid.n_interior, grid.h
    return BandedMatrix.from_diagonals(n, {-1: -0.5 / h, 1: 0.5 / h})


def assemble_d2(grid: Grid) -> BandedMatrix:
    n, h = grid.n_interior, grid.h
    return BandedMatrix.from_diagonals(n, {-1: 1 / h**2, 0: -2 / h**2, 1: 1 / h**2})


def assemble_d3(grid: Grid) -> BandedMatrix:
    """Third derivative for clamped fields, ghost values q_{-1} = q_1."""
    n, h = grid.n_interior, grid.h
    c = 0.5 / h**3
    diags = {-2: -c, -1: 2 * c, 1: -2 * c, 2: c}
    a = BandedMatrix.from_diagonals(n, diags).to_dense()
    a[0, 0] += -c  # ghost at x_{-1} reflects onto x_1
    a[-1, -1] += c
    return BandedMatrix.from_dense(a, 2, 2)


def assemble_d4(grid: Grid) -> BandedMatrix:
    """Fourth derivative with clamped ends via ghost reflection."""
    n, h = grid.n_interior, grid.h
    c = 1 / h**4
    main = np.full(n, 6 * c)
    main[0] = main[-1] = 7 * c
    return BandedMatrix.from_diagonals(n, {-2: c, -1: -4 * c, 0: main, 1: -4 * c, 2: c})


@dataclass(frozen=True)
class IndicatorMask:
    """Node weights in [0, 1] approximating the indicator of (a, b)."""

    weights: np.ndarray = field(repr=False)
    a: float
    b: float
    smoothing: str = "sharp"

    def __post_init__(self):
        self.weights.setflags(write=False)

    def intersect(self, other: "IndicatorMask") -> "IndicatorMask":
        return IndicatorMask(np.minimum(self.weights, other.weights), max(self.a, other.a),
                             min(self.b, other.b), self.smoothing)

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0


def _check_interval(a: float, b: float):
    if not (0.0 <= a < b <= 1.0):
        raise BadInterval(f"interval ({a}, {b}) must satisfy 0 <= a < b <= 1")


def build_mask(grid: Grid, a: float, b: float, smoothing: str = "sharp") -> IndicatorMask:
    """Indicator weights for (a, b) on the interior nodes.

    Sharp masks give 1 strictly inside, 0 strictly outside and 1/2 on a node
    that coincides with an endpoint, so that h * sum(weights) == b - a when
    both endpoints are nodes. ``linear-ramp`` spreads the jump over one cell.
    """
    _check_interval(a, b)
    x, h = grid.x, grid.h
    dist = np.minimum(x - a, b - x)  # signed distance, positive inside
    if smoothing == "sharp":
        tol = 1e-12
        w = np.where(dist > tol, 1.0, np.where(dist < -tol, 0.0, 0.5))
    elif smoothing == "linear-ramp":
        w = np.clip(dist / h + 0.5, 0.0, 1.0)
    else:
        raise ConfigError(f"unknown mask smoothing {smoothing!r}")
    # (0, 1) itself is the full-observation case: every interior node counts
    return IndicatorMask(np.asarray(w, dtype=float), float(a), float(b), smoothing)
