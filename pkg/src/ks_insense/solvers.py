"""Implicit time stepping for the coupled KS/heat system and its adjoints.

State vectors interleave the two components node by node,
``(y_1, z_1, y_2, z_2, ...)``, so the one-step matrix I + dt*L is banded
with four diagonals on each side. For the forward pair

    L(y, z) = (y_xxxx + gamma*y_xx - z_x,  -z_xx + beta*z_x - y_x).

Backward problems (p, q) and (u, w) step with the transpose of the forward
matrix, which is exactly the discretisation of

    -p_t + p_xxxx + gamma*p_xx + q_x,  -q_t - q_xx - beta*q_x + p_x

because the central d1 is antisymmetric and d2, d4 are symmetric.

Time-level convention (all fields have shape ``(M+1, N-1)``):

* forward: ``A Y[n+1] = Y[n] + dt*G[n]``, forcing at the old level;
* backward: ``A^T P[n] = P[n+1] + dt*S[n+1]``, with ``P[M] = 0``.

With this pairing the discrete duality identity is exact with the
rectangle rules :func:`pair_lower` (levels 0..M-1, forcing against adjoint)
and :func:`pair_upper` (levels 1..M, state against state).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Optional

import numpy as np

from .errors import ConfigError
from .grid import (BandedMatrix, Grid, IndicatorMask, TimeGrid, assemble_d1, assemble_d2,
                   assemble_d4)

Direction = Literal["forward", "backward-y-z", "forward-zeta-theta", "backward-u-w"]


@dataclass(frozen=True)
class PhysicsParams:
    gamma: float = 1.0
    beta: float = 0.5
    alpha: float = 0.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"physics.gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"physics.alpha must lie in [0, 1], got {self.alpha}")
        if not np.isfinite(self.beta):
            raise ConfigError("physics.beta must be finite")

    def with_alpha(self, alpha: float) -> "PhysicsParams":
        return PhysicsParams(self.gamma, self.beta, alpha)


def spatial_operator(grid: Grid, params: PhysicsParams) -> np.ndarray:
    """Dense interleaved L for the forward (y, z) pair."""
    n = grid.n_interior
    d1 = assemble_d1(grid).to_dense()
    d2 = assemble_d2(grid).to_dense()
    d4 = assemble_d4(grid).to_dense()
    L = np.zeros((2 * n, 2 * n))
    L[0::2, 0::2] = d4 + params.gamma * d2
    L[0::2, 1::2] = -d1
    L[1::2, 0::2] = -d1
    L[1::2, 1::2] = -d2 + params.beta * d1
    return L


def step_operator(grid: Grid, time_grid: TimeGrid, params: PhysicsParams,
                  direction: Direction = "forward", dt_scale: float = 1.0) -> BandedMatrix:
    """One-step implicit Euler matrix ``I + dt*L`` (or its transpose).

    ``forward`` and ``forward-zeta-theta`` share the same matrix; the two
    backward directions (the (p, q) pair of the cascade and the (u, w) pair of
    the adjoint) use its transpose.
    """
    L = spatial_operator(grid, params)
    A = np.eye(L.shape[0]) + dt_scale * time_grid.dt * L
    if direction in ("forward", "forward-zeta-theta"):
        return BandedMatrix.from_dense(A, 4, 4)
    if direction in ("backward-y-z", "backward-u-w"):
        return BandedMatrix.from_dense(A, 4, 4).T
    raise ConfigError(f"unknown step direction {direction!r}")


def pack(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
    out[..., 0::2] = a
    out[..., 1::2] = b
    return out


def unpack(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return v[..., 0::2], v[..., 1::2]


@dataclass(frozen=True)
class KSHeatSystem:
    """Everything a solve needs: meshes, coefficients and the sets omega, O."""

    grid: Grid
    time: TimeGrid
    params: PhysicsParams
    omega: IndicatorMask
    obs: IndicatorMask

    def __post_init__(self):
        n = self.grid.n_interior
        if self.omega.weights.shape != (n,) or self.obs.weights.shape != (n,):
            raise ConfigError("masks do not match the spatial grid")

    @cached_property
    def step(self) -> BandedMatrix:
        return step_operator(self.grid, self.time, self.params, "forward").factorize()

    def with_alpha(self, alpha: float) -> "KSHeatSystem":
        return KSHeatSystem(self.grid, self.time, self.params.with_alpha(alpha), self.omega, self.obs)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.time.M + 1, self.grid.n_interior)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


@dataclass(frozen=True)
class CascadeSolution:
    y: np.ndarray
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def p0(self) -> np.ndarray:
        return self.p[0]

    @property
    def q0(self) -> np.ndarray:
        return self.q[0]


@dataclass(frozen=True)
class AdjointSolution:
    u: np.ndarray
    w: np.ndarray
    zeta: np.ndarray
    theta: np.ndarray


def _field(sys: KSHeatSystem, f) -> np.ndarray:
    if f is None:
        return sys.zeros()
    f = np.asarray(f, dtype=float)
    if f.shape != sys.shape:
        raise ConfigError(f"space-time field has shape {f.shape}, expected {sys.shape}")
    return f


def _initial(sys: KSHeatSystem, v) -> np.ndarray:
    n = sys.grid.n_interior
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ConfigError(f"initial datum has shape {v.shape}, expected {(n,)}")
    return v


def _march_forward(sys: KSHeatSystem, y0, z0, g1, g2) -> tuple[np.ndarray, np.ndarray]:
    M, dt = sys.time.M, sys.time.dt
    Y = np.empty((M + 1, 2 * sys.grid.n_interior))
    Y[0] = pack(y0, z0)
    G = pack(g1, g2)
    A = sys.step
    for n in range(M):
        Y[n + 1] = A.solve(Y[n] + dt * G[n])
    return unpack(Y)


def _march_backward(sys: KSHeatSystem, s1, s2) -> tuple[np.ndarray, np.ndarray]:
    M, dt = sys.time.M, sys.time.dt
    P = np.zeros((M + 1, 2 * sys.grid.n_interior))
    S = pack(s1, s2)
    A = sys.step
    for n in range(M - 1, -1, -1):
        P[n] = A.solve(P[n + 1] + dt * S[n + 1], trans=True)
    return unpack(P)


def _march_forward_cn(sys: KSHeatSystem, y0, z0, g1, g2):
    M, dt = sys.time.M, sys.time.dt
    L = spatial_operator(sys.grid, sys.params)
    eye = np.eye(L.shape[0])
    B = BandedMatrix.from_dense(eye + 0.5 * dt * L, 4, 4)
    C = BandedMatrix.from_dense(eye - 0.5 * dt * L, 4, 4)
    Y = np.empty((M + 1, L.shape[0]))
    Y[0] = pack(y0, z0)
    G = pack(g1, g2)
    for n in range(M):
        Y[n + 1] = B.solve(C.matvec(Y[n]) + 0.5 * dt * (G[n] + G[n + 1]))
    return unpack(Y)


def solve_forward(sys: KSHeatSystem, y0=None, z0=None, f1=None, f2=None, h1=None, h2=None,
                  scheme: str = "euler") -> tuple[np.ndarray, np.ndarray]:
    """Controlled forward system; controls act through the omega mask.

    ``scheme="cn"`` selects Crank-Nicolson with averaged forcing. It is only
    offered here: the cascade, adjoint and HUM pipelines rely on the implicit
    Euler transpose structure.
    """
    y0, z0 = _initial(sys, y0), _initial(sys, z0)
    m = sys.omega.weights
    g1 = _field(sys, f1) + m * _field(sys, h1)
    g2 = _field(sys, f2) + m * _field(sys, h2)
    if scheme == "euler":
        return _march_forward(sys, y0, z0, g1, g2)
    if scheme == "cn":
        return _march_forward_cn(sys, y0, z0, g1, g2)
    raise ConfigError(f"unknown time scheme {scheme!r}")


def solve_cascade(sys: KSHeatSystem, y0=None, z0=None, h1=None, h2=None, xi1=None,
                  xi2=None) -> CascadeSolution:
    """Forward (y, z) with controls and sources, then backward (p, q) from zero."""
    y, z = solve_forward(sys, y0, z0, xi1, xi2, h1, h2)
    a, mo = sys.params.alpha, sys.obs.weights
    p, q = _march_backward(sys, a * mo * y, (1 - a) * mo * z)
    return CascadeSolution(y, z, p, q)


def solve_adjoint(sys: KSHeatSystem, zeta0=None, theta0=None) -> AdjointSolution:
    """Forward (zeta, theta) from the data, then backward (u, w) from zero."""
    zeta0, theta0 = _initial(sys, zeta0), _initial(sys, theta0)
    zero = sys.zeros()
    zeta, theta = _march_forward(sys, zeta0, theta0, zero, zero)
    a, mo = sys.params.alpha, sys.obs.weights
    u, w = _march_backward(sys, a * mo * zeta, (1 - a) * mo * theta)
    return AdjointSolution(u, w, zeta, theta)


def inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    """Mass-weighted discrete L2 product on the interior nodes."""
    return float(grid.h * np.sum(a * b))


def norm(a: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(inner(a, a, grid)))


def pair_lower(f: np.ndarray, g: np.ndarray, grid: Grid, tgrid: TimeGrid,
               weight: Optional[np.ndarray] = None) -> float:
    """dt*h*sum over levels 0..M-1; pairs forcing fields with adjoint fields."""
    prod = f[:-1] * g[:-1]
    if weight is not None:
        prod = prod * weight
    return float(tgrid.dt * grid.h * prod.sum())


def pair_upper(f: np.ndarray, g: np.ndarray, grid: Grid, tgrid: TimeGrid,
               weight: Optional[np.ndarray] = None) -> float:
    """dt*h*sum over levels 1..M; pairs two forward states."""
    prod = f[1:] * g[1:]
    if weight is not None:
        prod = prod * weight
    return float(tgrid.dt * grid.h * prod.sum())


def c0_l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(grid.h * (f**2).sum(axis=1).max()))
