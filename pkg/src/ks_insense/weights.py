"""Carleman weight functions, their audits and the time weight rho.

The auxiliary profile nu is a warped parabola,

    m(x) = x / (x + c (1 - x)),  c = x0 / (1 - x0),  nu(x) = 4 m(x) (1 - m(x)),

with a single interior critical point x0 = (a + b)/2 in omega_0 and
max nu = nu(x0) = 1. Time samples are cell midpoints t_{n+1/2}, where the
vanishing factor t(T - t) is never zero. Everything that can overflow
(exp(-2 s phi), rho) is also kept as a logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadInterval, DegenerateParams, SearchFailed
from .grid import Grid, IndicatorMask, TimeGrid

NU_SUP = 1.0


@dataclass(frozen=True)
class NuFunction:
    a: float
    b: float
    grid: Grid

    def __post_init__(self):
        if not 0.0 < self.a < self.b < 1.0:
            raise BadInterval(f"omega_0 = ({self.a}, {self.b}) must satisfy 0 < a < b < 1")

    @property
    def x0(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def c(self) -> float:
        return self.x0 / (1.0 - self.x0)

    def _m(self, x):
        return x / (x + self.c * (1.0 - x))

    def value(self, x) -> np.ndarray:
        m = self._m(np.asarray(x, dtype=float))
        return 4.0 * m * (1.0 - m)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self._m(x)
        dm = self.c / (x + self.c * (1.0 - x)) ** 2
        return 4.0 * dm * (1.0 - 2.0 * m)

    @property
    def nu(self) -> np.ndarray:
        """Samples on the full node set x_0..x_N."""
        return self.value(self.grid.x_full)

    @property
    def dnu(self) -> np.ndarray:
        return self.derivative(self.grid.x_full)

    @property
    def outside(self) -> np.ndarray:
        x = self.grid.x_full
        return (x <= self.a) | (x >= self.b)

    @property
    def c_lower(self) -> float:
        """Grid minimum of |nu'| on the closed complement of omega_0."""
        return float(np.abs(self.dnu[self.outside]).min())


def build_nu(omega0, grid: Optional[Grid] = None) -> NuFunction:
    """Accepts an :class:`IndicatorMask` or an ``(a, b)`` pair."""
    if isinstance(omega0, IndicatorMask):
        a, b = omega0.a, omega0.b
        grid = grid or Grid(len(omega0.weights) + 1)
    else:
        a, b = omega0
    if grid is None:
        raise ValueError("a grid is required when omega0 is given as an interval")
    return NuFunction(float(a), float(b), grid)


@dataclass(frozen=True)
class CarlemanParams:
    m: float = 2.0
    k: float = 3.0
    s: float = 1.0
    lam: float = 2.0
    T: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise DegenerateParams(f"carleman.m must be > 0, got {self.m}")
        if not self.k > self.m:
            raise DegenerateParams(f"carleman.k must exceed m (k={self.k}, m={self.m})")
        if not self.lam > 1:
            raise DegenerateParams(f"carleman.lambda must be > 1, got {self.lam}")
        if not self.s > 0:
            raise DegenerateParams(f"carleman.s must be > 0, got {self.s}")
        if not self.T > 0:
            raise DegenerateParams(f"carleman.T must be > 0, got {self.T}")


def ell(t: np.ndarray, T: float) -> np.ndarray:
    """t(T - t) up to T/2, frozen at T^2/4 afterwards."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0.5 * T, t * (T - t), 0.25 * T * T)


@dataclass(frozen=True)
class WeightSet:
    """Weight samples on (t_mid) x (x_0..x_N); arrays are shaped (M, N+1)."""

    nu: NuFunction
    params: CarlemanParams
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    ell: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)
    xi_star: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    S_hat: np.ndarray = field(repr=False)
    Z_star: np.ndarray = field(repr=False)
    log_rho: np.ndarray = field(repr=False)

    @property
    def rho(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_rho)

    @property
    def rho_inv2(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(-2.0 * self.log_rho)

    def interior(self, arr: np.ndarray) -> np.ndarray:
        return arr[:, 1:-1]


def build_weights(nu: NuFunction, params: CarlemanParams, time_grid: TimeGrid) -> WeightSet:
    m, k, lam, s, T = params.m, params.k, params.lam, params.s, params.T
    if not k > m:
        raise DegenerateParams(f"k={k} must exceed m={m}")
    t = time_grid.t_mid
    x = nu.grid.x_full
    nux = nu.nu
    num_top = math.exp(lam * (1.0 + 1.0 / m) * k * NU_SUP)
    e_nu = np.exp(lam * (k * NU_SUP + nux))
    e_bdry = math.exp(lam * k * NU_SUP)  # nu = 0 at x in {0, 1}

    vanish = (t * (T - t)) ** m
    frozen = ell(t, T) ** m
    phi = (num_top - e_nu)[None, :] / vanish[:, None]
    xi = e_nu[None, :] / vanish[:, None]
    S = (num_top - e_nu)[None, :] / frozen[:, None]
    Z = e_nu[None, :] / frozen[:, None]
    phi_hat = (num_top - e_bdry) / vanish
    xi_star = e_bdry / vanish
    S_hat = (num_top - e_bdry) / frozen
    Z_star = e_bdry / frozen
    return WeightSet(nu, params, t, x, ell(t, T), phi, xi, phi_hat, xi_star, S, Z, S_hat, Z_star,
                     s * S_hat)


def _central_diff(f: np.ndarray, step: float, axis: int) -> np.ndarray:
    return np.gradient(f, step, axis=axis, edge_order=1)


@dataclass
class WeightEstimateReport:
    b: float
    ratio_x: float
    ratio_t: float
    ratio_t_m: Optional[float]
    time_deri: Optional[float]


def audit_weight_estimates(ws: WeightSet, b: float, time_grid: TimeGrid) -> WeightEstimateReport:
    """Empirical constants in the derivative bounds for W = exp(-2 s phi) xi^b.

    Derivatives of W are taken as central differences of log W (one-sided at
    the ends), which is the same quantity as |W'| / W but does not underflow.
    """
    if not b > 0:
        raise ValueError("b must be > 0")
    p = ws.params
    s, lam, m, T = p.s, p.lam, p.m, p.T
    logW = -2.0 * s * ws.phi + b * np.log(ws.xi)
    h = ws.nu.grid.h
    dx = _central_diff(logW, h, axis=1)[:, 1:-1]
    dt = _central_diff(logW, time_grid.dt, axis=0)[:, 1:-1]
    xi = ws.interior(ws.xi)
    ratio_x = float(np.max(np.abs(dx) / (s * lam * xi)))
    ratio_t = float(np.max(np.abs(dt) / (s * xi ** (1.0 + 1.0 / m))))
    ratio_t_m = time_deri = None
    if m > 1:
        scale = T ** (2 * m - 2)
        ratio_t_m = float(np.max(np.abs(dt) / (scale * s * xi**2)))
        time_deri = float(np.max(xi ** (1.0 / m) / (scale * xi)))
    return WeightEstimateReport(b, ratio_x, ratio_t, ratio_t_m, time_deri)


def good_sign_bracket(nu: NuFunction, m: float, k: float, lam: float, p: int) -> np.ndarray:
    """2 e^{(lam/m) k |nu|} - p e^{lam nu(x)} + p - 2 on x_0..x_N and x0."""
    vals = np.append(nu.nu, nu.value(nu.x0))
    return 2.0 * math.exp(lam / m * k * NU_SUP) - p * np.exp(lam * vals) + p - 2.0


@dataclass
class GoodSignReport:
    p: int
    delta: float
    holds: bool
    identity_residual: float


def audit_good_sign(ws: WeightSet, p: int) -> GoodSignReport:
    """Sign of -p s phi + (p-2) s phi_hat, through its closed-form bracket.

    Also checks the factorisation
    ``-p phi + (p-2) phi_hat == -e^{lam k} * bracket / (t(T-t))^m`` on the mesh.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    prm = ws.params
    bracket = good_sign_bracket(ws.nu, prm.m, prm.k, prm.lam, p)
    delta = float(bracket.min())
    lhs = -p * ws.phi + (p - 2) * ws.phi_hat[:, None]
    vanish = (ws.t * (prm.T - ws.t)) ** prm.m
    rhs = -math.exp(prm.lam * prm.k * NU_SUP) * bracket[None, :-1] / vanish[:, None]
    resid = float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs)).max()))
    return GoodSignReport(p, delta, delta > 0, resid)


def search_k(nu: NuFunction, m: float, lam: float, p: int, margin: float = 0.1,
             growth: float = 1.1) -> float:
    """Smallest k = m * growth**j (j >= 1) whose bracket stays >= margin."""
    if p < 3:
        raise ValueError("search_k needs p >= 3")
    j = 1
    while True:
        k = m * growth**j
        if k > 100.0 * m:
            raise SearchFailed(f"no k <= 100*m gives bracket >= {margin} (m={m}, lambda={lam}, p={p})")
        if good_sign_bracket(nu, m, k, lam, p).min() >= margin:
            return k
        j += 1


def good_sign_threshold(m: float, lam: float, p: int) -> float:
    """k above which the bracket is positive at the critical point."""
    return m / lam * math.log((p * math.exp(lam) - p + 2.0) / 2.0)


@dataclass
class AdmissibilityReport:
    weighted_norms: tuple[float, float]
    log_norms: tuple[float, float]
    admissible: bool


def _log_weighted_l2(f: np.ndarray, log_w2: np.ndarray, grid: Grid, time_grid: TimeGrid) -> float:
    # per-cell trapezoid in time, weight frozen at the midpoint
    cell = 0.5 * ((f[:-1] ** 2).sum(axis=1) + (f[1:] ** 2).sum(axis=1))
    with np.errstate(divide="ignore"):
        terms = log_w2 + np.log(cell)
    if not np.isfinite(terms).any():
        return -math.inf
    top = terms[np.isfinite(terms)].max()
    total = top + math.log(np.exp(terms[np.isfinite(terms)] - top).sum())
    return 0.5 * (total + math.log(grid.h * time_grid.dt))


def check_source_admissibility(xi1: np.ndarray, xi2: np.ndarray, ws: WeightSet, time_grid: TimeGrid,
                               cap: float = 1e300) -> AdmissibilityReport:
    """rho-weighted L2 norms of the sources, evaluated in log space.

    The t = 0 level only enters through the first cell, whose weight is taken
    at t = dt/2, so rho is never evaluated at its singularity.
    """
    grid = ws.nu.grid
    logs = tuple(_log_weighted_l2(np.asarray(f, dtype=float), 2.0 * ws.log_rho, grid, time_grid)
                 for f in (xi1, xi2))
    with np.errstate(over="ignore"):
        norms = tuple(float(np.exp(v)) for v in logs)
    admissible = all(v <= math.log(cap) for v in logs)
    return AdmissibilityReport(norms, logs, admissible)


def weights_table(ws: WeightSet) -> dict[str, np.ndarray]:
    """Flattened columns (t, x, phi, xi, phi_hat, xi_star, S, Z, rho) for export."""
    M, n = ws.phi.shape
    tt = np.repeat(ws.t, n)
    return {
        "t": tt,
        "x": np.tile(ws.x, M),
        "phi": ws.phi.ravel(),
        "xi": ws.xi.ravel(),
        "phi_hat": np.repeat(ws.phi_hat, n),
        "xi_star": np.repeat(ws.xi_star, n),
        "S": ws.S.ravel(),
        "Z": ws.Z.ravel(),
        "rho": np.repeat(ws.rho, n),
    }
