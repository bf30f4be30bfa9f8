"""Sentinel functional and the insensitivity check.

The sentinel is integrated with the rectangle rule over levels 1..M, the
quadrature under which tau -> J is an exact quadratic whose derivative at 0
equals <p(0), ybar0> + <q(0), zbar0> for the implicit Euler cascade.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .solvers import CascadeSolution, KSHeatSystem, inner, norm, solve_cascade, solve_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SentinelConfig:
    alpha: float = 0.5
    tau_steps: tuple = (1e-3, 5e-4)
    n_perturbations: int = 10
    rng_seed: int = 0
    alphas: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"sentinel.alpha must lie in [0, 1], got {self.alpha}")
        if len(self.tau_steps) < 1:
            raise ConfigError("sentinel.tau_list must hold at least one value")
        for tau in self.tau_steps:
            if tau == 0 or abs(tau) > 0.1:
                raise ConfigError(f"sentinel.tau_list values must be nonzero with |tau| <= 0.1, got {tau}")
        if self.n_perturbations < 1:
            raise ConfigError("sentinel.n_perturbations must be >= 1")


def evaluate_sentinel(y: np.ndarray, z: np.ndarray, mask_obs, alpha: float, grid, time_grid) -> float:
    """(alpha/2) |y|^2 + ((1-alpha)/2) |z|^2 integrated over O x (0, T)."""
    w = getattr(mask_obs, "weights", mask_obs)
    dens = alpha * y[1:] ** 2 + (1.0 - alpha) * z[1:] ** 2
    return float(0.5 * time_grid.dt * grid.h * np.sum(dens * w))


def random_perturbation(sys: KSHeatSystem, rng: np.random.Generator):
    """White noise scaled to unit discrete L2 norm in each component."""
    n = sys.grid.n_interior
    yb, zb = rng.standard_normal(n), rng.standard_normal(n)
    return yb / norm(yb, sys.grid), zb / norm(zb, sys.grid)


@dataclass
class FdResult:
    taus: list
    derivatives: list
    richardson: float
    j0: float


def derivative_fd(sys: KSHeatSystem, h1=None, h2=None, xi1=None, xi2=None, perturbation=None,
                  tau_list: Sequence[float] = (1e-3, 5e-4), y0=None, z0=None) -> FdResult:
    """Central differences of tau -> J(y_tau, z_tau), Richardson-combined."""
    ybar, zbar = perturbation
    n = sys.grid.n_interior
    y0 = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
    z0 = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float)
    a = sys.params.alpha

    def J(tau):
        y, z = solve_forward(sys, y0 + tau * ybar, z0 + tau * zbar, xi1, xi2, h1, h2)
        return evaluate_sentinel(y, z, sys.obs, a, sys.grid, sys.time)

    derivs = [(J(tau) - J(-tau)) / (2.0 * tau) for tau in tau_list]
    if len(tau_list) >= 2:
        r = (tau_list[0] / tau_list[1]) ** 2
        richardson = (r * derivs[1] - derivs[0]) / (r - 1.0)
    else:
        richardson = derivs[0]
    return FdResult(list(tau_list), derivs, float(richardson), J(0.0))


def derivative_analytic(cascade: CascadeSolution, perturbation, grid) -> float:
    ybar, zbar = perturbation
    return inner(cascade.p0, ybar, grid) + inner(cascade.q0, zbar, grid)


@dataclass
class InsensitivityReport:
    alpha: float
    epsilon: Optional[float]
    residual_norm: float
    per_perturbation: list = field(default_factory=list)
    max_abs_derivative: float = 0.0
    cauchy_schwarz_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "residual_norm": self.residual_norm,
            "per_perturbation": self.per_perturbation,
            "max_abs_derivative": self.max_abs_derivative,
            "cauchy_schwarz_ok": self.cauchy_schwarz_ok,
        }


def verify_insensitivity(sys: KSHeatSystem, h1, h2, xi1, xi2, cfg: SentinelConfig,
                         epsilon: Optional[float] = None, y0=None, z0=None) -> InsensitivityReport:
    """FD and analytic sentinel derivatives over random unit perturbations.

    ``sys.params.alpha`` must be the alpha the controls were computed for.
    A nonzero base state (y0, z0) is allowed for exploration only: which
    initial data can be insensitised is not characterised.
    """
    if y0 is not None or z0 is not None:
        log.warning("nonzero base initial data: controls are only guaranteed for y0 = z0 = 0")
    cs = solve_cascade(sys, y0, z0, h1, h2, xi1, xi2)
    grid = sys.grid
    res = float(np.sqrt(norm(cs.p0, grid) ** 2 + norm(cs.q0, grid) ** 2))
    rng = np.random.default_rng(cfg.rng_seed)
    rows = []
    ok = True
    for _ in range(cfg.n_perturbations):
        pert = random_perturbation(sys, rng)
        an = derivative_analytic(cs, pert, grid)
        fd = derivative_fd(sys, h1, h2, xi1, xi2, pert, cfg.tau_steps, y0, z0)
        bound = 2.0 * res
        ok &= abs(an) <= bound
        rows.append({"fd": fd.derivatives[0], "fd_richardson": fd.richardson, "analytic": an,
                     "j0": fd.j0, "bound": bound})
    mx = max(abs(r["analytic"]) for r in rows)
    return InsensitivityReport(sys.params.alpha, epsilon, res, rows, mx, bool(ok))
