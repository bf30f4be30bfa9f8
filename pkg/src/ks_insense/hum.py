"""Penalised HUM: insensitising controls from the adjoint Gramian.

The Gramian maps adjoint data a = (zeta0, theta0) to the cascade residual
(p(0), q(0)) obtained with controls h = (u, w) restricted to omega and zero
sources. We solve

    (Lambda + eps * I) a = -(p_hat(0), q_hat(0))

by conjugate gradients in the mass-weighted product, where p_hat is the
uncontrolled residual produced by the sources. The residual of the
controlled cascade is then exactly -eps * a.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CgStalled, ConfigError
from .solvers import KSHeatSystem, solve_adjoint, solve_cascade

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HumConfig:
    """``epsilon`` is relative to ||Lambda||_2 unless ``absolute_epsilon``."""

    epsilon: float = 1e-6
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    absolute_epsilon: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"hum.epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.cg_tol < 1:
            raise ConfigError(f"hum.cg_tol must lie in (0, 1), got {self.cg_tol}")
        if int(self.cg_max_iter) != self.cg_max_iter or self.cg_max_iter < 1:
            raise ConfigError(f"hum.cg_max_iter must be a positive integer, got {self.cg_max_iter}")


@dataclass
class HumResult:
    zeta0_star: np.ndarray = field(repr=False)
    theta0_star: np.ndarray = field(repr=False)
    h1: np.ndarray = field(repr=False)
    h2: np.ndarray = field(repr=False)
    p0: np.ndarray = field(repr=False)
    q0: np.ndarray = field(repr=False)
    p_hat0: np.ndarray = field(repr=False)
    q_hat0: np.ndarray = field(repr=False)
    cg_iters: int
    converged: bool
    cg_residual: float
    epsilon: float
    epsilon_abs: float
    gramian_norm: float
    duality_gap: float
    residual_norm: float
    free_residual_norm: float

    def diagnostics(self) -> dict:
        return {
            "cg_iters": self.cg_iters,
            "converged": self.converged,
            "cg_relative_residual": self.cg_residual,
            "epsilon": self.epsilon,
            "epsilon_abs": self.epsilon_abs,
            "gramian_norm": self.gramian_norm,
            "duality_gap": self.duality_gap,
            "residual_norm": self.residual_norm,
            "free_residual_norm": self.free_residual_norm,
        }


def _split(sys: KSHeatSystem, a: np.ndarray):
    n = sys.grid.n_interior
    return a[:n], a[n:]


def _mass_dot(sys: KSHeatSystem, a: np.ndarray, b: np.ndarray) -> float:
    return float(sys.grid.h * np.dot(a, b))


def gramian_apply(sys: KSHeatSystem, zeta0: np.ndarray, theta0: np.ndarray):
    """Lambda(zeta0, theta0) = (p(0), q(0)) with h = (u, w) on omega."""
    ad = solve_adjoint(sys, zeta0, theta0)
    m = sys.omega.weights
    cs = solve_cascade(sys, None, None, m * ad.u, m * ad.w)
    return cs.p0, cs.q0


def free_solution_offset(sys: KSHeatSystem, xi1=None, xi2=None):
    """Uncontrolled residual (p(0), q(0)) produced by the sources alone."""
    cs = solve_cascade(sys, None, None, None, None, xi1, xi2)
    return cs.p0, cs.q0


def _gramian_vec(sys: KSHeatSystem) -> Callable[[np.ndarray], np.ndarray]:
    def apply(a):
        p0, q0 = gramian_apply(sys, *_split(sys, a))
        return np.concatenate([p0, q0])
    return apply


def gramian_norm(sys: KSHeatSystem, rtol: float = 1e-3, max_iter: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of the (PSD) Gramian by power iteration."""
    apply = _gramian_vec(sys)
    v = np.random.default_rng(seed).standard_normal(2 * sys.grid.n_interior)
    v /= np.sqrt(_mass_dot(sys, v, v))
    lam = 0.0
    for _ in range(max_iter):
        w = apply(v)
        lam_new = _mass_dot(sys, v, w)
        nw = np.sqrt(_mass_dot(sys, w, w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return float(lam_new)
        lam = lam_new
    return float(lam)


@dataclass
class CgOutcome:
    x: np.ndarray
    iters: int
    rel_residual: float
    converged: bool
    history: list


def conjugate_gradient(apply: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       dot: Callable[[np.ndarray, np.ndarray], float], tol: float,
                       max_iter: int) -> CgOutcome:
    """Plain CG for a symmetric positive definite operator, zero initial guess."""
    x = np.zeros_like(b)
    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0.0:
        return CgOutcome(x, 0, 0.0, True, [0.0])
    r = b.copy()
    d = r.copy()
    rr = dot(r, r)
    history = [1.0]
    best = (1.0, x.copy())
    for it in range(1, max_iter + 1):
        Ad = apply(d)
        alpha = rr / dot(d, Ad)
        x = x + alpha * d
        r = r - alpha * Ad
        rr_new = dot(r, r)
        rel = np.sqrt(rr_new) / bnorm
        history.append(float(rel))
        if rel < best[0]:
            best = (rel, x.copy())
        if rel <= tol:
            return CgOutcome(x, it, float(rel), True, history)
        d = r + (rr_new / rr) * d
        rr = rr_new
    return CgOutcome(best[1], max_iter, float(best[0]), False, history)


def solve_hum(sys: KSHeatSystem, xi1=None, xi2=None, cfg: HumConfig = HumConfig(),
              lam_norm: Optional[float] = None) -> HumResult:
    """Controls (h1, h2) driving (p(0), q(0)) towards zero.

    Raises :class:`CgStalled` carrying the best iterate when CG misses
    ``cfg.cg_tol``.
    """
    n = sys.grid.n_interior
    p_hat0, q_hat0 = free_solution_offset(sys, xi1, xi2)
    rhs = -np.concatenate([p_hat0, q_hat0])
    dot = lambda a, b: _mass_dot(sys, a, b)  # noqa: E731
    free_norm = float(np.sqrt(dot(rhs, rhs)))

    if free_norm == 0.0:
        lam_norm = 0.0 if lam_norm is None else lam_norm
        eps_abs = cfg.epsilon if cfg.absolute_epsilon else cfg.epsilon * lam_norm
        zero_t, zero = sys.zeros(), np.zeros(n)
        return HumResult(zero, zero, zero_t, zero_t, zero, zero, p_hat0, q_hat0, 0, True, 0.0,
                         cfg.epsilon, eps_abs, lam_norm, 0.0, 0.0, 0.0)

    if lam_norm is None:
        lam_norm = gramian_norm(sys) if not cfg.absolute_epsilon else float("nan")
    eps_abs = cfg.epsilon if cfg.absolute_epsilon else cfg.epsilon * lam_norm
    if not eps_abs > 0:
        raise ConfigError("effective penalty is zero; the Gramian vanishes (is omega empty?)")

    gram = _gramian_vec(sys)
    out = conjugate_gradient(lambda a: gram(a) + eps_abs * a, rhs, dot, cfg.cg_tol, cfg.cg_max_iter)
    a = out.x
    zeta0, theta0 = _split(sys, a)
    ad = solve_adjoint(sys, zeta0, theta0)
    m = sys.omega.weights
    h1, h2 = m * ad.u, m * ad.w
    cs = solve_cascade(sys, None, None, h1, h2, xi1, xi2)
    res = np.concatenate([cs.p0, cs.q0])
    # res already contains p_hat(0), so Lambda a + eps a + p_hat(0) = res + eps a
    gap_vec = res + eps_abs * a
    gap = float(np.sqrt(dot(gap_vec, gap_vec)))
    result = HumResult(zeta0, theta0, h1, h2, cs.p0, cs.q0, p_hat0, q_hat0, out.iters, out.converged,
                       out.rel_residual, cfg.epsilon, eps_abs, lam_norm, gap,
                       float(np.sqrt(dot(res, res))), free_norm)
    log.info("HUM eps=%g: %d CG iterations, residual %.3e (free %.3e)", cfg.epsilon, out.iters,
             result.residual_norm, free_norm)
    if not out.converged:
        raise CgStalled(f"CG relative residual {out.rel_residual:.3e} > tol {cfg.cg_tol:g} "
                        f"after {out.iters} iterations", result)
    return result
