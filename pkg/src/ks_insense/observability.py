"""Weighted Carleman functionals and a discrete observability constant.

Fields live on time levels; the functionals are evaluated at cell midpoints
t_{n+1/2}, where the weights are sampled. A field value there is the average
of its two neighbouring levels and q_t is the level difference over dt.
Spatial derivatives use the grid operators: clamped stencils for KS-type
fields (u, zeta), Dirichlet stencils for heat-type fields (w, theta). The
space quadrature runs over interior nodes.

All weighted integrals are accumulated in log space because
exp(-2 s phi) underflows long before the products it multiplies do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateObservation, EigFailed
from .grid import Grid, IndicatorMask, TimeGrid, assemble_d1, assemble_d2, assemble_d3, assemble_d4
from .solvers import KSHeatSystem, pack, solve_adjoint
from .weights import WeightSet

Regime = Literal["interior", "zero", "one"]

LOG_TINY = math.log(1e-300)
LOG_HUGE = math.log(1e300)


def _mid(q: np.ndarray) -> np.ndarray:
    return 0.5 * (q[1:] + q[:-1])


def _dt(q: np.ndarray, tg: TimeGrid) -> np.ndarray:
    return (q[1:] - q[:-1]) / tg.dt


def _apply(op, q: np.ndarray) -> np.ndarray:
    return op.matvec(q.T).T


def log_weighted_integral(f: np.ndarray, log_w, grid: Grid, tg: TimeGrid,
                          mask: Optional[np.ndarray] = None) -> float:
    """log of dt*h*sum w |f|^2 over midpoints x interior nodes (-inf if zero)."""
    f2 = f**2 if mask is None else mask * f**2
    with np.errstate(divide="ignore"):
        terms = np.broadcast_to(log_w, f2.shape) + np.log(f2)
    if not np.isfinite(terms).any():
        return -math.inf
    return float(logsumexp(terms[np.isfinite(terms)]) + math.log(tg.dt * grid.h))


def _log_sum(logs: Sequence[float]) -> float:
    logs = [v for v in logs if v > -math.inf]
    return float(logsumexp(logs)) if logs else -math.inf


def _base(ws: WeightSet, r: float, pow_s: float, pow_lam: float) -> np.ndarray:
    """log of s^pow_s lam^pow_lam exp(-2 s phi) xi^r on midpoints x interior."""
    p = ws.params
    phi, xi = ws.interior(ws.phi), ws.interior(ws.xi)
    return pow_s * math.log(p.s) + pow_lam * math.log(p.lam) - 2 * p.s * phi + r * np.log(xi)


def log_I_KS(q: np.ndarray, ws: WeightSet, grid: Grid, tg: TimeGrid) -> float:
    qm = _mid(q)
    terms = [
        (qm, _base(ws, 7, 7, 8)),
        (_apply(assemble_d1(grid, "clamped"), qm), _base(ws, 5, 5, 6)),
        (_apply(assemble_d2(grid), qm), _base(ws, 3, 3, 4)),
        (_apply(assemble_d3(grid), qm), _base(ws, 1, 1, 2)),
        (_dt(q, tg), _base(ws, -1, -1, 0)),
        (_apply(assemble_d4(grid), qm), _base(ws, -1, -1, 0)),
    ]
    return _log_sum([log_weighted_integral(f, w, grid, tg) for f, w in terms])


def log_I_H(q: np.ndarray, r: float, ws: WeightSet, grid: Grid, tg: TimeGrid) -> float:
    qm = _mid(q)
    terms = [
        (_dt(q, tg), _base(ws, r - 4, r - 4, r - 3)),
        (_apply(assemble_d2(grid), qm), _base(ws, r - 4, r - 4, r - 3)),
        (_apply(assemble_d1(grid, "dirichlet"), qm), _base(ws, r - 2, r - 2, r - 1)),
        (qm, _base(ws, r, r, r + 1)),
    ]
    return _log_sum([log_weighted_integral(f, w, grid, tg) for f, w in terms])


def _exp(v: float) -> float:
    with np.errstate(over="ignore", under="ignore"):
        return float(np.exp(v))


def eval_I_KS(q: np.ndarray, ws: WeightSet, grid: Grid, tg: TimeGrid) -> float:
    """Weighted KS functional; may be 0 or inf in floating point, see :func:`log_I_KS`."""
    return _exp(log_I_KS(q, ws, grid, tg))


def eval_I_H(q: np.ndarray, r: float, ws: WeightSet, grid: Grid, tg: TimeGrid) -> float:
    return _exp(log_I_H(q, r, ws, grid, tg))


@dataclass
class CarlemanFunctionalReport:
    regime: str
    log_terms: dict
    log_lhs: float
    log_rhs: float
    underflow: bool
    overflow: bool

    @property
    def lhs(self) -> float:
        return _exp(self.log_lhs)

    @property
    def rhs(self) -> float:
        return _exp(self.log_rhs)

    @property
    def log_ratio(self) -> float:
        return self.log_lhs - self.log_rhs

    @property
    def ratio(self) -> float:
        return _exp(self.log_ratio)


_REGIME_ALPHA = {"zero": 0.0, "one": 1.0}


def carleman_ratio(regime: Regime, zeta0: np.ndarray, theta0: np.ndarray, sys: KSHeatSystem,
                   ws: WeightSet, omega0: IndicatorMask) -> CarlemanFunctionalReport:
    """LHS and RHS of the weighted inequality matching the alpha regime.

    ``interior`` keeps ``sys.params.alpha`` (which must lie in (0, 1));
    ``zero`` and ``one`` solve the adjoint with alpha = 0 and 1.
    """
    if regime == "interior":
        if not 0.0 < sys.params.alpha < 1.0:
            raise ConfigError("regime 'interior' needs 0 < alpha < 1")
    elif regime in _REGIME_ALPHA:
        sys = sys.with_alpha(_REGIME_ALPHA[regime])
    else:
        raise ConfigError(f"unknown regime {regime!r}")
    g, tg = sys.grid, sys.time
    ad = solve_adjoint(sys, zeta0, theta0)
    p = ws.params
    s, lam = p.s, p.lam
    mask = omega0.weights
    lhs = {"I_KS(u)": log_I_KS(ad.u, ws, g, tg), "I_H(w;3)": log_I_H(ad.w, 3, ws, g, tg)}
    um, wm = _mid(ad.u), _mid(ad.w)

    if regime == "interior":
        lhs["I_KS(zeta)"] = log_I_KS(ad.zeta, ws, g, tg)
        lhs["I_H(theta;3)"] = log_I_H(ad.theta, 3, ws, g, tg)
        rhs = {"u": log_weighted_integral(um, _base(ws, 15, 15, 16), g, tg, mask),
               "w": log_weighted_integral(wm, _base(ws, 9, 9, 10), g, tg, mask)}
    elif regime == "zero":
        zm = _mid(ad.zeta)
        lhs["zeta_x"] = log_weighted_integral(_apply(assemble_d1(g, "clamped"), zm),
                                              _base(ws, 7, 7, 8), g, tg)
        hat = (7 * math.log(s) + 8 * math.log(lam) - 2 * s * ws.phi_hat
               + 7 * np.log(ws.xi_star))[:, None]
        lhs["zeta_hat"] = log_weighted_integral(zm, hat, g, tg)
        lhs["I_H(theta;9)"] = log_I_H(ad.theta, 9, ws, g, tg)
        shift = (-8 * s * ws.interior(ws.phi) + 8 * s * ws.phi_hat[:, None])
        rhs = {"u": log_weighted_integral(um, _base(ws, 39, 39, 24) + shift, g, tg, mask),
               "w": log_weighted_integral(wm, _base(ws, 41, 41, 26) + shift, g, tg, mask)}
    else:
        lhs["I_KS(zeta)"] = log_I_KS(ad.zeta, ws, g, tg)
        thm = _mid(ad.theta)
        lhs["theta_x"] = log_weighted_integral(_apply(assemble_d1(g, "dirichlet"), thm),
                                               _base(ws, 3, 3, 4), g, tg)
        lhs["theta_xx"] = log_weighted_integral(_apply(assemble_d2(g), thm), _base(ws, 1, 1, 2), g, tg)
        rhs = {"u": log_weighted_integral(um, _base(ws, 79, 79, 80), g, tg, mask),
               "w": log_weighted_integral(wm, _base(ws, 73, 73, 74), g, tg, mask)}

    log_lhs, log_rhs = _log_sum(list(lhs.values())), _log_sum(list(rhs.values()))
    if log_rhs == -math.inf:
        raise DegenerateObservation("observation integral over omega_0 x (0, T) vanishes")
    logs = [log_lhs, log_rhs]
    terms = {**{f"lhs:{k}": v for k, v in lhs.items()}, **{f"rhs:{k}": v for k, v in rhs.items()}}
    return CarlemanFunctionalReport(regime, terms, log_lhs, log_rhs,
                                    underflow=any(v < LOG_TINY for v in logs),
                                    overflow=any(v > LOG_HUGE for v in logs))


def adjoint_batch(sys: KSHeatSystem, data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint (u, w) for many initial data at once.

    ``data`` has shape (2n, K): columns are (zeta0, theta0) stacked. Returns
    u, w of shape (M+1, n, K). Matches :func:`solve_adjoint` column by column.
    """
    n, M, dt = sys.grid.n_interior, sys.time.M, sys.time.dt
    K = data.shape[1]
    A = sys.step
    a, mo = sys.params.alpha, sys.obs.weights[:, None]
    Z = np.empty((M + 1, 2 * n, K))
    Z[0] = pack(data[:n].T, data[n:].T).T
    for k in range(M):
        Z[k + 1] = A.solve(Z[k])
    S = Z.copy()
    S[:, 0::2] *= a * mo
    S[:, 1::2] *= (1 - a) * mo
    P = np.zeros_like(Z)
    for k in range(M - 1, -1, -1):
        P[k] = A.solve(P[k + 1] + dt * S[k + 1], trans=True)
    return P[:, 0::2], P[:, 1::2]


def _cell_form(u: np.ndarray, w: np.ndarray, time_w: np.ndarray, space_w: np.ndarray,
               grid: Grid, tg: TimeGrid) -> np.ndarray:
    """Gram matrix of dt*h*sum_cells tw * sw * (|u|^2 + |w|^2), trapezoid per cell."""
    out = np.zeros((u.shape[2], u.shape[2]))
    for f in (u, w):
        lvl = np.einsum("lik,i,lij->ljk", f, space_w, f)  # per-level Gram, (M+1, K, K)
        cell = 0.5 * (lvl[1:] + lvl[:-1])
        out += np.einsum("l,ljk->jk", time_w, cell)
    out *= tg.dt * grid.h
    return 0.5 * (out + out.T)


@dataclass
class ObservabilityEstimate:
    mu: list
    c_obs: list
    log_c_obs: list
    iterations: list
    eigvec: np.ndarray = field(repr=False)
    N: int = 0
    M: int = 0
    A: Optional[np.ndarray] = field(default=None, repr=False)
    B: Optional[np.ndarray] = field(default=None, repr=False)
    log_scale: float = 0.0


def assemble_observability_forms(sys: KSHeatSystem, ws: WeightSet, omega: IndicatorMask):
    """Dense forms A (rho^-2 weighted, whole domain) and B (on omega) over adjoint data.

    The rho^-2 weight is normalised by its largest value exp(-2 min log rho)
    to dodge underflow; the returned ``log_scale`` restores it.
    """
    n = sys.grid.n_interior
    u, w = adjoint_batch(sys, np.eye(2 * n))
    log_rw = -2.0 * ws.log_rho
    log_scale = float(log_rw.max())
    with np.errstate(under="ignore"):
        tw = np.exp(log_rw - log_scale)
    A = _cell_form(u, w, tw, np.ones(n), sys.grid, sys.time)
    B = _cell_form(u, w, np.ones(sys.time.M), omega.weights, sys.grid, sys.time)
    return A, B, log_scale


def generalized_max_eig(A: np.ndarray, B: np.ndarray, mu: float, tol: float = 1e-13,
                        max_iter: int = 10_000, v0: Optional[np.ndarray] = None):
    """Largest eigenvalue of A v = c (B + mu*||B|| I) v by power iteration.

    Works on C = L^{-1} A L^{-T} with B + mu*||B|| I = L L^T.
    """
    dim = A.shape[0]
    shift = mu * max(np.linalg.norm(B, 2), np.finfo(float).tiny)
    L = cho_factor(B + shift * np.eye(dim), lower=True)[0]
    L = np.tril(L)
    C = solve_triangular(L, solve_triangular(L, A, lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    v = np.ones(dim) if v0 is None else np.asarray(v0, dtype=float).copy()
    v /= np.linalg.norm(v)
    lam = v @ C @ v
    for it in range(1, max_iter + 1):
        wv = C @ v
        nw = np.linalg.norm(wv)
        if nw == 0.0:
            return 0.0, v, it
        v = wv / nw
        lam_new = float(v @ C @ v)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            x = solve_triangular(L, v, lower=True, trans="T")
            return lam_new, x / np.linalg.norm(x), it
        lam = lam_new
    raise EigFailed(f"power iteration did not converge in {max_iter} steps (mu={mu:g})")


def estimate_observability(sys: KSHeatSystem, ws: WeightSet, mu_list: Sequence[float],
                           omega: Optional[IndicatorMask] = None, keep_forms: bool = False,
                           max_n: int = 48) -> ObservabilityEstimate:
    """c_obs(mu): max over adjoint data of A / (B + mu ||B||) for each mu.

    ``mu`` is relative to ||B||_2 so the curve does not depend on the scale
    of the forms. Dense assembly limits this to N <= ``max_n``.
    """
    if sys.grid.N > max_n:
        raise ConfigError(f"estimate_observability assembles dense forms; needs N <= {max_n}")
    if any(not mu > 0 for mu in mu_list):
        raise ConfigError("observability regularisation values mu must be > 0")
    omega = sys.omega if omega is None else omega
    A, B, log_scale = assemble_observability_forms(sys, ws, omega)
    mus, cs, logs, its = [], [], [], []
    vec = None
    for mu in sorted(mu_list):
        c, vec, it = generalized_max_eig(A, B, mu)
        mus.append(float(mu))
        logs.append(math.log(c) + log_scale if c > 0 else -math.inf)
        cs.append(_exp(logs[-1]))
        its.append(it)
    return ObservabilityEstimate(mus, cs, logs, its, vec, sys.grid.N, sys.time.M,
                                 A if keep_forms else None, B if keep_forms else None, log_scale)
