import numpy as np
import pytest

from ks_insense import CgStalled, ConfigError, HumConfig, gramian_apply, gramian_norm, solve_hum
from ks_insense.hum import free_solution_offset
from ks_insense.solvers import inner, pair_lower, solve_adjoint, solve_cascade
from conftest import bump, make_system
from oracles import monolithic_cascade


def _duality_terms(sys, rng):
    n, M = sys.grid.n_interior, sys.time.M
    zeta0, theta0 = rng.standard_normal(n), rng.standard_normal(n)
    h1, h2, xi1, xi2 = (rng.standard_normal((M + 1, n)) for _ in range(4))
    cs = solve_cascade(sys, None, None, h1, h2, xi1, xi2)
    ad = solve_adjoint(sys, zeta0, theta0)
    g, tg, m = sys.grid, sys.time, sys.omega.weights
    lhs = inner(cs.p0, zeta0, g) + inner(cs.q0, theta0, g)
    terms = (pair_lower(m * h1, ad.u, g, tg), pair_lower(m * h2, ad.w, g, tg),
             pair_lower(xi1, ad.u, g, tg), pair_lower(xi2, ad.w, g, tg))
    return lhs, terms


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_duality_identity(rng, alpha):
    sys = make_system(N=32, M=64, alpha=alpha)
    for _ in range(3):
        lhs, terms = _duality_terms(sys, rng)
        scale = max(abs(lhs), *map(abs, terms))
        assert abs(lhs - sum(terms)) <= 1e-10 * scale


def test_gramian_zero_in_zero_out(small_sys):
    n = small_sys.grid.n_interior
    p0, q0 = gramian_apply(small_sys, np.zeros(n), np.zeros(n))
    assert not p0.any() and not q0.any()


def test_gramian_symmetric_psd(small_sys, rng):
    sys, n = small_sys, small_sys.grid.n_interior
    g, tg, m = sys.grid, sys.time, sys.omega.weights
    for _ in range(5):
        a, b = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
        la, lb = (np.concatenate(gramian_apply(sys, v[:n], v[n:])) for v in (a, b))
        ab, ba = g.h * la @ b, g.h * lb @ a
        assert abs(ab - ba) <= 1e-12 * max(abs(ab), abs(ba))
        aa = g.h * la @ a
        assert aa >= -1e-14 * g.h * (la @ la)
        ad = solve_adjoint(sys, a[:n], a[n:])
        ref = pair_lower(m * m * ad.u, ad.u, g, tg) + pair_lower(m * m * ad.w, ad.w, g, tg)
        assert abs(aa - ref) <= 1e-12 * abs(ref)


def test_free_offset_linear(small_sys, rng):
    shape = small_sys.shape
    xi1, xi2 = rng.standard_normal(shape), rng.standard_normal(shape)
    p1, q1 = free_solution_offset(small_sys, xi1, xi2)
    p2, q2 = free_solution_offset(small_sys, -2 * xi1, -2 * xi2)
    assert np.allclose(p2, -2 * p1, rtol=1e-13, atol=0) and np.allclose(q2, -2 * q1, rtol=1e-13, atol=0)


def test_alpha_one_free_offset_matches_oracle(rng):
    sys = make_system(N=12, M=16, alpha=1.0)
    n, M = sys.grid.n_interior, sys.time.M
    xi1, xi2 = rng.standard_normal((M + 1, n)), rng.standard_normal((M + 1, n))
    p0, q0 = free_solution_offset(sys, xi1, xi2)
    zero = np.zeros(n)
    _, _, p, q = monolithic_cascade(n, sys.grid.h, M, sys.time.dt, 1.0, 0.5, 1.0, sys.omega.weights,
                                    sys.obs.weights, zero, zero, xi1, xi2)
    assert np.abs(p0 - p[0]).max() <= 1e-10 * np.abs(p[0]).max()
    assert np.abs(q0 - q[0]).max() <= 1e-10 * np.abs(q[0]).max()


def test_hum_zero_sources(small_sys):
    res = solve_hum(small_sys, cfg=HumConfig(epsilon=1e-4))
    assert res.converged and res.cg_iters == 0 and res.residual_norm == 0.0
    assert not res.h1.any() and not res.h2.any()


def test_hum_controls_supported_in_omega():
    sys = make_system(N=32, M=64)
    xi = bump(sys)
    res = solve_hum(sys, xi, xi, HumConfig(epsilon=1e-4))
    outside = sys.omega.weights == 0
    assert not res.h1[:, outside].any() and not res.h2[:, outside].any()
    assert res.h1[:, ~outside].any()


def test_hum_epsilon_monotone_and_cg_stop(rng):
    sys = make_system(N=32, M=64)
    t = sys.time.t
    window = ((t >= 0.25) & (t <= 0.75))[:, None]
    xi1, xi2 = window * rng.standard_normal(sys.shape), window * rng.standard_normal(sys.shape)
    lam = gramian_norm(sys)
    norms = []
    for eps in (1e-2, 1e-4, 1e-6):
        cfg = HumConfig(epsilon=eps, cg_tol=1e-10, cg_max_iter=2000)
        res = solve_hum(sys, xi1, xi2, cfg, lam_norm=lam)
        assert res.cg_residual <= cfg.cg_tol
        # the gap is the CG residual measured through a fresh cascade solve
        assert res.duality_gap <= 10 * cfg.cg_tol * res.free_residual_norm
        norms.append(res.residual_norm)
    assert norms[0] >= norms[1] >= norms[2]
    assert norms[2] < res.free_residual_norm


def test_hum_bump_decay():
    sys = make_system(N=32, M=64)
    xi = bump(sys)
    res = solve_hum(sys, xi, xi, HumConfig(epsilon=1e-6))
    assert res.residual_norm / res.free_residual_norm <= 1e-2


def test_hum_stalled_carries_result():
    sys = make_system(N=16, M=32)
    xi = bump(sys)
    with pytest.raises(CgStalled) as ei:
        solve_hum(sys, xi, xi, HumConfig(epsilon=1e-8, cg_tol=1e-12, cg_max_iter=1))
    res = ei.value.result
    assert not res.converged and res.cg_iters == 1 and res.h1.shape == sys.shape


def test_hum_config_validation():
    for kw in ({"epsilon": 0.0}, {"cg_tol": 1.5}, {"cg_max_iter": 0}):
        with pytest.raises(ConfigError):
            HumConfig(**kw)


def test_gramian_norm_matches_dense(small_sys):
    sys, n = small_sys, small_sys.grid.n_interior
    cols = [np.concatenate(gramian_apply(sys, e[:n], e[n:])) for e in np.eye(2 * n)]
    lam = np.linalg.eigvalsh(0.5 * (np.array(cols).T + np.array(cols))).max()
    assert gramian_norm(sys, rtol=1e-10, max_iter=5000) == pytest.approx(lam, rel=1e-6)
