import math

import numpy as np
import pytest

from ks_insense import (BadInterval, CarlemanParams, DegenerateParams, Grid, TimeGrid, audit_good_sign,
                        audit_weight_estimates, build_mask, build_nu, build_weights,
                        check_source_admissibility, search_k)
from ks_insense.errors import SearchFailed
from ks_insense.weights import good_sign_bracket, good_sign_threshold, weights_table


def make_ws(N=64, M=128, a=0.5, b=0.6, m=2.0, k=None, s=1.0, lam=2.0, T=1.0):
    nu = build_nu((a, b), Grid(N))
    k = search_k(nu, m, lam, 10) if k is None else k
    tg = TimeGrid(T, M)
    return build_weights(nu, CarlemanParams(m, k, s, lam, T), tg), tg


def test_nu_symmetric_case():
    nu = build_nu((0.4, 0.6), Grid(32))
    assert nu.x0 == 0.5 and nu.c == 1.0
    x = nu.grid.x_full
    assert np.allclose(nu.nu, 4 * x * (1 - x), atol=1e-15)
    assert nu.derivative(0.0) == pytest.approx(4.0)
    assert nu.value(0.5) == pytest.approx(1.0)


@pytest.mark.parametrize("interval", [(0.1, 0.2), (0.3, 0.4), (0.6, 0.95)])
def test_nu_properties(interval):
    nu = build_nu(interval, Grid(128))
    assert nu.value(nu.x0) == pytest.approx(1.0, abs=1e-15)
    assert nu.nu[0] == 0.0 and nu.nu[-1] == 0.0
    assert np.all(nu.nu[1:-1] > 0)
    assert nu.derivative(0.0) == pytest.approx(4 / nu.c)
    assert nu.derivative(1.0) == pytest.approx(-4 * nu.c)
    assert nu.nu.max() <= 1.0


def test_nu_c_lower():
    nu = build_nu((0.3, 0.4), Grid(128))
    assert nu.x0 == pytest.approx(0.35)
    assert nu.c_lower > 0
    inside = (nu.grid.x_full > 0.3) & (nu.grid.x_full < 0.4)
    assert np.any(np.abs(nu.dnu[inside]) < nu.c_lower)
    assert np.all(np.abs(nu.dnu[nu.outside]) >= nu.c_lower)


def test_nu_from_mask_and_bad_interval():
    g = Grid(32)
    nu = build_nu(build_mask(g, 0.2, 0.4), g)
    assert nu.x0 == pytest.approx(0.3)
    with pytest.raises(BadInterval):
        build_nu((0.5, 0.5), g)


def test_carleman_params_validation():
    with pytest.raises(DegenerateParams):
        CarlemanParams(m=2, k=2)
    with pytest.raises(DegenerateParams):
        CarlemanParams(lam=1.0)
    with pytest.raises(DegenerateParams):
        CarlemanParams(s=0.0)


def test_weight_invariants():
    ws, tg = make_ws(N=32, M=64)
    p = ws.params
    for f in (ws.phi, ws.xi, ws.S, ws.Z):
        assert np.all(f > 0)
    # boundary extremality, exact at nodes
    assert np.array_equal(ws.phi[:, 0], ws.phi_hat) and np.array_equal(ws.xi[:, 0], ws.xi_star)
    assert np.all(ws.phi <= ws.phi_hat[:, None]) and np.all(ws.xi >= ws.xi_star[:, None])
    # spatial max of xi at the critical point
    x0_val = math.exp(p.lam * (p.k + 1)) / (ws.t * (p.T - ws.t)) ** p.m
    assert np.all(ws.xi <= x0_val[:, None] * (1 + 1e-14))
    # closed form of phi_hat
    lhs = ws.phi_hat * (ws.t * (p.T - ws.t)) ** p.m
    assert np.allclose(lhs, math.exp(p.lam * (1 + 1 / p.m) * p.k) - math.exp(p.lam * p.k), rtol=1e-13)
    # frozen family
    first = ws.t <= p.T / 2
    assert np.array_equal(ws.S[first], ws.phi[first]) and np.array_equal(ws.Z[first], ws.xi[first])
    late = ws.t >= p.T / 2
    assert np.all(ws.Z[late] == ws.Z[late][0])
    # rho blows up towards t = 0 and is flat on [T/2, T]
    rho_first = ws.log_rho[first]
    assert np.all(np.diff(rho_first) < 0)
    assert np.all(ws.log_rho[late] == ws.log_rho[late][0])
    assert np.isfinite(ws.log_rho[-1])


def test_frozen_weight_at_three_quarters():
    nu = build_nu((0.5, 0.6), Grid(32))
    tg = TimeGrid(1.0, 4)  # midpoints 1/8, 3/8, 5/8, 7/8
    ws = build_weights(nu, CarlemanParams(2, 4, 1, 2, 1.0), tg)
    assert np.array_equal(ws.Z[2], ws.Z[3])


def test_good_sign_examples():
    nu = build_nu((0.5, 0.6), Grid(64))
    k = search_k(nu, 2.0, 2.0, 10)
    thr = good_sign_threshold(2.0, 2.0, 10)
    assert thr == pytest.approx(3.4948, abs=1e-4)
    assert k > thr
    tg = TimeGrid(1.0, 32)
    ws = build_weights(nu, CarlemanParams(2, k, 1, 2), tg)
    rep = audit_good_sign(ws, 10)
    assert rep.holds and rep.delta >= 0.1 and rep.identity_residual < 1e-12
    bad = build_weights(nu, CarlemanParams(2, 2.01, 1, 2), tg)
    assert not audit_good_sign(bad, 10).holds


@pytest.mark.parametrize("k", [2.001, 2.5, 4.0, 9.0])
def test_good_sign_p2_always_holds(k):
    nu = build_nu((0.2, 0.3), Grid(32))
    ws = build_weights(nu, CarlemanParams(2, k, 1, 3), TimeGrid(1.0, 16))
    assert audit_good_sign(ws, 2).holds


def test_search_k_trends_and_errors():
    nu = build_nu((0.5, 0.6), Grid(64))
    assert search_k(nu, 2, 2, 10) == search_k(nu, 2, 2, 10)
    ks = [search_k(nu, 2, lam, 3) for lam in (2, 8, 32)]
    assert ks[0] >= ks[1] >= ks[2] and ks[2] < 2.5
    with pytest.raises(ValueError):
        search_k(nu, 2, 2, 2)
    with pytest.raises(SearchFailed):
        search_k(nu, 2, 2, 10, margin=1e300)


def test_bracket_identity():
    nu = build_nu((0.5, 0.6), Grid(32))
    br = good_sign_bracket(nu, 2, 4, 2, 10)
    assert br[-1] == pytest.approx(2 * math.exp(4) - 10 * math.exp(2) + 8)


def test_weight_estimates_finite_and_stable():
    reps = {}
    for N, M in ((64, 128), (128, 256)):
        ws, tg = make_ws(N, M)
        reps[N] = [audit_weight_estimates(ws, b, tg) for b in (3, 7, 39)]
    for r1, r2 in zip(reps[64], reps[128]):
        for f in ("ratio_x", "ratio_t", "ratio_t_m", "time_deri"):
            v1, v2 = getattr(r1, f), getattr(r2, f)
            assert np.isfinite(v1) and np.isfinite(v2)
            assert abs(v2 / v1 - 1) <= 0.2, (f, v1, v2)


def test_weight_estimate_m_one_skips_t_m():
    ws, tg = make_ws(N=32, M=64, m=1.0, k=3.0)
    rep = audit_weight_estimates(ws, 3, tg)
    assert rep.ratio_t_m is None and rep.time_deri is None
    with pytest.raises(ValueError):
        audit_weight_estimates(ws, 0, tg)


def test_admissibility_examples():
    ws, tg = make_ws(N=32, M=64)
    shape = (tg.M + 1, 31)
    zero = check_source_admissibility(np.zeros(shape), np.zeros(shape), ws, tg)
    assert zero.admissible and zero.weighted_norms == (0.0, 0.0)
    late = np.zeros(shape)
    late[tg.t >= 0.5] = 1.0
    # rho is bounded on [T/2, T]: finite in log space at s = 1, below the cap at small s
    rep = check_source_admissibility(late, late, ws, tg)
    assert all(np.isfinite(rep.log_norms))
    ws_small, _ = make_ws(N=32, M=64, s=1e-6)
    rep = check_source_admissibility(late, late, ws_small, tg)
    assert rep.admissible and all(np.isfinite(rep.weighted_norms))
    ones = np.ones(shape)
    assert not check_source_admissibility(ones, ones, ws, tg).admissible


def test_weights_table_columns():
    ws, tg = make_ws(N=16, M=8)
    tab = weights_table(ws)
    assert list(tab) == ["t", "x", "phi", "xi", "phi_hat", "xi_star", "S", "Z", "rho"]
    assert all(len(v) == 8 * 17 for v in tab.values())
