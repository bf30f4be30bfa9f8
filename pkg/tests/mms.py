"""Manufactured solutions for the forward solver (sympy-generated forcing)."""

import numpy as np
import sympy as sp

from ks_insense import solve_forward
from conftest import make_system

_t, _x = sp.symbols("t x")
GAMMA, BETA = 1.0, 0.5


def _mms(ye, ze):
    f1 = sp.diff(ye, _t) + sp.diff(ye, _x, 4) + GAMMA * sp.diff(ye, _x, 2) - sp.diff(ze, _x)
    f2 = sp.diff(ze, _t) - sp.diff(ze, _x, 2) + BETA * sp.diff(ze, _x) - sp.diff(ye, _x)
    return [sp.lambdify((_t, _x), e, "numpy") for e in (ye, ze, f1, f2)]


MMS = _mms(sp.exp(-_t) * _x**2 * (1 - _x) ** 2, sp.exp(-_t) * sp.sin(sp.pi * _x))


def mms_final(N, M, scheme="euler", fns=MMS):
    """Numerical (y, z) at t = T and the exact values there."""
    Y, Z, F1, F2 = fns
    sys = make_system(N=N, M=M, gamma=GAMMA, beta=BETA)
    T, X = np.meshgrid(sys.time.t, sys.grid.x, indexing="ij")
    x = sys.grid.x
    y, z = solve_forward(sys, Y(0.0, x), Z(0.0, x), F1(T, X), F2(T, X), scheme=scheme)
    return y[-1], z[-1], Y(1.0, x), Z(1.0, x)


def mms_error(N, M, scheme="euler", fns=MMS):
    y, z, ye, ze = mms_final(N, M, scheme, fns)
    return max(np.abs(y - ye).max(), np.abs(z - ze).max())


def mms_error_richardson(N, M, fns=MMS):
    """Implicit Euler with time extrapolation 2 u(2M) - u(M): isolates the spatial error."""
    y1, z1, ye, ze = mms_final(N, M, "euler", fns)
    y2, z2, _, _ = mms_final(N, 2 * M, "euler", fns)
    return max(np.abs(2 * y2 - y1 - ye).max(), np.abs(2 * z2 - z1 - ze).max())


def eoc(errs):
    errs = np.asarray(errs)
    return np.log2(errs[:-1] / errs[1:])
