import dataclasses

import numpy as np
import pytest

from relent_lab.systems import (SystemSpec, make_cubic_A, make_duct_gas, make_scalar_sanity,
                                make_selfsimilar, make_weighted_burgers, make_memory_scalar)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def record_acceptance():
    def rec(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return rec


def col(v):
    return np.asarray(v)[..., None]


def mat(v):
    return np.asarray(v)[..., None, None]


def builtin_specs():
    """Every analytic built-in system, keyed by a short label."""
    return {
        "scalar_sanity": make_scalar_sanity(),
        "duct_gas": make_duct_gas(1.0, 2.0),
        "duct_gas_g14": make_duct_gas(0.7, 1.4),
        "selfsimilar": make_selfsimilar(make_scalar_sanity()),
        "memory_scalar": make_memory_scalar(T=1.0, dt=1e-2),
        "cubic_A": make_cubic_A(),
        "weighted_burgers": make_weighted_burgers(),
    }


def interior_states(spec, rng, size):
    """Admissible samples well inside the system's working region."""
    if spec.state_box is not None:
        lo, hi = (np.asarray(b, float) for b in spec.state_box)
    else:
        lo, hi = -np.ones(spec.n), np.ones(spec.n)
    return rng.uniform(lo, hi, size=(size, spec.n))


def make_quartic_x():
    """Scalar law, A = u, with an x-dependent quartic entropy so that G_x is
    nonlinear in u (G2 is then genuinely second order)."""
    base = make_scalar_sanity()

    def s(U):
        return np.asarray(U, float)[..., 0]

    def w(x):
        return 1.0 + 0.5 * np.sin(x)

    def wx(x):
        return 0.5 * np.cos(x)

    def xb(x, U):
        return np.broadcast_to(np.asarray(x, float), np.shape(U)[:-1])

    return dataclasses.replace(
        base, name="quartic_x",
        eta=lambda U, x, t: w(xb(x, U)) * s(U) ** 4 / 4 + s(U) ** 2 / 2,
        grad_eta=lambda U, x, t: col(w(xb(x, U)) * s(U) ** 3 + s(U)),
        hess_eta=lambda U, x, t: mat(3 * w(xb(x, U)) * s(U) ** 2 + 1),
        G=lambda U, x, t: col(w(xb(x, U)) * s(U) ** 3 + s(U)),
        dG=lambda U, x, t: mat(3 * w(xb(x, U)) * s(U) ** 2 + 1),
        d2G=lambda U, x, t: (6 * w(xb(x, U)) * s(U))[..., None, None, None],
        G_x=(lambda U, x, t: col(wx(xb(x, U)) * s(U) ** 3),),
        dG_x=(lambda U, x, t: mat(3 * wx(xb(x, U)) * s(U) ** 2),),
    )


def with_viscosity(spec, B, dB, B_x):
    return dataclasses.replace(spec, B=((B,),), dB=((dB,),), B_x=((B_x,),))


def duct_with_state_viscosity():
    """Duct gas with B = diag(1, 1 + rho^2) (state-dependent)."""
    spec = make_duct_gas(1.0, 2.0)

    def B(U, x, t):
        U = np.asarray(U, float)
        out = np.zeros(U.shape + (2,))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0 + U[..., 0] ** 2
        return out

    def dB(U, x, t):
        U = np.asarray(U, float)
        out = np.zeros(U.shape + (2, 2))
        out[..., 1, 1, 0] = 2.0 * U[..., 0]
        return out

    def Bx(U, x, t):
        return np.zeros(np.shape(U) + (2,))

    return with_viscosity(spec, B, dB, Bx)


def weighted_with_state_viscosity():
    """Weighted Burgers with B = a(x, t) + u^2, so B depends on u and x."""
    spec = make_weighted_burgers()

    def a(x, t):
        return 2.0 + 0.3 * np.sin(x) + 0.1 * np.sin(t)

    def xb(x, U):
        return np.broadcast_to(np.asarray(x, float), np.shape(U)[:-1])

    def B(U, x, t):
        u = np.asarray(U, float)[..., 0]
        return mat(a(xb(x, U), t) + u ** 2)

    def dB(U, x, t):
        u = np.asarray(U, float)[..., 0]
        return (2.0 * u)[..., None, None, None]

    def Bx(U, x, t):
        return mat(0.3 * np.cos(xb(x, U)))

    return with_viscosity(spec, B, dB, Bx)


def cubic_with_state_viscosity():
    spec = make_cubic_A()

    def B(U, x, t):
        u = np.asarray(U, float)[..., 0]
        return mat(1.0 + 0.5 * u ** 2)

    def dB(U, x, t):
        u = np.asarray(U, float)[..., 0]
        return u[..., None, None, None]

    def Bx(U, x, t):
        return mat(np.zeros(np.shape(U)[:-1]))

    return with_viscosity(spec, B, dB, Bx)


def stencil5(fun, x, h=1e-3):
    """Fourth-order central difference of ``fun`` at ``x``."""
    return (-fun(x + 2 * h) + 8 * fun(x + h) - 8 * fun(x - h) + fun(x - 2 * h)) / (12 * h)
