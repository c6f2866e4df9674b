"""Discrete relative entropy ledger, dissipation and error terms, Gronwall fits.

Integrals over the torus use the midpoint rule on cell centres and spatial
derivatives of grid fields are second-order central differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InsufficientDataError, LedgerError
from .relent import rel_entropy, rel_flux, rel_multiplier, rel_remainders
from .solver import Field, Trajectory
from .systems import eval_R

TERM_NAMES = ("source_difference", "flux_relative", "multiplier_relative",
              "inhomogeneity", "dissipation") + tuple(f"Q{i}" for i in range(1, 10))


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def ddx(U, dx):
    """Periodic central difference along axis 0."""
    return (np.roll(U, -1, axis=0) - np.roll(U, 1, axis=0)) / (2.0 * dx)


def d2dx2(U, dx):
    return (np.roll(U, -1, axis=0) - 2.0 * U + np.roll(U, 1, axis=0)) / dx ** 2


def total_entropy(spec, field: Field):
    g = field.grid
    return float(np.sum(spec.eta(field.U, g.x, field.t)) * g.dx)


def rel_entropy_total(spec, U: Field, Ubar: Field):
    """Midpoint-rule integral of ``eta(U|Ubar)`` over the torus."""
    _same_grid(U, Ubar)
    g = U.grid
    return float(np.sum(rel_entropy(spec, U.U, Ubar.U, g.x, U.t)) * g.dx)


def l2_distance(U: Field, Ubar: Field):
    return float(np.sqrt(np.sum((U.U - Ubar.U) ** 2) * U.grid.dx))


def _same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise LedgerError(f"grids differ: N={a.grid.N}, L={a.grid.L} vs N={b.grid.N}, L={b.grid.L}")


def _B(spec, U, x, t):
    B = np.asarray(spec.B[0][0](U, x, t))
    return np.broadcast_to(B, np.shape(U) + (np.shape(U)[-1],))


def D_density(spec, U, Ubar, gradU, gradUbar, x, t):
    """``(dG(U) xi) . (B(U) xi)`` with ``xi = U_x - Ubar_x``."""
    xi = gradU - gradUbar
    return _dot(_mv(spec.dG(U, x, t), xi), _mv(_B(spec, U, x, t), xi))


def D_total(spec, U: Field, Ubar: Field, epsilon: float = 1.0):
    """``epsilon`` times the integrated dissipation form; gradients by central
    differences.  Nonnegative whenever the viscosity is dissipative."""
    _same_grid(U, Ubar)
    if spec.B is None:
        return 0.0
    g = U.grid
    dens = D_density(spec, U.U, Ubar.U, ddx(U.U, g.dx), ddx(Ubar.U, g.dx), g.x, U.t)
    return float(epsilon * np.sum(dens) * g.dx)


def Q_terms(spec, U, Ubar, gradU, gradUbar, x, t, Ubar_xx=None):
    """The nine error terms of the viscous relative entropy identity.

    Returns an array with trailing axis of length 9 (Q1..Q9).  Q1 involves
    ``d_x (dG(Ubar)^T B(Ubar) Ubar_x)`` and therefore ``Ubar_xx``; without it
    Q1 is NaN except where ``phi`` vanishes.
    """
    U = np.asarray(U, dtype=float)
    Ubar = np.asarray(Ubar, dtype=float)
    Ux = np.asarray(gradU, dtype=float)
    Ubx = np.asarray(gradUbar, dtype=float)
    xi = Ux - Ubx
    phi, G1, G2 = rel_remainders(spec, U, Ubar, x, t)
    G2 = G2[0]
    dG, dGb = spec.dG(U, x, t), spec.dG(Ubar, x, t)
    B, Bb = _B(spec, U, x, t), _B(spec, Ubar, x, t)
    BbUx = _mv(Bb, Ubx)
    dGdiff = dG - dGb
    Bdiff = B - Bb
    Gxd = spec.G_x[0](U, x, t) - spec.G_x[0](Ubar, x, t)

    # x-derivative of W = dG(Ubar)^T B(Ubar) Ubar_x along the reference field
    ddG = (np.einsum("...ijk,...k->...ij", spec.d2G(Ubar, x, t), Ubx)
           + spec.dG_x[0](Ubar, x, t))
    ddB = (np.einsum("...ijk,...k->...ij", spec.dB[0][0](Ubar, x, t), Ubx)
           + spec.B_x[0][0](Ubar, x, t))
    Uxx = np.full_like(Ubx, np.nan) if Ubar_xx is None else np.asarray(Ubar_xx, dtype=float)
    Wp = (np.einsum("...ji,...j->...i", ddG, BbUx)
          + np.einsum("...ji,...j->...i", dGb, _mv(ddB, Ubx) + _mv(Bb, Uxx)))
    Q1 = -np.sum(np.where(phi == 0.0, 0.0, Wp * phi), axis=-1)
    Q2 = -_dot(BbUx, _mv(dGdiff, xi))
    Q3 = -_dot(BbUx, _mv(G1, Ubx))
    Q4 = -_dot(_mv(dG, xi), _mv(Bdiff, Ubx))
    Q5 = -_dot(_mv(dGdiff, Ubx), _mv(B, xi))
    Q6 = -_dot(_mv(dGdiff, Ubx), _mv(Bdiff, Ubx))
    Q7 = -_dot(Gxd, _mv(B, xi))
    Q8 = -_dot(Gxd, _mv(Bdiff, Ubx))
    Q9 = -_dot(BbUx, G2)
    return np.stack([Q1, Q2, Q3, Q4, Q5, Q6, Q7, Q8, Q9], axis=-1)


def j_flux(spec, U, Ubar, gradU, gradUbar, x, t):
    """Viscous relative flux whose divergence appears in the identity."""
    G, Gb = spec.G(U, x, t), spec.G(Ubar, x, t)
    B, Bb = _B(spec, U, x, t), _B(spec, Ubar, x, t)
    BbUx = _mv(Bb, gradUbar)
    phi = rel_remainders(spec, U, Ubar, x, t)[0]
    return (_dot(G - Gb, _mv(B, gradU) - BbUx)
            + _dot(BbUx, rel_multiplier(spec, U, Ubar, x, t))
            + _dot(BbUx, _mv(spec.dG(Ubar, x, t), phi)))


def inviscid_densities(spec, U, Ubar, gradUbar, x, t):
    """Pointwise hyperbolic terms of ``d/dt eta(U|Ubar)`` (after dropping the
    divergence of the relative entropy flux)."""
    G, Gb = spec.G(U, x, t), spec.G(Ubar, x, t)
    R, Rb = eval_R(spec, U, x, t), eval_R(spec, Ubar, x, t)
    dGb = spec.dG(Ubar, x, t)
    src = -_dot(G - Gb, R - Rb)
    flx = -_dot(_mv(dGb, gradUbar), rel_flux(spec, U, Ubar, x, t)[0])
    mul = -_dot(Rb, rel_multiplier(spec, U, Ubar, x, t))
    A, Ab = spec.A(U, x, t), spec.A(Ubar, x, t)
    f, fb = spec.f[0](U, x, t), spec.f[0](Ubar, x, t)
    inh = ((spec.eta_t(U, x, t) + spec.q_x[0](U, x, t)
            - spec.eta_t(Ubar, x, t) - spec.q_x[0](Ubar, x, t))
           - _dot(Gb, spec.A_t(U, x, t) + spec.f_x[0](U, x, t)
                  - spec.A_t(Ubar, x, t) - spec.f_x[0](Ubar, x, t))
           - _dot(spec.G_t(Ubar, x, t), A - Ab)
           - _dot(spec.G_x[0](Ubar, x, t), f - fb))
    return src, flx, mul, inh


def snapshot_terms(spec, U: Field, Ubar: Field, epsilon: float):
    """Integrated right-hand side terms of the identity at one snapshot."""
    _same_grid(U, Ubar)
    g = U.grid
    x, t, dx = g.x, U.t, g.dx
    Ux, Ubx, Ubxx = ddx(U.U, dx), ddx(Ubar.U, dx), d2dx2(Ubar.U, dx)
    src, flx, mul, inh = inviscid_densities(spec, U.U, Ubar.U, Ubx, x, t)
    out = {"source_difference": float(np.sum(src) * dx),
           "flux_relative": float(np.sum(flx) * dx),
           "multiplier_relative": float(np.sum(mul) * dx),
           "inhomogeneity": float(np.sum(inh) * dx)}
    if spec.B is not None and epsilon > 0:
        D = D_density(spec, U.U, Ubar.U, Ux, Ubx, x, t)
        Q = Q_terms(spec, U.U, Ubar.U, Ux, Ubx, x, t, Ubxx)
        j = j_flux(spec, U.U, Ubar.U, Ux, Ubx, x, t)
        out["dissipation"] = float(-epsilon * np.sum(D) * dx)
        for i in range(9):
            out[f"Q{i + 1}"] = float(epsilon * np.sum(Q[:, i]) * dx)
        out["j_divergence_sum"] = float(np.sum(ddx(j, dx)) * dx)
    else:
        out["dissipation"] = 0.0
        for i in range(9):
            out[f"Q{i + 1}"] = 0.0
        out["j_divergence_sum"] = 0.0
    return out


@dataclass
class IdentityLedger:
    times: np.ndarray
    E: np.ndarray
    dEdt: np.ndarray
    terms: dict
    residual: np.ndarray
    j_divergence: np.ndarray
    epsilon: float

    @property
    def rhs(self):
        return sum(self.terms[k] for k in TERM_NAMES)

    def residual_integral(self):
        """``int_0^T |residual| dt`` by the trapezoidal rule."""
        r = np.abs(self.residual)
        if len(r) < 2:
            return float(r.sum())
        return float(np.sum(0.5 * (r[1:] + r[:-1]) * np.diff(self.times)))

    def rows(self):
        cols = ["t", "E", "dEdt"] + list(TERM_NAMES) + ["residual", "j_divergence"]
        out = []
        for k in range(len(self.times)):
            vals = [self.times[k], self.E[k], self.dEdt[k]]
            vals += [self.terms[n][k] for n in TERM_NAMES]
            vals += [self.residual[k], self.j_divergence[k]]
            out.append(dict(zip(cols, (float(v) for v in vals))))
        return out


def identity_ledger(spec, traj_U: Trajectory, traj_Ubar: Trajectory, epsilon: float) -> IdentityLedger:
    """Assemble every term of the relative entropy identity per snapshot.

    The left-hand side ``dE/dt`` is a second-order finite difference of the
    integrated relative entropy over the snapshot times.
    """
    if traj_U.grid != traj_Ubar.grid:
        raise LedgerError("trajectories live on different grids")
    tU, tB = np.asarray(traj_U.times), np.asarray(traj_Ubar.times)
    if tU.shape != tB.shape or np.max(np.abs(tU - tB), initial=0.0) > 1e-12:
        raise LedgerError("trajectories have different snapshot times")
    if len(tU) < 3:
        raise InsufficientDataError("ledger needs at least three snapshots")
    fields = [(traj_U.field_at(k), traj_Ubar.field_at(k)) for k in range(len(tU))]
    E = np.array([rel_entropy_total(spec, a, b) for a, b in fields])
    per = [snapshot_terms(spec, a, b, epsilon) for a, b in fields]
    terms = {n: np.array([p[n] for p in per]) for n in TERM_NAMES}
    dEdt = np.gradient(E, tU, edge_order=2)
    rhs = sum(terms[n] for n in TERM_NAMES)
    return IdentityLedger(times=tU, E=E, dEdt=dEdt, terms=terms, residual=dEdt - rhs,
                          j_divergence=np.array([p["j_divergence_sum"] for p in per]),
                          epsilon=epsilon)


@dataclass
class GronwallFit:
    rate: float
    initial: float
    log_intercept: float
    violated: bool
    max_excess: float
    tol: float

    def envelope(self, times):
        return self.initial * np.exp(self.rate * np.asarray(times)) * (1.0 + self.tol)

    def to_dict(self):
        return {"rate": self.rate, "initial": self.initial,
                "log_intercept": self.log_intercept, "violated": self.violated,
                "max_excess": self.max_excess, "tol": self.tol}


def gronwall_fit(series, times, tol: float = 0.05, min_points: int = 10) -> GronwallFit:
    """Exponential rate of the increasing envelope of a positive series.

    ``rate`` is the least-squares slope of ``log(running max)`` against t,
    clipped at zero.  ``violated`` is set if the series exceeds
    ``series[0] * exp(rate t) * (1 + tol)`` anywhere.
    """
    y = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    if len(y) < min_points:
        raise InsufficientDataError(f"Gronwall fit needs at least {min_points} points, got {len(y)}")
    if y[0] == 0.0 and np.all(y == 0.0):
        return GronwallFit(0.0, 0.0, float("-inf"), False, 0.0, tol)
    if np.any(y <= 0):
        raise ValueError("Gronwall fit needs a positive series")
    env = np.maximum.accumulate(y)
    slope, icpt = np.polyfit(t - t[0], np.log(env), 1)
    rate = max(float(slope), 0.0)
    bound = y[0] * np.exp(rate * (t - t[0])) * (1.0 + tol)
    excess = float(np.max(y / bound))
    return GronwallFit(rate=rate, initial=float(y[0]), log_intercept=float(icpt),
                       violated=bool(excess > 1.0), max_excess=excess, tol=tol)


def fit_order(hs, errors):
    """Least-squares slope of ``log error`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0) or len(e) < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs), np.log(e), 1)[0])


__all__ = [
    "TERM_NAMES", "ddx", "d2dx2", "total_entropy", "rel_entropy_total",
    "l2_distance", "D_density", "D_total", "Q_terms", "j_flux",
    "inviscid_densities", "snapshot_terms", "IdentityLedger", "identity_ledger",
    "GronwallFit", "gronwall_fit", "fit_order",
]
