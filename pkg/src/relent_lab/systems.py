"""
Constitutive closures for balance laws

    d_t A(U,x,t) + d_a f_a(U,x,t) + P(U,x,t) = eps d_a (B_ab(U,x,t) d_b U)

together with an entropy pair (eta, q_a) and multiplier G.

Every closure is vectorised: ``U`` has shape ``(..., n)``, ``x`` broadcasts
against ``U.shape[:-1]`` and ``t`` is a scalar.  Derivative slots follow the
layout

    dA[..., i, j]      = dA_i / dU_j
    d2A[..., i, j, k]  = d^2 A_i / dU_j dU_k
    dB[..., i, j, k]   = dB_ij / dU_k

Slots that a system does not provide analytically can be filled by
:func:`synthesize_derivatives` using central differences.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, HistoryGapError, InversionError, QuadratureError

_EPS = np.finfo(float).eps

Closure = Callable[[np.ndarray, np.ndarray, float], np.ndarray]

# (slot name, per-direction nesting) for every derivative slot
_PLAIN_DERIVATIVES = ("dA", "d2A", "A_t", "grad_eta", "hess_eta", "eta_t",
                      "dG", "d2G", "G_t")
_ALPHA_DERIVATIVES = ("df", "f_x", "grad_q", "q_x", "G_x", "dG_x")
_ALPHABETA_DERIVATIVES = ("dB", "B_x")


@dataclass
class SystemSpec:
    """Bundle of constitutive closures and their derivatives.

    ``f``, ``q`` and the per-direction derivative slots are tuples of length
    ``d``; ``B``, ``dB`` and ``B_x`` are ``d x d`` nested tuples.
    """

    name: str
    n: int
    A: Closure
    f: tuple
    P: Closure
    eta: Closure
    q: tuple
    G: Optional[Closure] = None
    B: Optional[tuple] = None
    d: int = 1

    dA: Optional[Closure] = None
    d2A: Optional[Closure] = None
    A_t: Optional[Closure] = None
    df: Optional[tuple] = None
    f_x: Optional[tuple] = None
    grad_eta: Optional[Closure] = None
    hess_eta: Optional[Closure] = None
    eta_t: Optional[Closure] = None
    grad_q: Optional[tuple] = None
    q_x: Optional[tuple] = None
    dG: Optional[Closure] = None
    d2G: Optional[Closure] = None
    G_t: Optional[Closure] = None
    G_x: Optional[tuple] = None
    dG_x: Optional[tuple] = None
    dB: Optional[tuple] = None
    B_x: Optional[tuple] = None

    derivative_mode: str = "analytic"
    state_names: tuple = ()
    admissible: Optional[Callable[[np.ndarray], np.ndarray]] = None
    state_box: Optional[tuple] = None
    A_identity: bool = False
    history: Optional["HistoryBuffer"] = None
    params: dict = field(default_factory=dict)

    def check_state(self, U):
        """Raise :class:`DomainError` if any state in ``U`` is inadmissible."""
        if self.admissible is None:
            return
        U = np.asarray(U, dtype=float)
        ok = np.asarray(self.admissible(U))
        if not np.all(ok):
            bad = np.argwhere(~np.atleast_1d(ok))
            idx = tuple(int(i) for i in bad[0]) if bad.size else None
            comp = self.state_names[0] if self.state_names else "state"
            raise DomainError(
                f"{self.name}: inadmissible state at index {idx} "
                f"(component '{comp}')", component=comp,
                index=idx[0] if idx and len(idx) == 1 else idx)

    def missing_slots(self):
        return [s for s in _PLAIN_DERIVATIVES + _ALPHA_DERIVATIVES
                + _ALPHABETA_DERIVATIVES if getattr(self, s) is None]

    def viscous(self):
        return self.B is not None


# ---------------------------------------------------------------------------
# small array helpers

def _as_state(U):
    return np.asarray(U, dtype=float)


def _bshape(x, U):
    """Broadcast ``x`` to the batch shape of ``U``."""
    return np.broadcast_to(np.asarray(x, dtype=float), np.shape(U)[:-1])


def _eye(U, n):
    return np.broadcast_to(np.eye(n), np.shape(U)[:-1] + (n, n)).copy()


def _zeros(U, *tail):
    return np.zeros(np.shape(U)[:-1] + tuple(tail))


def _expand(h, ndim):
    return h.reshape(h.shape + (1,) * (ndim - h.ndim))


# ---------------------------------------------------------------------------
# finite-difference synthesis

def fd_jacobian(fun, step_power=1.0 / 3.0):
    """Central-difference Jacobian of ``fun`` with respect to U.

    The derivative index is appended as the last axis of the output, so a
    scalar closure yields a gradient and a vector closure a Jacobian.
    """
    def jac(U, x, t):
        U = _as_state(U)
        cols = []
        for j in range(U.shape[-1]):
            h = _EPS ** step_power * (1.0 + np.abs(U[..., j]))
            Up = U.copy()
            Um = U.copy()
            Up[..., j] += h
            Um[..., j] -= h
            hh = Up[..., j] - Um[..., j]
            diff = np.asarray(fun(Up, x, t)) - np.asarray(fun(Um, x, t))
            cols.append(diff / _expand(hh, diff.ndim))
        return np.stack(cols, axis=-1)
    return jac


def fd_x(fun, step_power=1.0 / 3.0):
    """Central difference of ``fun`` in its explicit x argument."""
    def dfx(U, x, t):
        xb = _bshape(x, U)
        h = _EPS ** step_power * (1.0 + np.abs(xb))
        xp, xm = xb + h, xb - h
        diff = np.asarray(fun(U, xp, t)) - np.asarray(fun(U, xm, t))
        return diff / _expand(xp - xm, diff.ndim)
    return dfx


def fd_t(fun, step_power=1.0 / 3.0):
    """Central difference of ``fun`` in its explicit t argument."""
    def dft(U, x, t):
        t = float(t)
        h = _EPS ** step_power * (1.0 + abs(t))
        tp, tm = t + h, t - h
        return (np.asarray(fun(U, x, tp)) - np.asarray(fun(U, x, tm))) / (tp - tm)
    return dft


def _multiplier_from_entropy(grad_eta, dA):
    def G(U, x, t):
        # G . dA = grad eta  <=>  dA^T G = grad eta
        g = np.asarray(grad_eta(U, x, t))
        J = np.asarray(dA(U, x, t))
        return np.linalg.solve(np.swapaxes(J, -1, -2), g[..., None])[..., 0]
    return G


def synthesize_derivatives(core: SystemSpec) -> SystemSpec:
    """Fill every missing derivative slot of ``core`` by central differences.

    Steps are ``eps**(1/3) * (1 + |component|)`` for first derivatives of
    analytic closures and ``eps**(1/4) * (1 + |component|)`` when
    differentiating an already synthesised derivative.
    """
    s = dataclasses.replace(core)
    synthesized = []
    third, quarter = 1.0 / 3.0, 0.25

    def take(name, make):
        if getattr(s, name) is None:
            setattr(s, name, make())
            synthesized.append(name)
            return True
        return False

    def power_for(name):
        return quarter if name in synthesized else third

    take("dA", lambda: fd_jacobian(s.A))
    take("d2A", lambda: fd_jacobian(s.dA, power_for("dA")))
    take("A_t", lambda: fd_t(s.A))
    take("grad_eta", lambda: fd_jacobian(s.eta))
    take("hess_eta", lambda: fd_jacobian(s.grad_eta, power_for("grad_eta")))
    take("eta_t", lambda: fd_t(s.eta))
    if s.G is None:
        s.G = _multiplier_from_entropy(s.grad_eta, s.dA)
        synthesized.append("G")
    take("dG", lambda: fd_jacobian(s.G))
    take("d2G", lambda: fd_jacobian(s.dG, power_for("dG")))
    take("G_t", lambda: fd_t(s.G))
    take("df", lambda: tuple(fd_jacobian(fa) for fa in s.f))
    take("f_x", lambda: tuple(fd_x(fa) for fa in s.f))
    take("grad_q", lambda: tuple(fd_jacobian(qa) for qa in s.q))
    take("q_x", lambda: tuple(fd_x(qa) for qa in s.q))
    take("G_x", lambda: tuple(fd_x(s.G) for _ in range(s.d)))
    dgx_power = power_for("dG")
    take("dG_x", lambda: tuple(fd_x(s.dG, dgx_power) for _ in range(s.d)))
    if s.B is not None:
        take("dB", lambda: tuple(tuple(fd_jacobian(b) for b in row) for row in s.B))
        take("B_x", lambda: tuple(tuple(fd_x(b) for b in row) for row in s.B))

    if synthesized:
        s.derivative_mode = "finite-difference"
        s.params = dict(s.params, synthesized=sorted(synthesized))
    return s


def derivative_consistency(spec: SystemSpec, U, x, t):
    """Worst relative mismatch between each derivative slot and a central
    difference of the closure it differentiates.

    Returns a dict ``slot -> max |analytic - fd| / (1 + |analytic|)``.
    """
    U = _as_state(U)
    third = 1.0 / 3.0
    pairs = {
        "dA": (spec.dA, fd_jacobian(spec.A, third)),
        "d2A": (spec.d2A, fd_jacobian(spec.dA, third)),
        "A_t": (spec.A_t, fd_t(spec.A)),
        "grad_eta": (spec.grad_eta, fd_jacobian(spec.eta)),
        "hess_eta": (spec.hess_eta, fd_jacobian(spec.grad_eta)),
        "eta_t": (spec.eta_t, fd_t(spec.eta)),
        "dG": (spec.dG, fd_jacobian(spec.G)),
        "d2G": (spec.d2G, fd_jacobian(spec.dG)),
        "G_t": (spec.G_t, fd_t(spec.G)),
    }
    for a in range(spec.d):
        pairs[f"df[{a}]"] = (spec.df[a], fd_jacobian(spec.f[a]))
        pairs[f"f_x[{a}]"] = (spec.f_x[a], fd_x(spec.f[a]))
        pairs[f"grad_q[{a}]"] = (spec.grad_q[a], fd_jacobian(spec.q[a]))
        pairs[f"q_x[{a}]"] = (spec.q_x[a], fd_x(spec.q[a]))
        pairs[f"G_x[{a}]"] = (spec.G_x[a], fd_x(spec.G))
        pairs[f"dG_x[{a}]"] = (spec.dG_x[a], fd_x(spec.dG))
        if spec.B is not None:
            for b in range(spec.d):
                pairs[f"dB[{a}][{b}]"] = (spec.dB[a][b], fd_jacobian(spec.B[a][b]))
                pairs[f"B_x[{a}][{b}]"] = (spec.B_x[a][b], fd_x(spec.B[a][b]))
    out = {}
    for name, (exact, approx) in pairs.items():
        ex = np.asarray(exact(U, x, t), dtype=float)
        ap = np.asarray(approx(U, x, t), dtype=float)
        ex = np.broadcast_to(ex, np.broadcast_shapes(ex.shape, ap.shape))
        err = np.abs(ex - ap) / (1.0 + np.abs(ex))
        out[name] = float(np.max(err)) if err.size else 0.0
    return out


# ---------------------------------------------------------------------------
# pointwise evaluations

def eval_R(spec: SystemSpec, U, x, t):
    """Effective source ``R = P + A_t + sum_a f_{a,x_a}``."""
    U = _as_state(U)
    spec.check_state(U)
    R = np.asarray(spec.P(U, x, t), dtype=float) + spec.A_t(U, x, t)
    for a in range(spec.d):
        R = R + spec.f_x[a](U, x, t)
    return R


def eval_Z(spec: SystemSpec, U, x, t):
    """Entropy production ``Z = G . R - eta_t - sum_a q_{a,x_a}``."""
    U = _as_state(U)
    R = eval_R(spec, U, x, t)
    Z = np.einsum("...i,...i->...", spec.G(U, x, t), R) - spec.eta_t(U, x, t)
    for a in range(spec.d):
        Z = Z - spec.q_x[a](U, x, t)
    return Z


def invert_A(spec: SystemSpec, V, x, t, guess, tol=1e-12, max_iter=50):
    """Solve ``A(U, x, t) = V`` for U by Newton iteration, cellwise.

    Converged when ``|A(U) - V|_inf <= tol * (1 + |V|_inf)`` in every cell.
    """
    V = _as_state(V)
    if spec.A_identity:
        return V.copy()
    U = np.array(guess, dtype=float, copy=True)
    U = np.broadcast_to(U, V.shape).copy()
    scale = tol * (1.0 + np.max(np.abs(V), axis=-1))
    res = None
    for _ in range(max_iter + 1):
        r = np.asarray(spec.A(U, x, t)) - V
        res = np.max(np.abs(r), axis=-1)
        if np.all(res <= scale):
            return U
        J = np.asarray(spec.dA(U, x, t))
        U = U - np.linalg.solve(J, r[..., None])[..., 0]
    bad = np.argwhere(np.atleast_1d(res > scale))
    idx = int(bad[0][0]) if bad.size and np.ndim(res) else None
    raise InversionError(
        f"Newton inversion of A did not converge in {max_iter} iterations "
        f"(max residual {float(np.max(res)):.3e})",
        last_iterate=U, residual=res, index=idx)


# ---------------------------------------------------------------------------
# built-in systems

def make_scalar_sanity() -> SystemSpec:
    """Inviscid/viscous Burgers with the quadratic entropy."""
    def A(U, x, t):
        return _as_state(U).copy()

    def f(U, x, t):
        return 0.5 * _as_state(U) ** 2

    def P(U, x, t):
        return _zeros(U, 1)

    def eta(U, x, t):
        return 0.5 * _as_state(U)[..., 0] ** 2

    def q(U, x, t):
        return _as_state(U)[..., 0] ** 3 / 3.0

    def G(U, x, t):
        return _as_state(U).copy()

    def B(U, x, t):
        return np.ones(np.shape(U)[:-1] + (1, 1))

    def zeros_n(U, x, t):
        return _zeros(U, 1)

    def zeros_s(U, x, t):
        return _zeros(U)

    def ones_nn(U, x, t):
        return np.ones(np.shape(U)[:-1] + (1, 1))

    def zeros_nn(U, x, t):
        return _zeros(U, 1, 1)

    def zeros_nnn(U, x, t):
        return _zeros(U, 1, 1, 1)

    return SystemSpec(
        name="scalar_sanity", n=1, A=A, f=(f,), P=P, eta=eta, q=(q,), G=G,
        B=((B,),),
        dA=ones_nn, d2A=zeros_nnn, A_t=zeros_n,
        df=(lambda U, x, t: _as_state(U)[..., None].copy(),),
        f_x=(zeros_n,),
        grad_eta=lambda U, x, t: _as_state(U).copy(),
        hess_eta=ones_nn, eta_t=zeros_s,
        grad_q=(lambda U, x, t: _as_state(U) ** 2,), q_x=(zeros_s,),
        dG=ones_nn, d2G=zeros_nnn, G_t=zeros_n, G_x=(zeros_n,), dG_x=(zeros_nn,),
        dB=((zeros_nnn,),), B_x=((zeros_nn,),),
        state_names=("u",), A_identity=True,
        state_box=(np.array([-2.0]), np.array([2.0])),
    )


@dataclass(frozen=True)
class AProfile:
    """Periodic cross-section ``a(x) = mean + amplitude * sin(x)``."""

    mean: float = 2.0
    amplitude: float = 0.0

    def __call__(self, x):
        return self.mean + self.amplitude * np.sin(x)

    def deriv(self, x):
        return self.amplitude * np.cos(x)

    @classmethod
    def preset(cls, kind="sin", amplitude=0.3, mean=2.0):
        if kind == "constant":
            return cls(mean=mean, amplitude=0.0)
        if kind == "sin":
            if mean - abs(amplitude) <= 0:
                raise ValueError("a_profile must stay positive")
            return cls(mean=mean, amplitude=amplitude)
        raise ValueError(f"unknown a_profile preset {kind!r}")


def make_duct_gas(kappa=1.0, gamma=2.0, a_profile=None, rho_min=1e-8) -> SystemSpec:
    """Isentropic gas in a duct of varying cross section, written with the
    geometric terms moved into the source:

        rho_t + m_x + (a'/a) m = 0
        m_t + (m^2/rho + kappa rho^gamma)_x + (a'/a) m^2/rho = 0
    """
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    prof = a_profile if a_profile is not None else AProfile(2.0, 0.3)
    k, g = float(kappa), float(gamma)

    def split(U):
        U = _as_state(U)
        rho, m = U[..., 0], U[..., 1]
        if np.any(rho <= rho_min) or np.any(~np.isfinite(rho)):
            bad = np.argwhere(np.atleast_1d(~(rho > rho_min)))
            raise DomainError(
                f"duct_gas: density at or below rho_min={rho_min:g} "
                f"(component 'rho', index {tuple(bad[0]) if bad.size else ()})",
                component="rho", index=int(bad[0][0]) if bad.size and rho.ndim else None)
        return rho, m

    def A(U, x, t):
        split(U)
        return _as_state(U).copy()

    def f(U, x, t):
        rho, m = split(U)
        return np.stack([m, m * m / rho + k * rho ** g], axis=-1)

    def df(U, x, t):
        rho, m = split(U)
        out = _zeros(U, 2, 2)
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -m * m / rho ** 2 + k * g * rho ** (g - 1)
        out[..., 1, 1] = 2.0 * m / rho
        return out

    def P(U, x, t):
        rho, m = split(U)
        s = prof.deriv(_bshape(x, U)) / prof(_bshape(x, U))
        return np.stack([s * m, s * m * m / rho], axis=-1)

    def eta(U, x, t):
        rho, m = split(U)
        return 0.5 * m * m / rho + k * rho ** g / (g - 1)

    def grad_eta(U, x, t):
        rho, m = split(U)
        return np.stack([-0.5 * m * m / rho ** 2 + k * g * rho ** (g - 1) / (g - 1),
                         m / rho], axis=-1)

    def hess_eta(U, x, t):
        rho, m = split(U)
        out = _zeros(U, 2, 2)
        out[..., 0, 0] = m * m / rho ** 3 + k * g * rho ** (g - 2)
        out[..., 0, 1] = out[..., 1, 0] = -m / rho ** 2
        out[..., 1, 1] = 1.0 / rho
        return out

    def d3_eta(U, x, t):
        rho, m = split(U)
        out = _zeros(U, 2, 2, 2)
        out[..., 0, 0, 0] = -3.0 * m * m / rho ** 4 + k * g * (g - 2) * rho ** (g - 3)
        val = 2.0 * m / rho ** 3
        out[..., 0, 0, 1] = out[..., 0, 1, 0] = out[..., 1, 0, 0] = val
        val = -1.0 / rho ** 2
        out[..., 0, 1, 1] = out[..., 1, 0, 1] = out[..., 1, 1, 0] = val
        return out

    def q(U, x, t):
        rho, m = split(U)
        return (m / rho) * (0.5 * m * m / rho + k * rho ** g / (g - 1) + k * rho ** g)

    def grad_q(U, x, t):
        rho, m = split(U)
        c = k * g / (g - 1)
        return np.stack([-m ** 3 / rho ** 3 + c * (g - 1) * m * rho ** (g - 2),
                         1.5 * m * m / rho ** 2 + c * rho ** (g - 1)], axis=-1)

    def B(U, x, t):
        return _eye(U, 2)

    def zeros_n(U, x, t):
        return _zeros(U, 2)

    def zeros_s(U, x, t):
        return _zeros(U)

    def zeros_nn(U, x, t):
        return _zeros(U, 2, 2)

    def zeros_nnn(U, x, t):
        return _zeros(U, 2, 2, 2)

    def admissible(U):
        U = _as_state(U)
        return U[..., 0] > rho_min

    return SystemSpec(
        name="duct_gas", n=2, A=A, f=(f,), P=P, eta=eta, q=(q,), G=grad_eta,
        B=((B,),),
        dA=lambda U, x, t: _eye(U, 2), d2A=zeros_nnn, A_t=zeros_n,
        df=(df,), f_x=(zeros_n,),
        grad_eta=grad_eta, hess_eta=hess_eta, eta_t=zeros_s,
        grad_q=(grad_q,), q_x=(zeros_s,),
        dG=hess_eta, d2G=d3_eta, G_t=zeros_n, G_x=(zeros_n,), dG_x=(zeros_nn,),
        dB=((zeros_nnn,),), B_x=((zeros_nn,),),
        state_names=("rho", "m"), admissible=admissible, A_identity=True,
        state_box=(np.array([0.5, -2.0]), np.array([2.0, 2.0])),
        params={"kappa": k, "gamma": g, "a_mean": prof.mean,
                "a_amplitude": prof.amplitude, "rho_min": rho_min},
    )


# ---------------------------------------------------------------------------
# fading memory

def resolvent_kernel(k_samples, dt):
    """Resolvent ``r`` of ``k``: solves ``r + k * r = k`` on uniform stamps.

    The convolution uses the trapezoidal rule, giving second-order accuracy.

    Returns
    -------
    r, r_prime : ndarray
        The resolvent and its derivative (second-order differences) on the
        stamps ``0, dt, ..., (len(k)-1) dt``.
    """
    k = np.asarray(k_samples, dtype=float)
    nk = k.size
    diag = 1.0 + 0.5 * dt * k[0]
    if diag == 0.0 or not np.isfinite(diag):
        raise QuadratureError("singular diagonal 1 + dt*k(0)/2 = 0 in resolvent quadrature")
    r = np.empty(nk)
    r[0] = k[0]
    for i in range(1, nk):
        # interior convolution weights: sum_{j=1}^{i-1} k_{i-j} r_j
        inner = np.dot(k[i - 1:0:-1], r[1:i]) if i > 1 else 0.0
        r[i] = (k[i] - dt * (0.5 * k[i] * r[0] + inner)) / diag
    if nk >= 3:
        r_prime = np.gradient(r, dt, edge_order=2)
    elif nk == 2:
        r_prime = np.full(2, (r[1] - r[0]) / dt)
    else:
        r_prime = np.zeros(nk)
    return r, r_prime


@dataclass
class HistoryBuffer:
    """Past states of a memory system and the sampled resolvent kernel.

    The solver appends accepted states; :meth:`freeze` evaluates the history
    integral ``int_0^t r'(t - tau) u(x, tau) dtau`` once per step.
    """

    kernel_dt: float
    r: np.ndarray
    r_prime: np.ndarray
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    grid_x: Optional[np.ndarray] = None
    period: float = 2.0 * np.pi
    frozen: Optional[np.ndarray] = None
    frozen_t: float = 0.0

    def r_at(self, t):
        s = np.arange(self.r.size) * self.kernel_dt
        return np.interp(t, s, self.r)

    def r_prime_at(self, t):
        s = np.arange(self.r.size) * self.kernel_dt
        return np.interp(t, s, self.r_prime)

    def reset(self, grid_x=None, period=None):
        self.times.clear()
        self.snapshots.clear()
        self.frozen = None
        self.frozen_t = 0.0
        if grid_x is not None:
            self.grid_x = np.asarray(grid_x, dtype=float)
        if period is not None:
            self.period = float(period)

    def append(self, t, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        if self.times and t <= self.times[-1]:
            raise ValueError("history stamps must be strictly increasing")
        if self.snapshots and u.shape != self.snapshots[0].shape:
            raise ValueError("history snapshot does not match the active grid")
        if self.grid_x is not None and u.size != self.grid_x.size:
            raise ValueError("history snapshot does not match the active grid")
        self.times.append(float(t))
        self.snapshots.append(u.copy())

    def integral(self, t):
        """Trapezoidal ``int_0^t r'(t - tau) u(tau) dtau`` over stored stamps."""
        tol = 1e-12 * (1.0 + abs(t))
        if t <= tol and not self.times:
            return 0.0
        if not self.times or self.times[0] > tol or self.times[-1] < t - tol:
            raise HistoryGapError(
                f"history buffer does not cover [0, {t:g}]"
                + (f" (stamps span [{self.times[0]:g}, {self.times[-1]:g}])"
                   if self.times else " (empty)"))
        taus = np.asarray(self.times)
        keep = taus <= t + tol
        taus = taus[keep]
        U = np.stack([s for s, kk in zip(self.snapshots, keep) if kk])
        if taus.size < 2:
            return np.zeros(U.shape[1])
        w = self.r_prime_at(t - taus)[:, None] * U
        return np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(taus)[:, None], axis=0)

    def freeze(self, t):
        """Store the history integral at time ``t`` for use by ``P``."""
        self.frozen = np.asarray(self.integral(t), dtype=float)
        self.frozen_t = float(t)
        return self.frozen

    def frozen_at(self, x):
        if self.frozen is None or np.ndim(self.frozen) == 0:
            val = 0.0 if self.frozen is None else float(self.frozen)
            return np.full(np.shape(x), val)
        if self.grid_x is None:
            raise HistoryGapError("frozen history has no grid to interpolate on")
        return np.interp(x, self.grid_x, self.frozen, period=self.period)


def make_memory_scalar(flux="burgers", kernel=None, T=10.0, dt=1e-3, speed=1.0) -> SystemSpec:
    """Scalar law with fading memory in resolvent form:

        u_t + f(u)_x + r(0) u = r(t) u - int_0^t r'(t - tau) u(tau) dtau

    ``kernel`` is a callable ``k(s)``; the default is ``exp(-s)``.
    """
    kfun = kernel if kernel is not None else (lambda s: np.exp(-s))
    stamps = np.arange(int(round(T / dt)) + 1) * dt
    r, rp = resolvent_kernel(kfun(stamps), dt)
    hist = HistoryBuffer(kernel_dt=dt, r=r, r_prime=rp)
    r0 = float(r[0])

    if flux == "burgers":
        def f(U, x, t):
            return 0.5 * _as_state(U) ** 2

        def df(U, x, t):
            return _as_state(U)[..., None].copy()

        def q(U, x, t):
            return _as_state(U)[..., 0] ** 3 / 3.0

        def grad_q(U, x, t):
            return _as_state(U) ** 2
    elif flux == "linear":
        c = float(speed)

        def f(U, x, t):
            return c * _as_state(U)

        def df(U, x, t):
            return np.full(np.shape(U)[:-1] + (1, 1), c)

        def q(U, x, t):
            return 0.5 * c * _as_state(U)[..., 0] ** 2

        def grad_q(U, x, t):
            return c * _as_state(U)
    else:
        raise ValueError(f"unknown flux {flux!r}")

    def P(U, x, t):
        U = _as_state(U)
        damp = r0 - float(hist.r_at(t))
        return damp * U + hist.frozen_at(_bshape(x, U))[..., None]

    base = make_scalar_sanity()
    return dataclasses.replace(
        base, name="memory_scalar", f=(f,), df=(df,), q=(q,), grad_q=(grad_q,),
        P=P, history=hist,
        params={"flux": flux, "kernel_T": T, "kernel_dt": dt, "r0": r0})


def make_selfsimilar(spec: SystemSpec, Btilde=None) -> SystemSpec:
    """Same system with viscosity ``B_ab(U, x, t) = t * Btilde_ab(U)``.

    ``Btilde`` defaults to the wrapped system's own viscosity.
    """
    if Btilde is None:
        if spec.B is None:
            raise ValueError("self-similar wrapper needs a viscosity matrix")
        Bt, dBt, Btx = spec.B, spec.dB, spec.B_x
    else:
        Bt = Btilde
        dBt = tuple(tuple(fd_jacobian(b) for b in row) for row in Btilde)
        Btx = tuple(tuple(fd_x(b) for b in row) for row in Btilde)

    def scaled(fun):
        return lambda U, x, t: float(t) * np.asarray(fun(U, x, t))

    return dataclasses.replace(
        spec, name=f"selfsimilar({spec.name})",
        B=tuple(tuple(scaled(b) for b in row) for row in Bt),
        dB=tuple(tuple(scaled(b) for b in row) for row in dBt),
        B_x=tuple(tuple(scaled(b) for b in row) for row in Btx),
        params=dict(spec.params, selfsimilar=True))


# ---------------------------------------------------------------------------
# small verification systems

def make_negated_entropy() -> SystemSpec:
    """Burgers with the concave entropy -u^2/2 (violates H3 and HP1)."""
    base = make_scalar_sanity()
    return dataclasses.replace(
        base, name="toy_negated_entropy",
        eta=lambda U, x, t: -0.5 * _as_state(U)[..., 0] ** 2,
        q=(lambda U, x, t: -_as_state(U)[..., 0] ** 3 / 3.0,),
        G=lambda U, x, t: -_as_state(U),
        grad_eta=lambda U, x, t: -_as_state(U),
        hess_eta=lambda U, x, t: -np.ones(np.shape(U)[:-1] + (1, 1)),
        grad_q=(lambda U, x, t: -_as_state(U) ** 2,),
        dG=lambda U, x, t: -np.ones(np.shape(U)[:-1] + (1, 1)))


def make_negative_viscosity() -> SystemSpec:
    """Burgers with anti-diffusion B = -1 (violates HP1)."""
    base = make_scalar_sanity()
    return dataclasses.replace(
        base, name="toy_negative_viscosity",
        B=((lambda U, x, t: -np.ones(np.shape(U)[:-1] + (1, 1)),),))


def make_cubic_A() -> SystemSpec:
    """Homogeneous scalar law with nonlinear conserved map A(u) = u + u^3,
    entropy u^2/2 + 3u^4/4, multiplier G = u and Burgers flux."""
    base = make_scalar_sanity()

    def s(U):
        return _as_state(U)[..., 0]

    def col(v):
        return v[..., None]

    def mat(v):
        return v[..., None, None]

    return dataclasses.replace(
        base, name="toy_cubic_A", A_identity=False,
        A=lambda U, x, t: col(s(U) + s(U) ** 3),
        dA=lambda U, x, t: mat(1.0 + 3.0 * s(U) ** 2),
        d2A=lambda U, x, t: (6.0 * s(U))[..., None, None, None],
        eta=lambda U, x, t: 0.5 * s(U) ** 2 + 0.75 * s(U) ** 4,
        grad_eta=lambda U, x, t: col(s(U) + 3.0 * s(U) ** 3),
        hess_eta=lambda U, x, t: mat(1.0 + 9.0 * s(U) ** 2))


def make_weighted_burgers(amplitude=0.3, t_amplitude=0.1, mean=2.0) -> SystemSpec:
    """Fully inhomogeneous scalar law with weight a(x, t) = mean +
    amplitude sin x + t_amplitude sin t:

        (a u)_t + (a u^2 / 2)_x = eps (a u_x)_x

    with entropy a^2 u^2 / 2, multiplier a u and flux a^2 u^3 / 3.
    """
    m0, b, c = float(mean), float(amplitude), float(t_amplitude)
    if m0 - abs(b) - abs(c) <= 0:
        raise ValueError("weight must stay positive")

    def a(x, t):
        return m0 + b * np.sin(x) + c * np.sin(t)

    def ax(x, t):
        return b * np.cos(x)

    def at(x, t):
        return c * np.cos(t) + 0.0 * x

    def parts(U, x):
        u = _as_state(U)[..., 0]
        return u, _bshape(x, U)

    def col(v):
        return v[..., None]

    def mat(v):
        return v[..., None, None]

    def A(U, x, t):
        u, xb = parts(U, x)
        return col(a(xb, t) * u)

    def f(U, x, t):
        u, xb = parts(U, x)
        return col(0.5 * a(xb, t) * u * u)

    def eta(U, x, t):
        u, xb = parts(U, x)
        return 0.5 * a(xb, t) ** 2 * u * u

    def q(U, x, t):
        u, xb = parts(U, x)
        return a(xb, t) ** 2 * u ** 3 / 3.0

    def G(U, x, t):
        u, xb = parts(U, x)
        return col(a(xb, t) * u)

    def B(U, x, t):
        u, xb = parts(U, x)
        return mat(a(xb, t) + 0.0 * u)

    def P(U, x, t):
        return _zeros(U, 1)

    def zero3(U, x, t):
        return _zeros(U, 1, 1, 1)

    return SystemSpec(
        name="toy_weighted_burgers", n=1, A=A, f=(f,), P=P, eta=eta, q=(q,), G=G,
        B=((B,),),
        dA=lambda U, x, t: mat(a(parts(U, x)[1], t) + 0.0 * parts(U, x)[0]),
        d2A=zero3,
        A_t=lambda U, x, t: col(at(parts(U, x)[1], t) * parts(U, x)[0]),
        df=(lambda U, x, t: mat(a(parts(U, x)[1], t) * parts(U, x)[0]),),
        f_x=(lambda U, x, t: col(0.5 * ax(parts(U, x)[1], t) * parts(U, x)[0] ** 2),),
        grad_eta=lambda U, x, t: col(a(parts(U, x)[1], t) ** 2 * parts(U, x)[0]),
        hess_eta=lambda U, x, t: mat(a(parts(U, x)[1], t) ** 2 + 0.0 * parts(U, x)[0]),
        eta_t=lambda U, x, t: a(parts(U, x)[1], t) * at(parts(U, x)[1], t) * parts(U, x)[0] ** 2,
        grad_q=(lambda U, x, t: col(a(parts(U, x)[1], t) ** 2 * parts(U, x)[0] ** 2),),
        q_x=(lambda U, x, t: 2.0 * a(parts(U, x)[1], t) * ax(parts(U, x)[1], t)
             * parts(U, x)[0] ** 3 / 3.0,),
        dG=lambda U, x, t: mat(a(parts(U, x)[1], t) + 0.0 * parts(U, x)[0]),
        d2G=zero3,
        G_t=lambda U, x, t: col(at(parts(U, x)[1], t) * parts(U, x)[0]),
        G_x=(lambda U, x, t: col(ax(parts(U, x)[1], t) * parts(U, x)[0]),),
        dG_x=(lambda U, x, t: mat(ax(parts(U, x)[1], t) + 0.0 * parts(U, x)[0]),),
        dB=((zero3,),),
        B_x=((lambda U, x, t: mat(ax(parts(U, x)[1], t) + 0.0 * parts(U, x)[0]),),),
        state_names=("u",), A_identity=False,
        state_box=(np.array([-2.0]), np.array([2.0])),
        params={"a_mean": m0, "a_amplitude": b, "a_t_amplitude": c},
    )


SYSTEM_KINDS = ("scalar_sanity", "duct_gas", "memory_scalar", "selfsimilar",
                "cubic_A", "weighted_burgers", "negated_entropy",
                "negative_viscosity")


def system_from_config(block: dict) -> SystemSpec:
    """Build a system from the ``system`` block of a run configuration."""
    kind = block["kind"]
    if kind == "scalar_sanity":
        return make_scalar_sanity()
    if kind == "duct_gas":
        prof = block.get("a_profile", {})
        return make_duct_gas(
            kappa=block.get("kappa", 1.0), gamma=block.get("gamma", 2.0),
            a_profile=AProfile.preset(prof.get("kind", "sin"),
                                      prof.get("amplitude", 0.3),
                                      prof.get("mean", 2.0)),
            rho_min=block.get("rho_min", 1e-8))
    if kind == "memory_scalar":
        kern = block.get("kernel", {})
        rate = float(kern.get("rate", 1.0))
        return make_memory_scalar(
            flux=block.get("flux", "burgers"),
            kernel=lambda s: np.exp(-rate * s),
            T=block.get("kernel_T", 10.0), dt=block.get("kernel_dt", 1e-3))
    if kind == "selfsimilar":
        inner = dict(block.get("base", {"kind": "scalar_sanity"}))
        return make_selfsimilar(system_from_config(inner))
    if kind == "cubic_A":
        return make_cubic_A()
    if kind == "weighted_burgers":
        return make_weighted_burgers(block.get("amplitude", 0.3),
                                     block.get("t_amplitude", 0.1))
    if kind == "negated_entropy":
        return make_negated_entropy()
    if kind == "negative_viscosity":
        return make_negative_viscosity()
    raise ValueError(f"unknown system kind {kind!r}")


def sample_states(spec: SystemSpec, rng, size, lo=None, hi=None):
    """Uniform samples in a box, keeping only admissible states."""
    lo = np.asarray(spec.state_box[0] if lo is None else lo, dtype=float)
    hi = np.asarray(spec.state_box[1] if hi is None else hi, dtype=float)
    out = []
    have = 0
    while have < size:
        cand = rng.uniform(lo, hi, size=(max(size - have, 16) * 2, spec.n))
        if spec.admissible is not None:
            cand = cand[np.asarray(spec.admissible(cand))]
        out.append(cand)
        have += len(cand)
    return np.concatenate(out)[:size]


def sample_shell(spec: SystemSpec, rng, size, r_lo, r_hi, max_tries=200):
    """Admissible states with ``r_lo <= |U| <= r_hi``, uniform direction."""
    out = []
    have = 0
    for _ in range(max_tries):
        m = max(size - have, 16) * 4
        d = rng.normal(size=(m, spec.n))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        rad = rng.uniform(r_lo, r_hi, size=(m, 1))
        cand = d * rad
        if spec.admissible is not None:
            cand = cand[np.asarray(spec.admissible(cand))]
        out.append(cand)
        have += len(cand)
        if have >= size:
            break
    res = np.concatenate(out) if out else np.empty((0, spec.n))
    return res[:size]


__all__ = [
    "SystemSpec", "HistoryBuffer", "AProfile", "eval_R", "eval_Z", "invert_A",
    "synthesize_derivatives", "derivative_consistency", "fd_jacobian", "fd_x",
    "fd_t", "make_scalar_sanity", "make_duct_gas", "resolvent_kernel",
    "make_memory_scalar", "make_selfsimilar", "make_negated_entropy",
    "make_negative_viscosity", "make_cubic_A", "make_weighted_burgers",
    "system_from_config", "sample_states", "sample_shell", "SYSTEM_KINDS",
]
