"""Periodic method-of-lines solver in one space dimension.

The solver evolves the conserved variable ``V = A(U, x, t)`` cellwise and
recovers ``U`` by Newton inversion after every stage, so explicit time
dependence of ``A`` is handled by the re-inversion rather than by a separate
``A_t`` term.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InversionError, StepError
from .systems import SystemSpec, invert_A

log = logging.getLogger(__name__)

SCHEMES = ("central", "llf")
INTEGRATORS = ("ssp-rk2", "rk4")
_TINY = 1e-300


@dataclass(frozen=True)
class Grid1D:
    N: int
    L: float = 2.0 * np.pi

    def __post_init__(self):
        if self.N < 8:
            raise ValueError(f"grid needs N >= 8 cells, got {self.N}")
        if not self.L > 0:
            raise ValueError("domain length must be positive")

    @property
    def dx(self):
        return self.L / self.N

    @property
    def x(self):
        return (np.arange(self.N) + 0.5) * self.dx

    @property
    def x_half(self):
        """Right interfaces ``x_{i+1/2}``."""
        return (np.arange(self.N) + 1.0) * self.dx


@dataclass
class Field:
    grid: Grid1D
    U: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        if self.U.ndim == 1:
            self.U = self.U[:, None]
        if self.U.shape[0] != self.grid.N:
            raise ValueError("field does not match the grid")


@dataclass
class SolverConfig:
    epsilon: float = 0.0
    cfl: float = 0.4
    scheme: str = "central"
    integrator: str = "ssp-rk2"
    t_end: float = 1.0
    newton_tol: float = 1e-12
    newton_iters: int = 50
    snapshots: Optional[Sequence[float]] = None
    n_snapshots: int = 11
    dt: Optional[float] = None
    dt_cap: Optional[float] = None
    raise_errors: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")

    def snapshot_times(self):
        if self.snapshots is not None:
            ts = sorted(float(s) for s in self.snapshots if 0 <= s <= self.t_end)
            if not ts or ts[0] > 0:
                ts = [0.0] + ts
            if ts[-1] < self.t_end:
                ts.append(float(self.t_end))
            return np.array(ts)
        if self.t_end == 0:
            return np.array([0.0])
        return np.linspace(0.0, self.t_end, max(self.n_snapshots, 2))


@dataclass
class Trajectory:
    grid: Grid1D
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    failure: Optional[dict] = None
    hook_output: list = field(default_factory=list)

    @property
    def ok(self):
        return self.failure is None

    def field_at(self, k):
        return Field(self.grid, self.states[k], self.times[k])

    def array(self):
        return np.stack(self.states)


# ---------------------------------------------------------------------------
# spatial operator

def _spectral_radius(spec, U, x, t):
    """Per-cell spectral radius of ``dA^{-1} df``."""
    J = np.asarray(spec.df[0](U, x, t))
    if not spec.A_identity:
        J = np.linalg.solve(spec.dA(U, x, t), J)
    J = np.broadcast_to(J, U.shape + (U.shape[-1],))
    if J.shape[-1] == 1:
        return np.abs(J[..., 0, 0])
    return np.max(np.abs(np.linalg.eigvals(J)), axis=-1)


def _checked(spec, U):
    try:
        spec.check_state(U)
    except DomainError as exc:
        raise DomainError(str(exc), component=exc.component, index=exc.index) from None


def semidiscrete_rhs(spec: SystemSpec, field: Field, epsilon: float, scheme: str = "central"):
    """``dV/dt`` per cell for the periodic semi-discretisation.

    Convective fluxes use central averages (``central``) or the local
    Lax-Friedrichs flux (``llf``); the viscous term uses arithmetic-mean
    interface matrices evaluated at the interface position.
    """
    g = field.grid
    U, t, x, dx = field.U, field.t, g.x, g.dx
    _checked(spec, U)
    F = np.asarray(spec.f[0](U, x, t))
    Up = np.roll(U, -1, axis=0)
    Fp = np.roll(F, -1, axis=0)
    flux = 0.5 * (F + Fp)
    if scheme == "llf":
        V = np.asarray(spec.A(U, x, t))
        lam = _spectral_radius(spec, U, x, t)
        a = np.maximum(lam, np.roll(lam, -1))
        flux = flux - 0.5 * a[:, None] * (np.roll(V, -1, axis=0) - V)
    elif scheme != "central":
        raise ValueError(f"unknown scheme {scheme!r}")
    rhs = -(flux - np.roll(flux, 1, axis=0)) / dx - np.asarray(spec.P(U, x, t))
    if epsilon > 0 and spec.B is not None:
        xh = g.x_half
        Bb = spec.B[0][0]
        Bh = 0.5 * (np.asarray(Bb(U, xh, t)) + np.asarray(Bb(Up, xh, t)))
        Bh = np.broadcast_to(Bh, U.shape + (U.shape[-1],))
        vflux = np.einsum("...ij,...j->...i", Bh, (Up - U) / dx)
        rhs = rhs + epsilon * (vflux - np.roll(vflux, 1, axis=0)) / dx
    return rhs


def stable_dt(spec: SystemSpec, field: Field, epsilon: float, cfl: float = 0.4,
              dt_cap: Optional[float] = None):
    """``cfl * min(dx / lambda_max, dx^2 / (2 eps beta_max))``.

    ``lambda_max`` is the largest spectral radius of ``dA^{-1} df`` and
    ``beta_max`` the largest spectral norm of ``dA^{-1} B`` over the cells.
    When both limits are infinite the step falls back to ``dt_cap``.
    """
    g = field.grid
    U, x, t = field.U, g.x, field.t
    lam = float(np.max(_spectral_radius(spec, U, x, t)))
    adv = g.dx / lam if lam > 0 else np.inf
    diff = np.inf
    if epsilon > 0 and spec.B is not None:
        Bm = np.asarray(spec.B[0][0](U, x, t))
        Bm = np.broadcast_to(Bm, U.shape + (U.shape[-1],))
        if not spec.A_identity:
            Bm = np.linalg.solve(spec.dA(U, x, t), Bm)
        beta = float(np.max(np.linalg.norm(Bm, ord=2, axis=(-2, -1))))
        diff = g.dx ** 2 / (2.0 * epsilon * beta + _TINY) if beta > 0 else np.inf
    dt = cfl * min(adv, diff)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    if not np.isfinite(dt):
        raise ValueError("no finite stable step; set dt_cap")
    return dt


# ---------------------------------------------------------------------------
# time stepping

def _recover(spec, V, x, t, guess, cfg):
    try:
        return invert_A(spec, V, x, t, guess, tol=cfg.newton_tol, max_iter=cfg.newton_iters)
    except InversionError as exc:
        raise StepError(f"Newton inversion failed at t={t:.6g}, cell {exc.index}: {exc}",
                        t=t, index=exc.index) from exc


def time_step(spec: SystemSpec, field: Field, dt: float, config: SolverConfig) -> Field:
    """Advance ``V = A(U, x, t)`` by one explicit step of size ``dt``."""
    g = field.grid
    x, t0, U0 = g.x, field.t, field.U
    eps, scheme = config.epsilon, config.scheme
    hist = spec.history
    if hist is not None:
        hist.freeze(t0)

    def L(U, t):
        return semidiscrete_rhs(spec, Field(g, U, t), eps, scheme)

    V0 = np.asarray(spec.A(U0, x, t0))
    t1 = t0 + dt
    if config.integrator == "ssp-rk2":
        V1 = V0 + dt * L(U0, t0)
        U1 = _recover(spec, V1, x, t1, U0, config)
        V = 0.5 * V0 + 0.5 * (V1 + dt * L(U1, t1))
        U = _recover(spec, V, x, t1, U1, config)
    elif config.integrator == "rk4":
        th = t0 + 0.5 * dt
        k1 = L(U0, t0)
        Ua = _recover(spec, V0 + 0.5 * dt * k1, x, th, U0, config)
        k2 = L(Ua, th)
        Ub = _recover(spec, V0 + 0.5 * dt * k2, x, th, Ua, config)
        k3 = L(Ub, th)
        Uc = _recover(spec, V0 + dt * k3, x, t1, Ub, config)
        k4 = L(Uc, t1)
        V = V0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        U = _recover(spec, V, x, t1, Uc, config)
    else:
        raise ValueError(f"unknown integrator {config.integrator!r}")
    _checked(spec, U)
    if not np.all(np.isfinite(U)):
        bad = int(np.argwhere(~np.all(np.isfinite(U), axis=-1))[0][0])
        raise StepError(f"non-finite state at t={t1:.6g}, cell {bad}", t=t1, index=bad)
    if hist is not None:
        hist.append(t1, U[:, 0])
    return Field(g, U, t1)


def solve(spec: SystemSpec, initial: Field, config: SolverConfig,
          hooks: Sequence[Callable] = ()) -> Trajectory:
    """Integrate to ``config.t_end`` landing exactly on every snapshot time.

    A failing step ends the run; the partial trajectory carries the failure
    record unless ``config.raise_errors`` is set.
    """
    g = initial.grid
    traj = Trajectory(grid=g)
    targets = config.snapshot_times()
    f = Field(g, initial.U.copy(), float(initial.t))
    if spec.history is not None:
        spec.history.reset(grid_x=g.x, period=g.L)
        spec.history.append(f.t, f.U[:, 0])

    def record(fl):
        traj.times.append(fl.t)
        traj.states.append(fl.U.copy())
        for h in hooks:
            traj.hook_output.append(h(fl))

    cap = config.dt_cap if config.dt_cap is not None else max(config.t_end, 1.0) / 10.0
    record(f)
    try:
        _checked(spec, f.U)
        for target in targets[1:]:
            while f.t < target:
                dt = config.dt if config.dt is not None else stable_dt(
                    spec, f, config.epsilon, config.cfl, cap)
                remaining = target - f.t
                if remaining <= dt * (1.0 + 1e-9):
                    dt = remaining
                f = time_step(spec, f, dt, config)
                if abs(f.t - target) <= 1e-12 * max(1.0, abs(target)):
                    f.t = float(target)
                traj.dts.append(dt)
            record(f)
    except (StepError, DomainError, InversionError, FloatingPointError) as exc:
        if config.raise_errors:
            raise
        traj.failure = {"type": type(exc).__name__, "message": str(exc), "t": f.t,
                        "index": getattr(exc, "index", None)}
        log.warning("solve aborted at t=%.6g: %s", f.t, exc)
    return traj


# ---------------------------------------------------------------------------
# manufactured solutions

@dataclass
class ManufacturedTarget:
    """Smooth periodic field ``Ubar*(x, t)`` with its first derivatives and
    second space derivative, each returning shape ``(..., n)``."""

    U: Callable
    U_t: Callable
    U_x: Callable
    U_xx: Callable
    label: str = "target"


def traveling_sine(base, amplitude, speed=1.0, k=1, label=None):
    """``U* = base + amplitude * sin(k (x - speed t))`` componentwise."""
    b = np.atleast_1d(np.asarray(base, dtype=float))
    a = np.atleast_1d(np.asarray(amplitude, dtype=float)) * np.ones_like(b)

    def ph(x, t):
        return k * (np.asarray(x, dtype=float) - speed * t)

    return ManufacturedTarget(
        U=lambda x, t: b + a * np.sin(ph(x, t))[..., None],
        U_t=lambda x, t: -k * speed * a * np.cos(ph(x, t))[..., None],
        U_x=lambda x, t: k * a * np.cos(ph(x, t))[..., None],
        U_xx=lambda x, t: -k * k * a * np.sin(ph(x, t))[..., None],
        label=label or f"sine(base={b.tolist()}, amp={a.tolist()}, c={speed}, k={k})")


def phased_sine(base, amplitude, phase, speed=1.0, k=1):
    """Componentwise ``base_i + amplitude_i sin(k(x - speed t) + phase_i)``."""
    b = np.asarray(base, dtype=float)
    a = np.asarray(amplitude, dtype=float) * np.ones_like(b)
    p = np.asarray(phase, dtype=float) * np.ones_like(b)

    def arg(x, t):
        return k * (np.asarray(x, dtype=float)[..., None] - speed * t) + p

    return ManufacturedTarget(
        U=lambda x, t: b + a * np.sin(arg(x, t)),
        U_t=lambda x, t: -k * speed * a * np.cos(arg(x, t)),
        U_x=lambda x, t: k * a * np.cos(arg(x, t)),
        U_xx=lambda x, t: -k * k * a * np.sin(arg(x, t)),
        label=f"phased_sine(base={b.tolist()}, amp={a.tolist()}, phase={p.tolist()}, c={speed})")


def manufactured_residual(spec: SystemSpec, target: ManufacturedTarget, epsilon: float):
    """``F(x, t)`` making ``target`` an exact solution once subtracted from P:

        F = d_t A(U*) + d_x f(U*) + P(U*) - eps d_x (B(U*) d_x U*)
    """
    def F(x, t):
        x = np.asarray(x, dtype=float)
        U = target.U(x, t)
        Ut, Ux = target.U_t(x, t), target.U_x(x, t)
        mv = lambda M, v: np.einsum("...ij,...j->...i", M, v)
        out = (mv(spec.dA(U, x, t), Ut) + spec.A_t(U, x, t)
               + mv(spec.df[0](U, x, t), Ux) + spec.f_x[0](U, x, t)
               + np.asarray(spec.P(U, x, t)))
        if epsilon > 0 and spec.B is not None:
            Uxx = target.U_xx(x, t)
            B = np.asarray(spec.B[0][0](U, x, t))
            dBx = (np.einsum("...ijk,...k->...ij", spec.dB[0][0](U, x, t), Ux)
                   + spec.B_x[0][0](U, x, t))
            out = out - epsilon * (mv(dBx, Ux) + mv(np.broadcast_to(B, Uxx.shape + Uxx.shape[-1:]), Uxx))
        return out
    return F


def manufactured_forcing(spec: SystemSpec, target: ManufacturedTarget, epsilon: float) -> SystemSpec:
    """Copy of ``spec`` with ``P`` replaced by ``P - F`` so that ``target``
    solves the forced system exactly at viscosity ``epsilon``."""
    F = manufactured_residual(spec, target, epsilon)
    P0 = spec.P

    def P(U, x, t):
        xb = np.broadcast_to(np.asarray(x, dtype=float), np.shape(U)[:-1])
        return np.asarray(P0(U, x, t)) - F(xb, t)

    return dataclasses.replace(
        spec, P=P, name=f"manufactured({spec.name})",
        params=dict(spec.params, manufactured=target.label, forcing_epsilon=epsilon))


# ---------------------------------------------------------------------------
# initial data

def _per_component(val, n):
    arr = np.atleast_1d(np.asarray(val, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ValueError(f"expected {n} components, got {arr.size}")
    return arr


def periodic_bump(x, center, width, L):
    """Smooth periodic Gaussian bump of unit height."""
    d = (np.asarray(x) - center + 0.5 * L) % L - 0.5 * L
    return np.exp(-0.5 * (d / width) ** 2)


def initial_data(preset: dict, grid: Grid1D, n: int) -> np.ndarray:
    """Cell values for a named preset.

    Presets: ``constant`` (value), ``sine`` (base, amplitude, k, phase),
    ``gaussian-bump`` (base, amplitude, center, width), ``two-state-smooth``
    (left, right, width).  Vector parameters are per component.
    """
    kind = preset.get("kind", "constant")
    x = grid.x[:, None]
    L = grid.L
    if kind == "constant":
        return np.broadcast_to(_per_component(preset.get("value", 0.0), n), (grid.N, n)).copy()
    if kind == "sine":
        b = _per_component(preset.get("base", 0.0), n)
        a = _per_component(preset.get("amplitude", 1.0), n)
        ph = _per_component(preset.get("phase", 0.0), n)
        k = preset.get("k", 1)
        return b + a * np.sin(2 * np.pi * k * x / L + ph)
    if kind == "gaussian-bump":
        b = _per_component(preset.get("base", 0.0), n)
        a = _per_component(preset.get("amplitude", 1.0), n)
        c = float(preset.get("center", 0.5 * L))
        w = float(preset.get("width", 0.05 * L))
        return b + a * periodic_bump(x, c, w, L)
    if kind == "two-state-smooth":
        lft = _per_component(preset.get("left", 0.0), n)
        rgt = _per_component(preset.get("right", 1.0), n)
        w = float(preset.get("width", 0.05 * L))
        s = 0.5 * (np.tanh((x - 0.25 * L) / w) - np.tanh((x - 0.75 * L) / w))
        return lft + (rgt - lft) * s
    raise ValueError(f"unknown initial data preset {kind!r}")


__all__ = [
    "Grid1D", "Field", "SolverConfig", "Trajectory", "semidiscrete_rhs",
    "stable_dt", "time_step", "solve", "ManufacturedTarget", "traveling_sine",
    "phased_sine", "manufactured_residual", "manufactured_forcing",
    "initial_data", "periodic_bump", "SCHEMES", "INTEGRATORS",
]
