"""Relative entropy, relative fluxes and the quadratic remainders.

All functions broadcast over leading axes: ``U`` and ``Ubar`` have shape
``(..., n)``.  Quantities indexed by a space direction come back as tuples of
length ``spec.d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvexityViolationError
from .systems import SystemSpec, eval_R, sample_shell


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _matvec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _pair(U, Ubar):
    U = np.asarray(U, dtype=float)
    Ubar = np.asarray(Ubar, dtype=float)
    shape = np.broadcast_shapes(U.shape, Ubar.shape)
    return np.broadcast_to(U, shape), np.broadcast_to(Ubar, shape)


def _w(spec, U, Ubar, x, t):
    """``(dA(Ubar))^{-1} (A(U) - A(Ubar))``; equals ``U - Ubar`` when A = U."""
    dA = spec.A(U, x, t) - spec.A(Ubar, x, t)
    if spec.A_identity:
        return dA
    J = np.asarray(spec.dA(Ubar, x, t))
    J = np.broadcast_to(J, dA.shape + (dA.shape[-1],))
    # LinAlgError propagates on singular dA(Ubar)
    return np.linalg.solve(J, dA[..., None])[..., 0]


def rel_entropy(spec: SystemSpec, U, Ubar, x, t):
    """``eta(U|Ubar) = eta - eta_bar - G_bar . (A - A_bar)``."""
    U, Ubar = _pair(U, Ubar)
    return (spec.eta(U, x, t) - spec.eta(Ubar, x, t)
            - _dot(spec.G(Ubar, x, t), spec.A(U, x, t) - spec.A(Ubar, x, t)))


def rel_entropy_flux(spec: SystemSpec, U, Ubar, x, t):
    """``q_a(U|Ubar) = q_a - q_a_bar - G_bar . (f_a - f_a_bar)`` per direction."""
    U, Ubar = _pair(U, Ubar)
    Gb = spec.G(Ubar, x, t)
    return tuple(spec.q[a](U, x, t) - spec.q[a](Ubar, x, t)
                 - _dot(Gb, spec.f[a](U, x, t) - spec.f[a](Ubar, x, t))
                 for a in range(spec.d))


def rel_flux(spec: SystemSpec, U, Ubar, x, t):
    """``f_a(U|Ubar) = f_a - f_a_bar - df_a_bar w`` with ``w = dA_bar^{-1}(A - A_bar)``."""
    U, Ubar = _pair(U, Ubar)
    w = _w(spec, U, Ubar, x, t)
    return tuple(spec.f[a](U, x, t) - spec.f[a](Ubar, x, t)
                 - _matvec(spec.df[a](Ubar, x, t), w) for a in range(spec.d))


def rel_multiplier(spec: SystemSpec, U, Ubar, x, t):
    """``G(U|Ubar) = G - G_bar - dG_bar w``."""
    U, Ubar = _pair(U, Ubar)
    w = _w(spec, U, Ubar, x, t)
    return spec.G(U, x, t) - spec.G(Ubar, x, t) - _matvec(spec.dG(Ubar, x, t), w)


def rel_remainders(spec: SystemSpec, U, Ubar, x, t):
    """Quadratic remainders ``(phi, G1, G2)``.

    phi = w - (U - Ubar)
    G1  = dG(U) - dG(Ubar) - d2G(Ubar) . w
    G2  = G_x(U) - G_x(Ubar) - dG_x(Ubar) w      (one per direction)
    """
    U, Ubar = _pair(U, Ubar)
    w = _w(spec, U, Ubar, x, t)
    phi = w - (U - Ubar)
    G1 = (spec.dG(U, x, t) - spec.dG(Ubar, x, t)
          - np.einsum("...ijk,...k->...ij", spec.d2G(Ubar, x, t), w))
    G2 = tuple(spec.G_x[a](U, x, t) - spec.G_x[a](Ubar, x, t)
               - _matvec(spec.dG_x[a](Ubar, x, t), w) for a in range(spec.d))
    return phi, G1, G2


@dataclass
class RelativeQuantities:
    rel_eta: np.ndarray
    rel_q: tuple
    rel_f: tuple
    rel_G: np.ndarray
    phi: np.ndarray
    G1: np.ndarray
    G2: tuple

    def max_abs(self):
        """Largest absolute entry of every field, keyed by field name."""
        def m(v):
            if isinstance(v, tuple):
                return max(float(np.max(np.abs(a))) for a in v)
            return float(np.max(np.abs(v)))
        return {k: m(getattr(self, k)) for k in
                ("rel_eta", "rel_q", "rel_f", "rel_G", "phi", "G1", "G2")}


def relative_quantities(spec: SystemSpec, U, Ubar, x, t) -> RelativeQuantities:
    phi, G1, G2 = rel_remainders(spec, U, Ubar, x, t)
    return RelativeQuantities(
        rel_eta=rel_entropy(spec, U, Ubar, x, t),
        rel_q=rel_entropy_flux(spec, U, Ubar, x, t),
        rel_f=rel_flux(spec, U, Ubar, x, t),
        rel_G=rel_multiplier(spec, U, Ubar, x, t),
        phi=phi, G1=G1, G2=G2)


def quadratic_form(spec: SystemSpec, Ubar, delta, x, t):
    """``1/2 delta^T (hess eta - G . d2A)(Ubar) delta``, the second-order
    coefficient of ``eta(Ubar + s delta | Ubar)``."""
    Ubar = np.asarray(Ubar, dtype=float)
    H = np.asarray(spec.hess_eta(Ubar, x, t)) - np.einsum(
        "...i,...ijk->...jk", spec.G(Ubar, x, t), spec.d2A(Ubar, x, t))
    return 0.5 * np.einsum("...j,...jk,...k->...", delta, H, delta)


# ---------------------------------------------------------------------------
# empirical bounds

@dataclass
class LemmaAuditConfig:
    p: float = 2.0
    n_bar: int = 48
    n_per_shell: int = 96
    U_max: float = 64.0
    stabilize_tol: float = 0.05
    seed: int = 0
    x: float = 0.7
    t: float = 0.0
    separation: float = 1e-8


@dataclass
class LemmaAuditReport:
    samples: int
    M: float
    p: float
    c1: float
    c1_prime: float
    c2: float
    c2_prime: float
    c3: float
    r1: float
    r2: float
    r1_stabilized: bool
    r2_stabilized: bool
    source_bounds: dict = field(default_factory=dict)
    shells: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        vals = (self.c1, self.c1_prime, self.c2, self.c2_prime, self.c3)
        return all(np.isfinite(v) and v > 0 for v in vals) and not self.violations

    def to_dict(self):
        return {
            "samples": self.samples, "M": self.M, "p": self.p,
            "c1": self.c1, "c1_prime": self.c1_prime, "c2": self.c2,
            "c2_prime": self.c2_prime, "c3": self.c3, "r1": self.r1,
            "r2": self.r2, "r1_stabilized": self.r1_stabilized,
            "r2_stabilized": self.r2_stabilized,
            "source_bounds": self.source_bounds, "passed": self.passed,
            "violations": self.violations,
        }


def _stable_radius(mins, radii, tol):
    """First outer radius after which consecutive shell minima differ by less
    than ``tol`` relatively."""
    for k in range(1, len(mins)):
        a, b = mins[k - 1], mins[k]
        if np.isfinite(a) and np.isfinite(b) and abs(b - a) <= tol * max(abs(a), 1e-300):
            return radii[k - 1], True
    # no stabilisation: fall back to the inner edge of the outermost shell
    return (radii[-2] if len(radii) > 1 else radii[-1]), False


def lemma_bounds_audit(spec: SystemSpec, sampler: Optional[Callable] = None,
                       M: float = 1.0, config: Optional[LemmaAuditConfig] = None):
    """Worst-case sample ratios for the relative entropy bounds.

    ``sampler(rng, size, r_lo, r_hi)`` draws admissible states with norm in
    ``[r_lo, r_hi]``; it defaults to uniform directions and radii.  Reference
    states are drawn from the ball of radius ``M`` and the test states from
    shells ``[M 2^(k-1), M 2^k]`` up to ``config.U_max``.
    """
    cfg = config or LemmaAuditConfig()
    rng = np.random.default_rng(cfg.seed)
    if sampler is None:
        def sampler(g, size, lo, hi):
            return sample_shell(spec, g, size, lo, hi)
    x, t = cfg.x, cfg.t

    Ubar = sampler(rng, cfg.n_bar, 0.0, M)
    if len(Ubar) == 0:
        raise ValueError(f"no admissible reference states in the ball of radius {M}")
    radii = []
    r = M
    while True:
        r *= 2.0
        radii.append(r)
        if r >= cfg.U_max:
            break
    los = [0.0] + radii[:-1]

    R_active = spec.P is not None
    shells = []
    per_shell = []
    violations = []
    total = 0
    src_max = {"G_minus_Gbar_dot_R": 0.0, "Rbar_dot_relG": 0.0}
    for lo, hi in zip(los, radii):
        Us = sampler(rng, cfg.n_per_shell, lo, hi)
        if len(Us) == 0:
            violations.append({"shell": [lo, hi], "reason": "empty shell"})
            continue
        U = np.repeat(Us, len(Ubar), axis=0)
        Ub = np.tile(Ubar, (len(Us), 1))
        dist = np.linalg.norm(U - Ub, axis=-1)
        keep = dist > cfg.separation
        U, Ub, dist = U[keep], Ub[keep], dist[keep]
        total += len(U)
        reta = rel_entropy(spec, U, Ub, x, t)
        bad = reta <= 0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ConvexityViolationError(
                f"{spec.name}: relative entropy {reta[i]:.3e} <= 0 at U={U[i].tolist()}, "
                f"Ubar={Ub[i].tolist()}; the entropy is not strictly convex in A (H3)",
                witness={"U": U[i].tolist(), "Ubar": Ub[i].tolist(),
                         "rel_eta": float(reta[i])})
        dA = np.linalg.norm(spec.A(U, x, t) - spec.A(Ub, x, t), axis=-1)
        eta_U = np.asarray(spec.eta(U, x, t))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio1 = reta / dA ** 2
            ratio2 = np.where(eta_U > 0, reta / eta_U, np.inf)
            ratio_q = reta / dist ** 2
            ratio_p = reta / dist ** cfg.p
            fnorm = np.sqrt(sum(np.sum(fa ** 2, axis=-1)
                                for fa in rel_flux(spec, U, Ub, x, t)))
            ratio3 = fnorm / reta
        for name, arr in (("c1", ratio1), ("c2", ratio2), ("c1_prime", ratio_q),
                          ("c3", ratio3)):
            nonfinite = ~np.isfinite(arr) & ~((name == "c2") & (eta_U <= 0))
            if np.any(nonfinite):
                i = int(np.argmax(nonfinite))
                violations.append({"ratio": name, "U": U[i].tolist(),
                                   "Ubar": Ub[i].tolist()})
        if R_active:
            Rd = eval_R(spec, U, x, t) - eval_R(spec, Ub, x, t)
            gdiff = spec.G(U, x, t) - spec.G(Ub, x, t)
            s1 = np.abs(_dot(gdiff, Rd)) / reta
            s2 = np.abs(_dot(eval_R(spec, Ub, x, t), rel_multiplier(spec, U, Ub, x, t))) / reta
            src_max["G_minus_Gbar_dot_R"] = max(src_max["G_minus_Gbar_dot_R"], float(np.max(s1)))
            src_max["Rbar_dot_relG"] = max(src_max["Rbar_dot_relG"], float(np.max(s2)))
        norms = np.linalg.norm(U, axis=-1)
        per_shell.append((norms, ratio1, ratio2, ratio_q, ratio_p, ratio3))
        shells.append({
            "r_lo": lo, "r_hi": hi, "count": int(len(U)),
            "min_rel_over_dA2": float(np.min(ratio1)),
            "min_rel_over_eta": float(np.min(ratio2)),
            "min_rel_over_dU2": float(np.min(ratio_q)),
            "min_rel_over_dUp": float(np.min(ratio_p)),
            "max_relf_over_rel": float(np.max(ratio3)),
        })

    his = [s["r_hi"] for s in shells]
    r1, ok1 = _stable_radius([s["min_rel_over_eta"] for s in shells], his, cfg.stabilize_tol)
    r2, ok2 = _stable_radius([s["min_rel_over_dUp"] for s in shells], his, cfg.stabilize_tol)

    def agg(idx, sel, fn):
        vals = [fn(ps[idx][sel(ps[0])]) for ps in per_shell if np.any(sel(ps[0]))]
        return float(fn(np.array(vals))) if vals else float("nan")

    c1 = agg(1, lambda n: n <= r1, np.min)
    c2 = agg(2, lambda n: n >= r1, np.min)
    c1p = agg(3, lambda n: n <= r2, np.min)
    c2p = agg(4, lambda n: n >= r2, np.min)
    c3 = agg(5, lambda n: n >= 0, np.max)
    if not np.isfinite(c2):
        c2 = agg(2, lambda n: n >= 0, np.min)
    if not np.isfinite(c2p):
        c2p = agg(4, lambda n: n >= 0, np.min)

    return LemmaAuditReport(
        samples=total, M=float(M), p=float(cfg.p), c1=c1, c1_prime=c1p, c2=c2,
        c2_prime=c2p, c3=c3, r1=float(r1), r2=float(r2), r1_stabilized=ok1,
        r2_stabilized=ok2, source_bounds=src_max if R_active else {},
        shells=shells, violations=violations)


__all__ = [
    "rel_entropy", "rel_entropy_flux", "rel_flux", "rel_multiplier",
    "rel_remainders", "RelativeQuantities", "relative_quantities",
    "quadratic_form", "LemmaAuditConfig", "LemmaAuditReport",
    "lemma_bounds_audit",
]
