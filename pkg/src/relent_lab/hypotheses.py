"""Numerical audits of the structural hypotheses over sampled states.

Pointwise algebraic conditions (nonsingular dA, the entropy compatibility
relations, convexity, dissipativity of the viscosity) are checked on a
bounded sample region and on a set of (x, t) points.  Conditions that only
make sense as ``|U| -> infinity`` are audited as decay trends across shells
of growing radius; those verdicts are ``trend-pass`` rather than ``pass``.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AuditCoverageError, InsufficientDataError
from .systems import SystemSpec, eval_R, sample_shell, sample_states

log = logging.getLogger(__name__)

HYPOTHESIS_IDS = ("H1", "H2", "H3", "HB", "Hgr1", "Hgr2", "Hgr3", "Hxt1", "Hxt2",
                  "Hxt3", "HBxt", "Hgr4", "Hgr5", "HR1", "HR2", "HR3", "HP1",
                  "HP2", "HBpar")

# hypotheses whose failure fails the audit; the rest are reported only
REQUIRED = ("H1", "H2", "H3", "HB", "Hxt1", "Hxt2", "Hxt3", "HBxt", "HP1", "HP2",
            "HBpar")

PASS, FAIL, TREND, NA = "pass", "fail", "trend-pass", "not-applicable"


def worker_count(default=1):
    """Worker threads allowed by ``RELENT_THREADS`` (at least one)."""
    raw = os.environ.get("RELENT_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


@dataclass
class SampleCloud:
    """States and (x, t) points an audit runs over.

    ``states`` fill the bounded region used by the pointwise and boundedness
    checks; ``shell_states[k]`` have norm in ``[shell_radii[k], 2 shell_radii[k]]``
    and feed the growth trends.
    """

    states: np.ndarray
    points: np.ndarray
    shell_radii: tuple
    shell_states: list
    pairs: bool = True
    seed: int = 0
    M: float = 0.0
    region: str = "box"


def make_cloud(spec: SystemSpec, seed=0, n_states=2000, n_points=8, T=1.0,
               L=2.0 * np.pi, box=None, M=None, shell_radii=(5.0, 10.0, 20.0, 40.0, 80.0),
               n_shell=256, pairs=True) -> SampleCloud:
    """Seeded cloud over a box (default ``spec.state_box``) or the ball of
    radius ``M``, plus the (x, t) points ``(x_j, t_j)`` covering the torus
    times ``[0, T]``."""
    rng = np.random.default_rng(seed)
    if M is not None and box is None:
        states = sample_shell(spec, rng, n_states, 0.0, M)
        region = "ball"
        Mval = float(M)
    else:
        lo, hi = box if box is not None else spec.state_box
        states = sample_states(spec, rng, n_states, lo, hi)
        region = "box"
        corners = np.array(np.meshgrid(*zip(np.asarray(lo), np.asarray(hi)))).reshape(spec.n, -1).T
        Mval = float(np.max(np.linalg.norm(corners, axis=-1)))
    xs = (np.arange(n_points) + rng.uniform(0, 1, n_points)) * L / n_points
    ts = rng.uniform(0.0, T, n_points)
    ts[0] = 0.0
    points = np.stack([xs, ts], axis=-1)
    shells = [sample_shell(spec, rng, n_shell, r, 2.0 * r) for r in shell_radii]
    return SampleCloud(states=states, points=points, shell_radii=tuple(shell_radii),
                       shell_states=shells, pairs=pairs, seed=seed, M=Mval, region=region)


@dataclass
class AuditConfig:
    det_tol: float = 1e-12
    h2_tol: float = 1e-8
    hr2_tol: float = 1e-12
    hp2_directions: int = 64
    pair_distances: tuple = (1e-1, 1e-2, 1e-3)
    n_pairs: int = 400
    bounded_slope: float = -0.2
    uniformity_factor: float = 10.0
    p: float = 2.0
    workers: Optional[int] = None


@dataclass
class HypothesisResult:
    id: str
    verdict: str
    constant: Optional[float] = None
    witness: Optional[dict] = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"id": self.id, "verdict": self.verdict, "constant": self.constant,
                "witness": self.witness, "details": self.details}


@dataclass
class HypothesisReport:
    system: str
    seed: int
    samples: int
    results: dict
    table: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.results[key]

    @property
    def verdict(self):
        """``pass`` when every applicable required hypothesis passes."""
        needed = [self.results[h].verdict for h in REQUIRED]
        if any(v == FAIL for v in needed):
            return FAIL
        if all(v in (PASS, NA) for v in needed):
            return PASS
        return "inconclusive"

    def to_dict(self):
        return {
            "system": self.system, "seed": self.seed, "samples": self.samples,
            "verdict": self.verdict,
            "hypotheses": [self.results[h].to_dict() for h in HYPOTHESIS_IDS],
        }


# ---------------------------------------------------------------------------
# pointwise

def _sym_min_eig(M):
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))[..., 0]


def _norm(a, axes):
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=axes))


def audit_pointwise(spec: SystemSpec, U, x, t):
    """Per-point H1-H3 record.

    Returns a dict of arrays: ``det`` (|det dA|), ``eta_residual``
    (|grad eta - G dA|_inf), ``q_residual`` (max over directions of
    |grad q_a - G df_a|_inf) and ``lambda_min`` of
    ``sym(hess eta - G . d2A)``.
    """
    U = np.asarray(U, dtype=float)
    G = spec.G(U, x, t)
    dA = np.asarray(spec.dA(U, x, t))
    dA = np.broadcast_to(dA, U.shape + (U.shape[-1],))
    det = np.abs(np.linalg.det(dA))
    res_eta = np.max(np.abs(spec.grad_eta(U, x, t) - np.einsum("...i,...ij->...j", G, dA)), axis=-1)
    res_q = np.zeros_like(res_eta)
    for a in range(spec.d):
        r = spec.grad_q[a](U, x, t) - np.einsum("...i,...ij->...j", G, spec.df[a](U, x, t))
        res_q = np.maximum(res_q, np.max(np.abs(r), axis=-1))
    H = np.asarray(spec.hess_eta(U, x, t)) - np.einsum("...i,...ijk->...jk", G, spec.d2A(U, x, t))
    return {"det": det, "eta_residual": res_eta, "q_residual": res_q,
            "lambda_min": _sym_min_eig(H)}


# ---------------------------------------------------------------------------
# decay trends

@dataclass
class DecayFit:
    slope: float
    intercept: float
    verdict: str
    radii: tuple
    ratios: tuple

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "verdict": self.verdict,
                "radii": list(self.radii), "ratios": list(self.ratios)}


def fit_decay(samples) -> DecayFit:
    """Least-squares slope of ``log ratio`` against ``log |U|``.

    ``samples`` is a sequence of ``(|U|, ratio)`` pairs, one per shell.  The
    verdict is ``trend-pass`` iff the slope is below -0.1 and the last shell
    ratio is below the first.
    """
    arr = np.asarray(list(samples), dtype=float).reshape(-1, 2)
    if len(np.unique(arr[:, 0])) < 4:
        raise InsufficientDataError(
            f"decay fit needs at least 4 shells, got {len(np.unique(arr[:, 0]))}")
    r, q = arr[:, 0], arr[:, 1]
    tiny = np.finfo(float).tiny
    lr, lq = np.log(r), np.log(np.maximum(q, tiny))
    slope, intercept = np.polyfit(lr, lq, 1)
    ok = slope < -0.1 and q[-1] < q[0]
    return DecayFit(float(slope), float(intercept), TREND if ok else FAIL,
                    tuple(float(v) for v in r), tuple(float(v) for v in q))


# ---------------------------------------------------------------------------
# sampled audit

def _depends_on_xt(values_by_point, scale):
    ref = values_by_point[0]
    return any(np.max(np.abs(v - ref)) > 1e-13 * scale for v in values_by_point[1:])


def _point_block(spec, U, x, t, cfg, rng_seed):
    """Everything needed from one (x, t) point for the bounded-region checks."""
    rec = audit_pointwise(spec, U, x, t)
    G = spec.G(U, x, t)
    dG = np.asarray(spec.dG(U, x, t))
    A = spec.A(U, x, t)
    out = dict(rec)
    out["A"] = A
    out["f"] = [spec.f[a](U, x, t) for a in range(spec.d)]
    out["HB_size"] = (_norm(A, -1) + _norm(spec.dA(U, x, t), (-2, -1))
                      + sum(_norm(spec.f[a](U, x, t), -1) + _norm(spec.df[a](U, x, t), (-2, -1))
                            for a in range(spec.d)))
    out["HB_G"] = _norm(G, -1) + _norm(dG, (-2, -1))
    R = eval_R(spec, U, x, t)
    out["R"] = R
    out["HBxt_size"] = (_norm(R, -1) + _norm(spec.G_t(U, x, t), -1)
                        + sum(_norm(spec.G_x[a](U, x, t), -1) for a in range(spec.d)))
    out["At_fx"] = spec.A_t(U, x, t) + sum(spec.f_x[a](U, x, t) for a in range(spec.d))
    out["etat_qx"] = spec.eta_t(U, x, t) + sum(spec.q_x[a](U, x, t) for a in range(spec.d))
    if spec.B is not None:
        Bm = np.asarray(spec.B[0][0](U, x, t))
        Bm = np.broadcast_to(Bm, U.shape + (U.shape[-1],))
        D = np.einsum("...ki,...kj->...ij", dG, Bm)  # dG^T B
        out["lambda1"] = _sym_min_eig(D)
        rng = np.random.default_rng(rng_seed)
        dirs = rng.normal(size=(cfg.hp2_directions, U.shape[-1]))
        Bd = np.einsum("...ij,dj->...di", Bm, dirs)
        Gd = np.einsum("...ij,dj->...di", dG, dirs)
        num = np.sum(Gd * Bd, axis=-1)
        den = np.sum(Bd * Bd, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 1e-28, num / den, np.inf)
        out["lambda2"] = np.min(ratio, axis=-1)
        out["HBpar_size"] = sum(
            _norm(spec.B[a][b](U, x, t), (-2, -1)) + _norm(spec.dB[a][b](U, x, t), (-3, -2, -1))
            + _norm(spec.B_x[a][b](U, x, t), (-2, -1))
            for a in range(spec.d) for b in range(spec.d))
    return out


def _witness(U, point, value, key="value"):
    return {"U": [float(v) for v in U], "x": float(point[0]), "t": float(point[1]),
            key: float(value)}


def audit_sampled(spec: SystemSpec, cloud: SampleCloud,
                  config: Optional[AuditConfig] = None) -> HypothesisReport:
    """Audit every hypothesis over ``cloud``; see the module docstring."""
    cfg = config or AuditConfig()
    if len(cloud.states) == 0:
        raise AuditCoverageError("sample cloud has no states in the bounded region")
    for r, s in zip(cloud.shell_radii, cloud.shell_states):
        if len(s) == 0:
            raise AuditCoverageError(f"empty growth shell at radius {r:g}")
    U = cloud.states
    pts = cloud.points
    nP, nS = len(pts), len(U)
    workers = cfg.workers or worker_count()

    def run(j):
        return _point_block(spec, U, pts[j, 0], pts[j, 1], cfg, cloud.seed + 7919 * j)

    if workers > 1 and nP > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            blocks = list(ex.map(run, range(nP)))
    else:
        blocks = [run(j) for j in range(nP)]

    def stack(key):
        return np.stack([b[key] for b in blocks])  # (points, states, ...)

    res = {}

    det = stack("det")
    j, i = np.unravel_index(np.argmin(det), det.shape)
    res["H1"] = HypothesisResult(
        "H1", PASS if det.min() > cfg.det_tol else FAIL, float(det.min()),
        _witness(U[i], pts[j], det[j, i], "det"))

    r_eta, r_q = stack("eta_residual"), stack("q_residual")
    worst = np.maximum(r_eta, r_q)
    j, i = np.unravel_index(np.argmax(worst), worst.shape)
    res["H2"] = HypothesisResult(
        "H2", PASS if worst.max() <= cfg.h2_tol else FAIL, float(worst.max()),
        _witness(U[i], pts[j], worst[j, i], "residual"),
        {"eta_residual": float(r_eta.max()), "q_residual": float(r_q.max())})

    lam = stack("lambda_min")
    j, i = np.unravel_index(np.argmin(lam), lam.shape)
    mu = float(lam.min())
    spread = float(np.max(lam.max(axis=0) - lam.min(axis=0)))
    per_point = lam.min(axis=1)
    ratio = float(per_point.max() / per_point.min()) if per_point.min() > 0 else float("inf")
    res["H3"] = HypothesisResult(
        "H3", PASS if mu > 0 else FAIL, mu, _witness(U[i], pts[j], lam[j, i], "lambda_min"),
        {"xt_spread": spread, "per_point_mu": [float(v) for v in per_point],
         "xt_ratio": ratio, "uniform": bool(ratio <= cfg.uniformity_factor)})

    def bounded(hid, key, extra=None):
        vals = stack(key) if extra is None else stack(key) + stack(extra)
        fin = np.all(np.isfinite(vals))
        j, i = np.unravel_index(np.argmax(np.where(np.isfinite(vals), vals, np.inf)), vals.shape)
        return HypothesisResult(hid, PASS if fin else FAIL, float(np.max(vals)),
                                _witness(U[i], pts[j], vals[j, i]),
                                {"M": cloud.M, "region": cloud.region})

    res["HB"] = bounded("HB", "HB_size", "HB_G")
    res["HBxt"] = bounded("HBxt", "HBxt_size")
    if spec.B is not None:
        res["HBpar"] = bounded("HBpar", "HBpar_size")
        l1 = stack("lambda1")
        j, i = np.unravel_index(np.argmin(l1), l1.shape)
        res["HP1"] = HypothesisResult("HP1", PASS if l1.min() > 0 else FAIL, float(l1.min()),
                                      _witness(U[i], pts[j], l1[j, i], "lambda1"))
        l2 = stack("lambda2")
        finite = np.isfinite(l2)
        if np.any(finite):
            l2m = np.where(finite, l2, np.inf)
            j, i = np.unravel_index(np.argmin(l2m), l2m.shape)
            res["HP2"] = HypothesisResult(
                "HP2", PASS if l2m.min() > 0 else FAIL, float(l2m.min()),
                _witness(U[i], pts[j], l2m[j, i], "lambda2"),
                {"directions": cfg.hp2_directions})
        else:
            res["HP2"] = HypothesisResult("HP2", NA, None, None, {"reason": "B annihilates all directions"})
    else:
        for h in ("HBpar", "HP1", "HP2"):
            res[h] = HypothesisResult(h, NA, None, None, {"reason": "no viscosity"})

    # (x, t)-dependence hypotheses
    scaleA = 1.0 + float(np.max(np.abs(blocks[0]["A"])))
    a_varies = _depends_on_xt([b["A"] for b in blocks], scaleA) or any(
        _depends_on_xt([b["f"][a] for b in blocks], scaleA) for a in range(spec.d))
    src_nonzero = float(np.max(np.abs(stack("At_fx"))))
    ent_nonzero = float(np.max(np.abs(stack("etat_qx"))))
    rng = np.random.default_rng(cloud.seed + 1)
    res["Hxt1"] = _paired_quadratic(
        spec, cloud, cfg, rng, "Hxt1", a_varies,
        lambda V, x, t: np.concatenate(
            [spec.A(V, x, t)] + [spec.f[a](V, x, t) for a in range(spec.d)], axis=-1))
    res["Hxt2"] = _paired_quadratic(
        spec, cloud, cfg, rng, "Hxt2", src_nonzero > 0,
        lambda V, x, t: spec.A_t(V, x, t) + sum(spec.f_x[a](V, x, t) for a in range(spec.d)))
    res["Hxt3"] = _paired_quadratic(
        spec, cloud, cfg, rng, "Hxt3", ent_nonzero > 0,
        lambda V, x, t: (spec.eta_t(V, x, t)
                         + sum(spec.q_x[a](V, x, t) for a in range(spec.d)))[..., None])

    res["HR2"] = _dissipative_source(spec, cloud, cfg, rng)

    # growth trends
    growth = _growth(spec, cloud, cfg)
    res.update(growth)

    table = []
    for s in range(nS):
        row = {"state_index": s}
        for k in range(spec.n):
            row[f"U{k + 1}"] = float(U[s, k])
        row["det_min"] = float(det[:, s].min())
        row["h2_residual_max"] = float(worst[:, s].max())
        row["lambda_min"] = float(lam[:, s].min())
        if spec.B is not None:
            row["lambda1_min"] = float(stack("lambda1")[:, s].min())
        table.append(row)

    return HypothesisReport(system=spec.name, seed=cloud.seed, samples=int(nS * nP),
                            results={h: res[h] for h in HYPOTHESIS_IDS}, table=table)


def _paired_quadratic(spec, cloud, cfg, rng, hid, applicable, quantity):
    """``|Q(U) - Q(Ubar)| <= C |U - Ubar|^2`` on near-diagonal pairs.

    The worst ratio is tracked over shrinking distances; a bounded constant
    requires the log-log slope of the worst ratio to stay above
    ``cfg.bounded_slope``.
    """
    if not applicable:
        return HypothesisResult(hid, NA, None, None,
                                {"reason": "no explicit (x, t) dependence"})
    idx = rng.integers(0, len(cloud.states), cfg.n_pairs)
    Ub = cloud.states[idx]
    dirs = rng.normal(size=Ub.shape)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    worst, wit = [], None
    for s in cfg.pair_distances:
        U = Ub + s * dirs
        ok = np.ones(len(U), bool) if spec.admissible is None else np.asarray(spec.admissible(U))
        best = 0.0
        for x, t in cloud.points:
            d = _norm(quantity(U[ok], x, t) - quantity(Ub[ok], x, t), -1) / s ** 2
            k = int(np.argmax(d))
            if d[k] > best:
                best = float(d[k])
                if s == cfg.pair_distances[-1]:
                    wit = {"U": U[ok][k].tolist(), "Ubar": Ub[ok][k].tolist(),
                           "x": float(x), "t": float(t), "ratio": best}
        worst.append(best)
    ls = np.log(np.asarray(cfg.pair_distances))
    lw = np.log(np.maximum(np.asarray(worst), np.finfo(float).tiny))
    slope = float(np.polyfit(ls, lw, 1)[0])
    verdict = PASS if slope >= cfg.bounded_slope else FAIL
    return HypothesisResult(hid, verdict, float(max(worst)), wit,
                            {"distances": list(cfg.pair_distances), "worst_ratio": worst,
                             "slope": slope})


def _dissipative_source(spec, cloud, cfg, rng):
    """Sign sweep of ``(G - Gbar) . (R - Rbar)`` over random pairs."""
    n = min(cfg.n_pairs * 4, len(cloud.states) ** 2)
    i = rng.integers(0, len(cloud.states), n)
    k = rng.integers(0, len(cloud.states), n)
    U, Ub = cloud.states[i], cloud.states[k]
    worst, wit, any_nonzero = np.inf, None, False
    for x, t in cloud.points:
        R, Rb = eval_R(spec, U, x, t), eval_R(spec, Ub, x, t)
        any_nonzero = any_nonzero or bool(np.any(R != 0))
        val = np.einsum("...i,...i->...", spec.G(U, x, t) - spec.G(Ub, x, t), R - Rb)
        scale = 1.0 + np.abs(val)
        m = int(np.argmin(val / scale))
        if val[m] < worst:
            worst = float(val[m])
            wit = {"U": U[m].tolist(), "Ubar": Ub[m].tolist(), "x": float(x),
                   "t": float(t), "value": worst}
    verdict = PASS if worst >= -cfg.hr2_tol else FAIL
    return HypothesisResult("HR2", verdict, worst, wit,
                            {"pairs": int(n * len(cloud.points)), "source_zero": not any_nonzero})


def _growth(spec, cloud, cfg):
    """Shell-wise sup ratios for the growth conditions."""
    quantities = {
        "Hgr2": lambda U, x, t: sum(_norm(spec.f[a](U, x, t), -1) for a in range(spec.d)),
        "Hgr3": lambda U, x, t: _norm(spec.A(U, x, t), -1),
        "Hgr4": lambda U, x, t: np.abs(spec.eta_t(U, x, t)
                                       + sum(spec.q_x[a](U, x, t) for a in range(spec.d))),
        "Hgr5": lambda U, x, t: _norm(spec.A_t(U, x, t)
                                      + sum(spec.f_x[a](U, x, t) for a in range(spec.d)), -1),
        "HR1": lambda U, x, t: np.maximum(
            np.abs(np.einsum("...i,...i->...", spec.G(U, x, t), eval_R(spec, U, x, t))),
            _norm(eval_R(spec, U, x, t), -1)),
        "HR3": lambda U, x, t: _norm(spec.G(U, x, t), -1),
    }
    sup = {k: [] for k in quantities}
    beta_hi, beta_lo = [], []
    for r, S in zip(cloud.shell_radii, cloud.shell_states):
        vals = {k: 0.0 for k in quantities}
        bh, bl = 0.0, np.inf
        nrm = np.linalg.norm(S, axis=-1)
        for x, t in cloud.points:
            eta = np.asarray(spec.eta(S, x, t))
            pos = eta > 0
            for k, fun in quantities.items():
                q = fun(S, x, t)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(pos, q / np.where(pos, eta, 1.0), np.inf)
                vals[k] = max(vals[k], float(np.max(ratio)))
            g = eta / (nrm ** cfg.p + 1.0)
            bh, bl = max(bh, float(np.max(g))), min(bl, float(np.min(g)))
        for k in quantities:
            sup[k].append(vals[k])
        beta_hi.append(bh)
        beta_lo.append(bl)

    out = {}
    radii = cloud.shell_radii
    for k, ratios in sup.items():
        if all(v == 0.0 for v in ratios):
            out[k] = HypothesisResult(k, NA, 0.0, None, {"reason": "quantity vanishes identically"})
            continue
        if not all(np.isfinite(ratios)):
            out[k] = HypothesisResult(k, FAIL, float("inf"), None,
                                      {"reason": "entropy not positive on a shell"})
            continue
        fit = fit_decay(zip(radii, ratios))
        out[k] = HypothesisResult(k, fit.verdict, fit.slope, None, fit.to_dict())
    # two-sided p-growth of the entropy: upper ratio must not grow, lower stays positive
    with np.errstate(divide="ignore"):
        lh = np.log(np.asarray(beta_hi))
    slope_hi = float(np.polyfit(np.log(radii), lh, 1)[0]) if len(radii) >= 2 else float("nan")
    ok = np.isfinite(slope_hi) and slope_hi <= 0.1 and beta_lo[-1] > 0
    out["Hgr1"] = HypothesisResult(
        "Hgr1", TREND if ok else FAIL, float(beta_hi[-1]), None,
        {"p": cfg.p, "beta2_by_shell": beta_hi, "beta1_by_shell": beta_lo,
         "upper_slope": slope_hi, "radii": list(radii)})
    return out


def audit(spec: SystemSpec, seed=0, config: Optional[AuditConfig] = None, **cloud_kw):
    """Convenience wrapper: build a cloud and run :func:`audit_sampled`."""
    return audit_sampled(spec, make_cloud(spec, seed=seed, **cloud_kw), config)


__all__ = [
    "HYPOTHESIS_IDS", "REQUIRED", "SampleCloud", "make_cloud", "AuditConfig",
    "HypothesisResult", "HypothesisReport", "audit_pointwise", "audit_sampled",
    "fit_decay", "DecayFit", "audit", "worker_count",
]
