"""Regularised Kolmogorov equation ``alpha phi + L0 phi = g``.

``phi(x) = int_0^inf e^{-alpha t} E g(u(t; x)) dt`` is estimated along
trajectories of the regularised dynamics.  Derivatives of ``phi`` come from
central differences with common random numbers: all perturbed initial data of
one trajectory are driven by the same increments, so difference quotients are
computed path by path and their Monte-Carlo error is that of a smooth
functional, not of a difference of independent means.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .integrator import IntegratorConfig, _Increments
from .noise import NoiseFamily, mollification_gap
from .observables import Observable
from .potential import MollifierSpec, PotentialSpec, RegularizationParams, eval_F_prime, f_lambda_prime
from .smoothing import RegularizedCoefficients, SmoothingParams, smooth_diffusion, smooth_drift
from .spatial import SpatialModel, implicit_heat, norms

__all__ = [
    "ConditioningError",
    "bar_alpha",
    "alpha0",
    "KolmogorovProblem",
    "PhiEstimate",
    "PathFunctional",
    "resolvent_weights",
    "resolvent_phi",
    "apply_L0",
    "residual_check",
    "in_A_str",
    "scaling_sweep",
    "diffusion_gap_lambda",
    "drift_gap_lambda",
    "fit_exponent",
    "smooth_drift",
    "smooth_diffusion",
    "SmoothingParams",
]


class ConditioningError(ArithmeticError):
    """Finite-difference step too small to be resolved against the sampling noise."""


def bar_alpha(K: float, C_B: float) -> float:
    """Threshold above which the resolvent solution has bounded derivatives."""
    return max(0.5 * (2 * K + 33 * C_B + 1), 16 * C_B)


def alpha0(nu: float, K0: float, C_B: float, K: float) -> float:
    """Contraction rate of synchronous coupling; positive means unique invariant measure."""
    return nu * (1.0 / K0**2 - 1.0) - C_B / 2 - K


@dataclass(frozen=True, eq=False)
class KolmogorovProblem:
    alpha: float
    g: Observable
    params: SmoothingParams
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    noise: NoiseFamily = field(default_factory=lambda: NoiseFamily(num_modes=4))

    def __post_init__(self):
        thr = self.threshold
        if not self.alpha > thr:
            raise ValueError(f"alpha={self.alpha:.6g} must exceed bar_alpha={thr:.6g}")

    @property
    def M(self) -> int:
        return self.noise.num_modes

    @property
    def threshold(self) -> float:
        return bar_alpha(self.potential.K, self.noise.C_B)


def resolvent_weights(alpha: float, dt: float, nsteps: int) -> np.ndarray:
    """Weights ``w_m`` with ``sum_m w_m g_m = int_0^T e^{-alpha t} g(t) dt`` for piecewise-linear ``g``,
    plus the tail ``e^{-alpha T} g_N / alpha`` on the last node.  They sum to ``1/alpha``."""
    a = alpha * dt
    ea = math.exp(-a)
    B = -(math.expm1(-a) + a * ea) / (alpha * a)
    A = -math.expm1(-a) / alpha - B
    decay = np.exp(-alpha * dt * np.arange(nsteps + 1))
    w = np.zeros(nsteps + 1)
    w[:-1] += decay[:-1] * A
    w[1:] += decay[:-1] * B
    w[-1] += decay[-1] / alpha
    return w


@dataclass
class PhiEstimate:
    value: float
    stderr: float
    tail_bound: float
    ntraj: int
    partial: bool = False

    @property
    def error(self) -> float:
        return self.stderr + self.tail_bound


class PathFunctional:
    """Per-trajectory samples of ``phi`` at a stack of initial fields.

    Calling with ``X`` of shape ``(ncopy, npts)`` returns ``(samples, shifted)``,
    both ``(ntraj, ncopy)``: the discounted path integral and the same sum
    started one step later (an unbiased sample of ``P_h phi`` by the Markov
    property).  Every copy of a trajectory sees the same increments.
    """

    def __init__(self, problem: KolmogorovProblem, model: SpatialModel, coeffs: RegularizedCoefficients,
                 config: IntegratorConfig, ntraj: int, block: int = 2000, budget: float | None = None):
        self.problem, self.model, self.coeffs = problem, model, coeffs
        self.config = replace(config, scheme="regularized_explicit")
        self.ntraj, self.block, self.budget = ntraj, block, budget
        self.weights = resolvent_weights(problem.alpha, self.config.dt, self.config.nsteps)
        self.partial = False

    def _block(self, X, ids):
        cfg, g = self.config, self.problem.g
        u = np.broadcast_to(X, (len(ids), *X.shape)).copy()
        inc = _Increments(cfg, ids, self.problem.M)
        w = self.weights
        N = cfg.nsteps
        Y = w[0] * g(u)
        Ys = np.zeros_like(Y)
        nudt = cfg.nu * cfg.dt
        for m in range(1, N + 2):
            dW = inc.next()[:, None, :]
            u = implicit_heat(self.model, nudt, u - cfg.dt * self.coeffs.drift(u) + self.coeffs.diffusion_apply(u, dW))
            gv = g(u)
            if m <= N:
                Y += w[m] * gv
            Ys += w[m - 1] * gv
        if not np.all(np.isfinite(Y)):
            raise FloatingPointError("non-finite path functional")
        return Y, Ys

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t0 = time.perf_counter()
        Ys, Ss = [], []
        self.partial = False
        for start in range(0, self.ntraj, self.block):
            ids = list(range(start, min(start + self.block, self.ntraj)))
            Y, S = self._block(X, ids)
            Ys.append(Y)
            Ss.append(S)
            if self.budget is not None and time.perf_counter() - t0 > self.budget and ids[-1] + 1 < self.ntraj:
                self.partial = True
                break
        return np.concatenate(Ys), np.concatenate(Ss)


def _tail_bound(problem: KolmogorovProblem, config: IntegratorConfig) -> float:
    # the estimated tail and the true tail both lie in +-||g|| e^{-alpha T}/alpha
    T = config.nsteps * config.dt
    return 2.0 * problem.g.sup_norm * math.exp(-problem.alpha * T) / problem.alpha


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    se = a.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(a.shape[1:])
    return a.mean(axis=0), se


def resolvent_phi(x, problem: KolmogorovProblem, model: SpatialModel, config: IntegratorConfig,
                  ntraj: int = 10_000, coeffs: RegularizedCoefficients | None = None,
                  budget: float | None = None, block: int = 2000) -> PhiEstimate:
    """Monte-Carlo value of the resolvent solution at ``x``.

    Trajectories run in blocks of ``block``; once ``budget`` seconds have
    passed, the remaining blocks are skipped and the estimate is flagged partial.
    """
    coeffs = coeffs or RegularizedCoefficients(problem.potential, problem.noise, model, problem.params)
    pf = PathFunctional(problem, model, coeffs, config, ntraj, block=block, budget=budget)
    Y, _ = pf(np.asarray(x, dtype=float)[None])
    m, se = _mean_se(Y[:, 0])
    return PhiEstimate(float(m), float(se), _tail_bound(problem, config), Y.shape[0], pf.partial)


def _directions(model: SpatialModel, fields, tol: float = 1e-12):
    """H-orthonormal ``v_r`` and weights ``s_r^2`` with ``sum_k D2[f_k, f_k] = sum_r s_r^2 D2[v_r, v_r]``."""
    fields = np.atleast_2d(fields)
    sw = np.sqrt(model.weights)
    U, s, Vt = np.linalg.svd(fields * sw, full_matrices=False)
    keep = s > tol * max(s.max(initial=0.0), 1e-300)
    return Vt[keep] / sw, s[keep] ** 2


@dataclass
class L0Estimate:
    value: float
    stderr: float
    fd_error: float
    samples: np.ndarray          # per-path samples at step eps
    trace: float
    transport: float
    d2_along_noise: float        # D^2 phi[v, v] along the leading noise direction
    richardson_gap: float

    @property
    def error(self) -> float:
        return math.hypot(self.stderr, self.fd_error)


def apply_L0(phi, x, drift_field, diffusion_fields, model: SpatialModel, nu: float = 1.0,
             eps: float = 1e-2) -> L0Estimate:
    """``-1/2 sum_k D2 phi(x)[B e_k, B e_k] + (-nu Lap x + drift, D phi(x))_H``.

    ``phi`` maps a stack ``(ncopy, npts)`` of fields to per-path samples
    ``(S, ncopy)`` (``S = 1`` for a deterministic functional); derivatives are
    central differences along H-normalised directions at steps ``eps`` and
    ``2 eps``, the pair giving a Richardson estimate of the truncation error.
    """
    x = np.asarray(x, dtype=float)
    if not eps > 0 or eps < 1e-6 * (1.0 + math.sqrt(float(model.inner(x, x)))):
        raise ConditioningError(f"difference step {eps!r} is below the resolvable scale")
    transport = -nu * model.laplacian(x) + np.asarray(drift_field, dtype=float)
    tnorm = math.sqrt(float(model.inner(transport, transport)))
    dirs, s2 = _directions(model, diffusion_fields)

    X = [x]
    for d in ([transport / tnorm] if tnorm > 0 else []) + list(dirs):
        for h in (eps, -eps, 2 * eps, -2 * eps):
            X.append(x + h * d)
    out = phi(np.stack(X))
    P = out[0] if isinstance(out, tuple) else out
    P = np.atleast_2d(P)
    c = P[:, 0]

    def first(i):
        p, m, p2, m2 = (P[:, i + j] for j in range(4))
        return (p - m) / (2 * eps), (p2 - m2) / (4 * eps)

    def second(i):
        p, m, p2, m2 = (P[:, i + j] for j in range(4))
        return (p - 2 * c + m) / eps**2, (p2 - 2 * c + m2) / (4 * eps**2)

    col = 1
    L1 = np.zeros_like(c)
    L2 = np.zeros_like(c)
    trans1 = np.zeros_like(c)
    if tnorm > 0:
        a1, a2 = first(col)
        trans1 = tnorm * a1
        L1 += tnorm * a1
        L2 += tnorm * a2
        col += 4
    tr1 = np.zeros_like(c)
    d2_lead = 0.0
    for r, w in enumerate(s2):
        b1, b2 = second(col)
        if r == 0:
            d2_lead = float(b1.mean())
        tr1 += -0.5 * w * b1
        L1 += -0.5 * w * b1
        L2 += -0.5 * w * b2
        col += 4
    gap = L2 - L1
    m1, se1 = _mean_se(L1)
    mg, seg = _mean_se(gap)
    fd = (abs(float(mg)) + float(seg)) / 3.0
    return L0Estimate(float(m1), float(se1), fd, L1, float(tr1.mean()), float(trans1.mean()),
                      d2_lead, float(mg))


@dataclass
class ResidualReport:
    phi: float
    phi_stderr: float
    g: float
    r_direct: float
    err_direct: float
    r_semigroup: float
    err_semigroup: float
    discretisation: dict
    L0: float
    d2_along_noise: float
    d2_envelope: float
    tail_bound: float
    ntraj: int
    partial: bool
    alpha: float
    g_sup: float

    @property
    def direct_ok(self) -> bool:
        return abs(self.r_direct) <= 3 * self.err_direct

    @property
    def semigroup_ok(self) -> bool:
        return abs(self.r_semigroup) <= 3 * self.err_semigroup

    @property
    def consistent(self) -> bool:
        return abs(self.r_direct - self.r_semigroup) <= 3 * math.hypot(self.err_direct, self.err_semigroup)

    @property
    def bound_ok(self) -> bool:
        return abs(self.phi) <= self.g_sup / self.alpha * (1 + 1e-12)

    @property
    def passed(self) -> bool:
        return self.direct_ok and self.semigroup_ok and self.consistent

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(bound_ok=self.bound_ok, direct_ok=self.direct_ok, semigroup_ok=self.semigroup_ok, consistent=self.consistent,
                 passed=self.passed)
        return d


def _residual_level(x, problem, model, coeffs, cfg, ntraj, eps, budget):
    pf = PathFunctional(problem, model, coeffs, cfg, ntraj, budget=budget)
    cache = {}

    def phi(X):
        Y, S = pf(X)
        cache["Y"], cache["S"] = Y, S
        return Y

    drift = coeffs.drift(x)
    diff = coeffs.diffusion_fields(x)
    L = apply_L0(phi, x, drift, diff, model, nu=cfg.nu, eps=eps)
    Y0, S0 = cache["Y"][:, 0], cache["S"][:, 0]
    gx = float(problem.g(x))
    a = problem.alpha
    r_dir = a * Y0 + L.samples - gx
    r_sem = (S0 - Y0) / cfg.dt - (a * Y0 - gx)
    return dict(Y=Y0, r_dir=r_dir, r_sem=r_sem, L=L, gx=gx, partial=pf.partial)


def residual_check(x, problem: KolmogorovProblem, model: SpatialModel, config: IntegratorConfig,
                   ntraj: int = 10_000, eps: float = 1e-2, coeffs: RegularizedCoefficients | None = None,
                   budget: float | None = None) -> ResidualReport:
    """Both residual estimators at ``x`` with Monte-Carlo, difference-step and time-step error bars.

    The estimate is computed at ``config.dt`` and again at ``2 dt`` on the same
    Brownian paths; the change between the two levels is the reported
    time-discretisation error of the fine level.
    """
    coeffs = coeffs or RegularizedCoefficients(problem.potential, problem.noise, model, problem.params)
    fine_cfg = replace(config, scheme="regularized_explicit")
    coarse_cfg = replace(fine_cfg, dt=2 * fine_cfg.dt, brownian_level=fine_cfg.brownian_level + 1)
    x = np.asarray(x, dtype=float)
    fine = _residual_level(x, problem, model, coeffs, fine_cfg, ntraj, eps, budget)
    coarse = _residual_level(x, problem, model, coeffs, coarse_cfg, ntraj, eps, budget)
    n = min(fine["Y"].size, coarse["Y"].size)

    def combine(key):
        f = fine[key]
        m, se = _mean_se(f)
        dm, dse = _mean_se(f[:n] - coarse[key][:n])
        disc = abs(float(dm)) + float(dse)
        return float(m), float(se), disc

    rd, rd_se, rd_disc = combine("r_dir")
    rs, rs_se, rs_disc = combine("r_sem")
    L = fine["L"]
    phi_m, phi_se = _mean_se(fine["Y"])
    tail = _tail_bound(problem, fine_cfg)
    a = problem.alpha
    err_dir = math.hypot(rd_se, L.fd_error) + rd_disc + a * tail
    err_sem = rs_se + rs_disc + (1 + a * fine_cfg.dt) * tail / fine_cfg.dt
    p = problem.params
    env = (1 + p.n / p.lam**3 + p.n ** (0.75 * p.delta)) * _g_c2(problem.g) if p.smoothed else math.inf
    rep = ResidualReport(
        phi=float(phi_m), phi_stderr=float(phi_se), g=fine["gx"],
        r_direct=rd, err_direct=err_dir, r_semigroup=rs, err_semigroup=err_sem,
        discretisation={"direct": rd_disc, "semigroup": rs_disc, "coarse_dt": coarse_cfg.dt},
        L0=L.value, d2_along_noise=L.d2_along_noise, d2_envelope=env, tail_bound=tail,
        ntraj=int(fine["Y"].size), partial=bool(fine["partial"] or coarse["partial"]),
        alpha=a, g_sup=problem.g.sup_norm,
    )
    return rep


def _g_c2(g: Observable) -> float:
    """``||g||_{C^2_b}`` (sum of sup norms of g, Dg, D2g) for the library observables."""
    if g.kind == "constant":
        return abs(g.value)
    if g.kind in ("cosine", "coordinate"):
        wn = math.sqrt(float(g.model.inner(g.w, g.w)))
        # |tanh'| <= 1, |tanh''| <= 4/(3 sqrt 3)
        return 1.0 + wn + (wn * wn if g.kind == "cosine" else 0.7699 * wn * wn)
    # exp(-r^2): |D| <= sqrt(2/e), |D2| <= 2
    return 1.0 + math.sqrt(2.0 / math.e) + 2.0


def in_A_str(model: SpatialModel, potential: PotentialSpec, x) -> bool:
    """Strict admissibility on the grid: ``|x| < 1``, finite Z norm and finite ``||F'(x)||_H``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or not np.all(np.abs(x) < 1.0):
        return False
    z = norms(model, x)[2]
    fp = math.sqrt(float(model.inner(eval_F_prime(potential, x), eval_F_prime(potential, x))))
    return bool(np.isfinite(z) and np.isfinite(fp))


def fit_exponent(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def envelope(n, gamma: float = 4.0, delta: float = 2.0):
    n = np.asarray(n, dtype=float)
    return (1 + n**1.75 + n ** (0.75 * delta)) * (n**-delta + n ** (-gamma / 2))


@dataclass
class RateTable:
    ns: np.ndarray
    lams: np.ndarray
    envelope: np.ndarray
    drift_gap: np.ndarray        # (nfields, len(ns))
    diffusion_gap: np.ndarray
    combined: np.ndarray
    exponents: np.ndarray        # fitted exponent of combined, per field
    envelope_exponent: float
    drift_monotone: bool

    def as_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def scaling_sweep(fields, potential: PotentialSpec, noise: NoiseFamily, model: SpatialModel,
                  ns=(4, 8, 16, 32, 64), gamma: float = 4.0, delta: float = 2.0) -> RateTable:
    """Gap ingredients along ``lam_n = n^{-1/4}`` for fields of the strong admissible set."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    for f in fields:
        if not in_A_str(model, potential, f):
            raise ValueError("sample field is not strictly admissible")
    ns = np.asarray(ns, dtype=float)
    dg = np.zeros((fields.shape[0], ns.size))
    bg = np.zeros_like(dg)
    fp = eval_F_prime(potential, fields)
    prof = noise.profile(fields)
    for j, n in enumerate(ns):
        params = SmoothingParams.along_schedule(int(n), gamma=gamma, delta=delta)
        rc = RegularizedCoefficients(potential, noise, model, params)
        d = rc.drift(fields) - fp
        dg[:, j] = np.sqrt(model.inner(d, d))
        b = rc.diffusion_profile(fields) - prof
        bg[:, j] = noise.amp_sq_sum * model.inner(b, b)
    env = envelope(ns, gamma, delta)
    comb = env + dg + bg
    exps = np.array([fit_exponent(ns, c) for c in comb])
    mono = bool(np.all(np.diff(dg, axis=1) < 0))
    return RateTable(ns, ns**-0.25, env, dg, bg, comb, exps, fit_exponent(ns, env), mono)


def diffusion_gap_lambda(fields, noise: NoiseFamily, model: SpatialModel, lams, gamma: float = 4.0):
    """``||B_lam(x) - B(x)||_HS^2`` without Gaussian smoothing, per field and ``lam``."""
    moll = MollifierSpec()
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    out = np.zeros((fields.shape[0], len(lams)))
    for j, lam in enumerate(lams):
        gap = mollification_gap(noise, moll, lam**gamma, fields)
        out[:, j] = noise.amp_sq_sum * model.inner(gap, gap)
    return out


def drift_gap_lambda(fields, potential: PotentialSpec, model: SpatialModel, lams):
    """``||F_lam'(x) - F'(x)||_H`` without Gaussian smoothing."""
    moll = MollifierSpec()
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    fp = eval_F_prime(potential, fields)
    out = np.zeros((fields.shape[0], len(lams)))
    for j, lam in enumerate(lams):
        d = f_lambda_prime(potential, moll, RegularizationParams(lam), fields) - fp
        out[:, j] = np.sqrt(model.inner(d, d))
    return out
