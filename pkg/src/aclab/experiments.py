"""Experiment runners behind the command line.

Every runner returns an :class:`Outcome`: CSV tables, a JSON report and a
status.  Writing files is left to the caller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .ergodicity import krylov_bogoliubov, mixing_rate, support_moments
from .integrator import IntegratorConfig, simulate, simulate_coupled
from .kolmogorov import (
    KolmogorovProblem,
    alpha0,
    bar_alpha,
    diffusion_gap_lambda,
    fit_exponent,
    residual_check,
    scaling_sweep,
)
from .noise import NoiseFamily, mollification_gap
from .observables import make_observable
from .potential import (
    MollifierSpec,
    RegularizationParams,
    eval_F_prime,
    f_lambda_prime,
    f_lambda_second,
    f_lambda_third,
    resolvent_coordinate,
    resolvent_residual,
    yosida,
)
from .smoothing import RegularizedCoefficients, SmoothingParams

DIMENSION_NOTE = (
    "simulations use spatial dimension d in {1, 2}; the analysis behind the checked "
    "estimates is stated for d = 2, 3"
)


class GatedOut(Exception):
    """The configuration is valid but the experiment's precondition fails."""


@dataclass
class Context:
    cfg: ExperimentConfig
    potential: object = None
    noise: NoiseFamily = None
    model: object = None

    def __post_init__(self):
        self.potential = self.cfg.potential.build()
        self.noise = self.cfg.noise.build(self.potential)
        self.model = self.cfg.spatial.build()

    @property
    def nu(self) -> float:
        return self.cfg.integrator.nu if self.cfg.integrator else 1.0

    def integrator(self, **over) -> IntegratorConfig:
        s = self.cfg.integrator
        kw = dict(dt=s.dt, T=s.T, nu=s.nu, scheme=s.scheme, seed=self.cfg.seed, record_every=s.record_every)
        kw.update(over)
        return IntegratorConfig(**kw)

    def observables(self):
        return [make_observable(o.as_dict(), self.model) for o in self.cfg.observables]


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)      # file stem -> (header, rows)
    report: dict = field(default_factory=dict)
    status: str = "ok"


def derived_constants(ctx: Context) -> dict:
    pot, noise, model = ctx.potential, ctx.noise, ctx.model
    return {
        "K": pot.K, "C0": pot.C0, "C1": pot.C1, "offset": pot.offset,
        "C_B": noise.C_B, "C_B_prime": noise.C_B_prime, "noise_tail_sq": noise.tail_sq_sum(),
        "K0": model.K0, "volume": model.volume,
        "alpha0": alpha0(ctx.nu, model.K0, noise.C_B, pot.K),
        "bar_alpha": bar_alpha(pot.K, noise.C_B),
        "c_rho": MollifierSpec().c_rho,
    }


def cross_validate(cfg: ExperimentConfig) -> tuple[list[str], str | None]:
    """Field-level errors and, separately, a gating message."""
    errors, gate = [], None
    ctx = Context(cfg)
    if cfg.integrator and cfg.integrator.scheme == "resolvent_splitting":
        specs = [("initial", cfg.initial)]
        for sec in ("couple", "mixing", "invariant"):
            s = getattr(cfg, sec)
            if s is not None and getattr(s, "initial_y", None) is not None:
                specs.append((f"{sec}.initial_y", s.initial_y))
        for name, spec in specs:
            m = float(np.max(np.abs(spec.build(ctx.model))))
            if m > 1.0:
                errors.append(f"{name}: max |x0| = {m:.6g} exceeds 1, inadmissible for the resolvent scheme")
    if cfg.kind == "kolmogorov-residual":
        thr = bar_alpha(ctx.potential.K, ctx.noise.C_B)
        a = cfg.kolmogorov.alpha
        if a is not None and not a > thr:
            errors.append(f"kolmogorov.alpha: alpha = {a:.6g} must exceed bar_alpha = {thr:.6g}")
    if cfg.kind == "mixing":
        a0 = alpha0(cfg.integrator.nu, ctx.model.K0, ctx.noise.C_B, ctx.potential.K)
        if not a0 > 0:
            gate = (f"mixing requires alpha0 = nu(1/K0^2 - 1) - C_B/2 - K > 0; here alpha0 = {a0:.6g} "
                    f"(K0 = {ctx.model.K0:.6g}, bc = {cfg.spatial.bc})")
    return errors, gate


def _se(a, axis=0):
    a = np.asarray(a)
    n = a.shape[axis]
    return a.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(np.delete(a.shape, axis))


def run_simulate(ctx: Context) -> Outcome:
    cfg = ctx.cfg
    obs = ctx.observables()
    x0 = cfg.initial.build(ctx.model)
    coeffs = None
    if cfg.integrator.scheme == "regularized_explicit":
        sm = cfg.kolmogorov.smoothing if cfg.kolmogorov else None
        if sm is None:
            raise ValueError("regularized_explicit needs kolmogorov.smoothing parameters")
        coeffs = RegularizedCoefficients(ctx.potential, ctx.noise, ctx.model, _smoothing(sm))
    res = simulate(x0, ctx.integrator(), ctx.model, ctx.potential, ctx.noise, obs, ntraj=cfg.ntraj,
                   coeffs=coeffs, workers=cfg.workers)
    keys = [o.name for o in obs]
    stats = ["H", "V", "Z", "sup_H", "int_V", "int_Fp"]
    header = ["t"] + [f"{p}_{k}" for k in keys for p in ("mean", "se")] + [f"mean_{s}" for s in stats]
    rows = []
    for j, t in enumerate(res.times):
        row = [t]
        for k in keys:
            v = res.observables[k][:, j]
            row += [v.mean(), float(_se(v))]
        row += [getattr(res, s)[:, j].mean() for s in stats]
        rows.append(row)
    report = {"ntraj": res.ntraj, "max_abs": res.max_abs, "bound_ok": bool(res.max_abs < 1.0)
              if cfg.integrator.scheme == "resolvent_splitting" else None,
              "terminal_mean_H": float(res.H[:, -1].mean())}
    return Outcome({"timeseries": (header, rows)}, report)


def run_couple(ctx: Context) -> Outcome:
    cfg = ctx.cfg
    x0, y0 = cfg.initial.build(ctx.model), cfg.couple.initial_y.build(ctx.model)
    res = simulate_coupled(x0, y0, ctx.integrator(), ctx.model, ctx.potential, ctx.noise,
                           ntraj=cfg.couple.npairs, workers=cfg.workers)
    se = _se(res.diff_sq)
    rows = [[t, m, s] for t, m, s in zip(res.times, res.mean, se)]
    vol = ctx.model.volume
    return Outcome({"timeseries": (["t", "mean_diff_sq", "se_diff_sq"], rows)},
                   {"npairs": cfg.couple.npairs, "max_abs": res.max_abs,
                    "envelope_ok": bool(np.all(res.mean <= 4 * vol))})


def run_invariant(ctx: Context) -> Outcome:
    cfg = ctx.cfg
    sec = cfg.invariant
    obs = ctx.observables()
    icfg = ctx.integrator()
    kw = dict(burn_in=sec.burn_in if sec else None, nbatches=sec.nbatches if sec else 32)
    m1 = krylov_bogoliubov(cfg.initial.build(ctx.model), icfg.T, obs, icfg, ctx.model, ctx.potential,
                           ctx.noise, traj_id=0, **kw)
    names = [o.name for o in obs] + ["H", "V", "Z", "Fp"]
    rows = []
    for n in names:
        m, s = m1.estimate(n)
        rows.append(["x0", n, m, s, m1.burn_in, m1.T])
    report = {"moments": support_moments(m1), "max_abs": m1.max_abs,
              "H_below_volume": bool(m1.estimate("H")[0] <= ctx.model.volume)}
    a0 = alpha0(icfg.nu, ctx.model.K0, ctx.noise.C_B, ctx.potential.K)
    if sec is not None and sec.initial_y is not None:
        m2 = krylov_bogoliubov(sec.initial_y.build(ctx.model), icfg.T, obs, icfg, ctx.model, ctx.potential,
                               ctx.noise, traj_id=1, **kw)
        agree = {}
        for n in names:
            (a, sa), (b, sb) = m1.estimate(n), m2.estimate(n)
            rows.append(["y0", n, b, sb, m2.burn_in, m2.T])
            agree[n] = bool(abs(a - b) <= 3 * math.hypot(sa, sb) + 1e-14)
        report["uniqueness"] = {"alpha0": a0, "applies": a0 > 0, "agree": agree}
    header = ["start", "observable", "estimate", "error", "burn_in", "T"]
    return Outcome({"averages": (header, rows)}, report)


def run_mixing(ctx: Context) -> Outcome:
    cfg = ctx.cfg
    sec = cfg.mixing
    est = mixing_rate(cfg.initial.build(ctx.model), sec.initial_y.build(ctx.model), ctx.integrator(),
                      ctx.model, ctx.potential, ctx.noise, npairs=sec.npairs, window=tuple(sec.window),
                      nboot=sec.nboot, workers=cfg.workers)
    if est.status == "gated-out":
        raise GatedOut(est.message)
    tables = {}
    if est.times is not None:
        tables["timeseries"] = (["t", "mean_diff_sq"], [[t, m] for t, m in zip(est.times, est.mean_series)])
    return Outcome(tables, est.as_dict())


def _smoothing(sm) -> SmoothingParams:
    return SmoothingParams(sm.lam, math.inf if sm.n is None else sm.n, sm.gamma, sm.delta, sm.mc_samples)


def run_kolmogorov(ctx: Context) -> Outcome:
    cfg = ctx.cfg
    sec = cfg.kolmogorov
    g = make_observable(sec.observable.as_dict(), ctx.model)
    thr = bar_alpha(ctx.potential.K, ctx.noise.C_B)
    alpha = sec.alpha if sec.alpha is not None else thr + 1.0
    params = _smoothing(sec.smoothing)
    prob = KolmogorovProblem(alpha, g, params, ctx.potential, ctx.noise)
    coeffs = RegularizedCoefficients(ctx.potential, ctx.noise, ctx.model, params)
    icfg = ctx.integrator(scheme="regularized_explicit")
    header = ["point", "phi", "phi_se", "g", "r_direct", "err_direct", "r_semigroup", "err_semigroup",
              "bound_ok", "passed"]
    rows, reports = [], []
    for i, spec in enumerate(sec.points):
        x = spec.build(ctx.model)
        rep = residual_check(x, prob, ctx.model, icfg, ntraj=sec.ntraj, eps=sec.eps, coeffs=coeffs,
                             budget=sec.budget_seconds)
        d = rep.as_dict()
        reports.append(d)
        rows.append([i, rep.phi, rep.phi_stderr, rep.g, rep.r_direct, rep.err_direct, rep.r_semigroup,
                     rep.err_semigroup, int(rep.bound_ok), int(rep.passed)])
    return Outcome({"residuals": (header, rows)},
                   {"alpha": alpha, "bar_alpha": thr, "points": reports,
                    "passed": all(r["passed"] and r["bound_ok"] for r in reports)})


def run_rate_sweep(ctx: Context) -> Outcome:
    sec = ctx.cfg.rate_sweep
    fields = np.stack([f.build(ctx.model) for f in sec.fields])
    tab = scaling_sweep(fields, ctx.potential, ctx.noise, ctx.model, sec.ns, sec.gamma, sec.delta)
    header = ["n", "lam", "envelope"]
    for i in range(fields.shape[0]):
        header += [f"drift_gap_{i}", f"diffusion_gap_{i}", f"combined_{i}"]
    rows = []
    for j, n in enumerate(tab.ns):
        row = [int(n), tab.lams[j], tab.envelope[j]]
        for i in range(fields.shape[0]):
            row += [tab.drift_gap[i, j], tab.diffusion_gap[i, j], tab.combined[i, j]]
        rows.append(row)
    lams = [0.5, 0.4, 0.3, 0.25, 0.2]
    dl = diffusion_gap_lambda(fields, ctx.noise, ctx.model, lams, sec.gamma)
    report = tab.as_dict()
    report["diffusion_gap_lambda_exponents"] = [fit_exponent(lams, r) if np.all(r > 0) else None for r in dl]
    report["passed"] = bool(np.all(tab.exponents <= -0.15) and tab.drift_monotone)
    return Outcome({"rates": (header, rows)}, report)


def run_potential_rates(ctx: Context) -> Outcome:
    sec = ctx.cfg.potential_rates
    pot, noise = ctx.potential, ctx.noise
    moll = MollifierSpec()
    x = np.linspace(-sec.xmax, sec.xmax, sec.npoints)
    xin = np.linspace(-0.9, 0.9, 181)
    r = np.linspace(-1.2, 1.2, 2401)
    header = ["lam", "max_residual", "max_abs_s", "strict", "lipschitz_ratio", "F2_ratio", "F3_ratio",
              "drift_gap", "noise_gap_sq"]
    rows = []
    gaps, ngaps = [], []
    for lam in sec.lams:
        s = resolvent_coordinate(pot, lam, x)
        res = float(np.max(resolvent_residual(pot, lam, x, s)))
        b = yosida(pot, lam, x)
        dx = np.abs(x[:, None] - x[None, :])
        np.fill_diagonal(dx, np.inf)
        lip = float(np.max(np.abs(b[:, None] - b[None, :]) / dx) * lam)
        p = RegularizationParams(lam, sec.gamma)
        f2 = float(np.max(np.abs(f_lambda_second(pot, moll, p, x))) / (pot.K + 1 / lam))
        f3 = float(np.max(np.abs(f_lambda_third(pot, moll, p, x))) / (moll.c_rho / lam**3))
        gap = float(np.max(np.abs(f_lambda_prime(pot, moll, p, xin) - eval_F_prime(pot, xin))))
        ng = float(noise.amp_sq_sum * np.max(mollification_gap(noise, moll, lam**sec.gamma, r) ** 2))
        gaps.append(gap)
        ngaps.append(ng)
        rows.append([lam, res, float(np.max(np.abs(s))), int(np.all(np.isfinite(s))), lip, f2, f3, gap, ng])
    report = {
        "drift_gap_slope": fit_exponent(sec.lams, gaps),
        "noise_gap_slope": fit_exponent(sec.lams, ngaps) if min(ngaps) > 0 else None,
        "max_residual": max(r_[1] for r_ in rows),
        "lipschitz_ok": all(r_[4] <= 1 + 1e-9 for r_ in rows),
        "bounds_ok": all(r_[5] <= 1 and r_[6] <= 1 for r_ in rows),
    }
    return Outcome({"potential_rates": (header, rows)}, report)


RUNNERS = {
    "simulate": run_simulate,
    "couple": run_couple,
    "invariant": run_invariant,
    "mixing": run_mixing,
    "kolmogorov-residual": run_kolmogorov,
    "rate-sweep": run_rate_sweep,
    "potential-rates": run_potential_rates,
}
