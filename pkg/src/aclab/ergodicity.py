"""Empirical invariant measures, moment stability and coupling rates.

Time averages along one long trajectory use batch means for their error
bars; mixing rates are log-linear fits of the synchronous-coupling distance
with a bootstrap over pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .integrator import IntegratorConfig, simulate, simulate_coupled
from .kolmogorov import alpha0
from .noise import NoiseFamily
from .observables import Observable
from .potential import PotentialSpec
from .spatial import SpatialModel

__all__ = [
    "batch_means",
    "EmpiricalMeasure",
    "krylov_bogoliubov",
    "support_moments",
    "MixingEstimate",
    "mixing_rate",
    "strong_mixing_check",
    "ergodic_average_vs_ensemble",
]

MOMENTS = ("H", "V", "Z", "Fp")


def batch_means(x, nbatches: int = 32):
    """Mean and standard error from ``nbatches`` contiguous batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // nbatches
    if size < 1:
        raise ValueError("fewer samples than batches")
    b = x[: size * nbatches].reshape(nbatches, size).mean(axis=1)
    return float(b.mean()), float(b.std(ddof=1) / math.sqrt(nbatches)), b


@dataclass
class EmpiricalMeasure:
    times: np.ndarray            # sample times after burn-in
    series: dict                 # name -> samples after burn-in
    burn_in: float
    T: float
    nbatches: int
    snapshots: np.ndarray | None = None
    max_abs: float = 0.0
    estimates: dict = field(default_factory=dict)

    def estimate(self, name: str):
        """``(mean, standard error)`` of the time average of ``name``."""
        if name not in self.estimates:
            m, se, _ = batch_means(self.series[name], self.nbatches)
            self.estimates[name] = (m, se)
        return self.estimates[name]

    def window(self, name: str, start: float, stop: float | None = None):
        mask = self.times >= start
        if stop is not None:
            mask &= self.times <= stop
        return self.series[name][mask]


def krylov_bogoliubov(x0, T: float, observables, config: IntegratorConfig, model: SpatialModel,
                      potential: PotentialSpec, noise: NoiseFamily, burn_in: float | None = None,
                      nbatches: int = 32, traj_id: int = 0, snapshot_every: int | None = None) -> EmpiricalMeasure:
    """Time averages along one trajectory, discarding ``burn_in`` (default ``T/10``).

    Samples are taken every ``config.record_every`` steps; the squared norms
    ``H``, ``V``, ``Z`` and ``Fp = ||F'(u)||_H^2`` are always recorded.
    """
    burn = T / 10 if burn_in is None else burn_in
    if not burn < T:
        raise ValueError(f"horizon T={T} must exceed the burn-in {burn}")
    cfg = replace(config, T=T)
    res = simulate(x0, cfg, model, potential, noise, observables, ntraj=1, traj_offset=traj_id,
                   keep_states=snapshot_every is not None)
    keep = res.times >= burn
    series = {o.name: res.observables[o.name][0, keep] for o in observables}
    for k in MOMENTS:
        series[k] = getattr(res, k)[0, keep]
    snaps = None
    if snapshot_every is not None:
        snaps = res.states[0, keep][::snapshot_every]
    return EmpiricalMeasure(res.times[keep], series, burn, T, nbatches, snaps, res.max_abs)


def support_moments(measure: EmpiricalMeasure, names=MOMENTS, ndoublings: int = 3) -> dict:
    """Running means of the moments over windows doubling towards ``T``.

    A moment is stable when consecutive window means differ by at most three
    combined batch-means standard errors.
    """
    T, b = measure.T, measure.burn_in
    ends = [b + (T - b) / 2**k for k in range(ndoublings, -1, -1)]
    report = {}
    for name in names:
        rows = []
        for e in ends:
            x = measure.window(name, b, e)
            nb = min(measure.nbatches, max(2, x.size // 4))
            m, se, _ = batch_means(x, nb)
            rows.append((e, m, se))
        diffs = [abs(rows[i + 1][1] - rows[i][1]) <= 3 * math.hypot(rows[i][2], rows[i + 1][2])
                 for i in range(len(rows) - 1)]
        means = np.array([r[1] for r in rows])
        report[name] = {
            "windows": [{"end": e, "mean": m, "stderr": se} for e, m, se in rows],
            "finite": bool(np.all(np.isfinite(means))),
            "stable": bool(all(diffs)),
        }
    return report


@dataclass
class MixingEstimate:
    status: str                  # "ok", "coincident" or "gated-out"
    alpha0: float
    rate: float = float("nan")
    ci: tuple = (float("nan"), float("nan"))
    window: tuple = (1.0, 3.0)
    times: np.ndarray | None = None
    mean_series: np.ndarray | None = None
    envelope_ok: bool = True
    message: str = ""

    @property
    def ci_halfwidth(self) -> float:
        return 0.5 * (self.ci[1] - self.ci[0])

    @property
    def passed(self) -> bool:
        if self.status == "coincident":
            return True
        return self.status == "ok" and self.rate >= self.alpha0 - self.ci_halfwidth and self.envelope_ok

    def as_dict(self) -> dict:
        return {
            "status": self.status, "alpha0": self.alpha0, "rate": self.rate, "ci": list(self.ci),
            "window": list(self.window), "envelope_ok": self.envelope_ok, "passed": self.passed,
            "message": self.message,
        }


def _slope(t, y):
    return float(np.polyfit(t, np.log(y), 1)[0])


def mixing_rate(x0, y0, config: IntegratorConfig, model: SpatialModel, potential: PotentialSpec,
                noise: NoiseFamily, npairs: int = 100, window=(1.0, 3.0), nboot: int = 1000,
                workers: int = 1, boot_seed: int = 12345) -> MixingEstimate:
    """Fitted exponential decay rate of ``E ||u^x(t) - u^y(t)||_H^2``."""
    a0 = alpha0(config.nu, model.K0, noise.C_B, potential.K)
    if not a0 > 0:
        return MixingEstimate("gated-out", a0, window=tuple(window),
                              message=f"alpha0 = nu(1/K0^2 - 1) - C_B/2 - K = {a0:.6g} <= 0; "
                                      "no contraction rate is available for this configuration")
    x0, y0 = np.asarray(x0, dtype=float), np.asarray(y0, dtype=float)
    if np.array_equal(x0, y0):
        return MixingEstimate("coincident", a0, rate=math.inf, window=tuple(window),
                              message="identical initial data: the coupled paths coincide")
    cfg = replace(config, T=max(config.T, window[1]))
    res = simulate_coupled(x0, y0, cfg, model, potential, noise, ntraj=npairs, workers=workers)
    t = res.times
    sel = (t >= window[0]) & (t <= window[1])
    D = res.diff_sq
    rate = -_slope(t[sel], D.mean(axis=0)[sel])
    rng = np.random.default_rng(boot_seed)
    boots = np.empty(nboot)
    for i in range(nboot):
        idx = rng.integers(0, npairs, npairs)
        boots[i] = -_slope(t[sel], D[idx].mean(axis=0)[sel])
    ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    mean = D.mean(axis=0)
    env = 4.0 * model.volume * np.exp(-a0 * t)
    return MixingEstimate("ok", a0, rate, ci, tuple(window), t, mean,
                          envelope_ok=bool(mean[0] <= 4.0 * model.volume and np.all(mean <= env)))


def strong_mixing_check(xs, observable: Observable, t_grid, reference: tuple, config: IntegratorConfig,
                        model: SpatialModel, potential: PotentialSpec, noise: NoiseFamily,
                        nseeds: int = 200) -> dict:
    """Deviation of ``P_t phi(x)`` from the stationary mean ``reference = (mean, stderr)``.

    Passes when, at every ``t``, the worst deviation over initial points is
    within ``Lip(phi) 2 |D|^{1/2} e^{-alpha0 t / 2}`` plus three combined
    standard errors.
    """
    a0 = alpha0(config.nu, model.K0, noise.C_B, potential.K)
    if not a0 > 0:
        return {"status": "gated-out", "alpha0": a0, "passed": False}
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    record = max(1, int(round(t_grid[0] / config.dt)))
    cfg = replace(config, T=float(t_grid[-1]), record_every=1)
    ref_m, ref_se = reference
    dev = np.zeros((len(xs), t_grid.size))
    se = np.zeros_like(dev)
    for i, x in enumerate(xs):
        res = simulate(x, cfg, model, potential, noise, [observable], ntraj=nseeds, traj_offset=10_000 * (i + 1))
        idx = np.searchsorted(res.times, t_grid - 1e-12)
        vals = res.observables[observable.name][:, idx]
        dev[i] = np.abs(vals.mean(axis=0) - ref_m)
        se[i] = vals.std(axis=0, ddof=1) / math.sqrt(nseeds)
    worst = dev.max(axis=0)
    worst_se = se[dev.argmax(axis=0), np.arange(t_grid.size)]
    env = observable.lipschitz * 2.0 * math.sqrt(model.volume) * np.exp(-a0 * t_grid / 2)
    tol = env + 3 * np.hypot(worst_se, ref_se)
    return {
        "status": "ok", "alpha0": a0, "t": t_grid.tolist(), "deviation": worst.tolist(),
        "stderr": worst_se.tolist(), "envelope": env.tolist(), "passed": bool(np.all(worst <= tol)),
        "record_every": record,
    }


def ergodic_average_vs_ensemble(measure: EmpiricalMeasure, observable: Observable, config: IntegratorConfig,
                                model: SpatialModel, potential: PotentialSpec, noise: NoiseFamily,
                                nseeds: int = 200, horizon: float = 1.0) -> dict:
    """Compare the time average with an ensemble average over ``nseeds`` paths
    started from snapshots of the empirical measure and run for ``horizon``."""
    if measure.snapshots is None or len(measure.snapshots) == 0:
        raise ValueError("the empirical measure carries no snapshots")
    snaps = measure.snapshots
    pick = np.linspace(0, len(snaps) - 1, nseeds).astype(int)
    x0 = snaps[pick]
    cfg = replace(config, T=horizon, record_every=max(1, int(round(horizon / config.dt))))
    res = simulate(x0, cfg, model, potential, noise, [observable], ntraj=nseeds, traj_offset=500_000)
    vals = res.observables[observable.name][:, -1]
    ens_m, ens_se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(nseeds))
    ta_m, ta_se = measure.estimate(observable.name)
    tol = 3 * math.hypot(ens_se, ta_se)
    return {"time_average": ta_m, "time_average_se": ta_se, "ensemble": ens_m, "ensemble_se": ens_se,
            "passed": bool(abs(ens_m - ta_m) <= tol + 1e-14)}
