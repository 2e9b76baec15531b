"""Ornstein-Uhlenbeck smoothing of the regularised drift and diffusion.

``F_{lam,n}(x) = e^{-C/n} E[F_lam'(e^{-C/n} x + y)]`` with ``y ~ N(0, Q_{1/n})``,
and likewise for the mollified noise profile on the time scale ``n^{-delta}``.

Two routes are provided.  :func:`smooth_drift` / :func:`smooth_diffusion` draw
Gaussian fields and average (the Monte-Carlo route).  :class:`RegularizedCoefficients`
uses that the inner map is a superposition operator: the expectation at node
``i`` only involves the marginal ``y_i ~ N(0, sigma_i^2)``, so it reduces to a
one-dimensional Gaussian integral that is tabulated once per node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .noise import NoiseFamily, mollification_gap
from .potential import (
    MollifierSpec,
    PotentialSpec,
    RegularizationParams,
    f_lambda_prime,
    f_lambda_second,
)
from .spatial import SpatialModel, covariance, pointwise_variance, sample_gaussian
from .tables import HermiteTable, gaussian_smooth

__all__ = [
    "SmoothingParams",
    "RegularizedCoefficients",
    "smooth_drift",
    "smooth_diffusion",
]


@dataclass(frozen=True)
class SmoothingParams:
    """``n = inf`` switches the Gaussian smoothing off."""

    lam: float
    n: float = math.inf
    gamma: float = 4.0
    delta: float = 2.0
    mc_samples: int = 256

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.n > 0:
            raise ValueError("n must be positive")
        if not (self.gamma > 0 and self.delta > 0):
            raise ValueError("gamma and delta must be positive")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be at least 2")

    @property
    def smoothed(self) -> bool:
        return math.isfinite(self.n)

    @property
    def t_drift(self) -> float:
        return 1.0 / self.n

    @property
    def t_noise(self) -> float:
        return 1.0 / self.n**self.delta

    def satisfies_scaling(self) -> bool:
        """``delta > 7/4``, ``gamma > 7/2`` and ``gamma > 3 delta / 2``."""
        return self.delta > 1.75 and self.gamma > 3.5 and self.gamma > 1.5 * self.delta

    @classmethod
    def along_schedule(cls, n: int, gamma: float = 4.0, delta: float = 2.0, **kw):
        """Parameters on the diagonal ``lam_n = n^{-1/4}``."""
        return cls(lam=float(n) ** -0.25, n=n, gamma=gamma, delta=delta, **kw)


def _reg(params: SmoothingParams) -> RegularizationParams:
    return RegularizationParams(params.lam, params.gamma)


def _mc_mean(samples):
    m = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return m, se


def smooth_drift(x, params: SmoothingParams, potential: PotentialSpec, model: SpatialModel,
                 rng: np.random.Generator, moll: MollifierSpec | None = None):
    """Monte-Carlo ``F_{lam,n}(x)``; returns ``(field, standard_error)``.

    With ``n = inf`` this is ``F_lam'(x)`` itself and the error is zero.
    """
    moll = moll or MollifierSpec()
    x = np.asarray(x, dtype=float)
    if not params.smoothed:
        return f_lambda_prime(potential, moll, _reg(params), x), np.zeros_like(x)
    t = params.t_drift
    cov = covariance(model, t)
    mean_arg = model.from_modes(np.exp(-t * model.lamC) * model.to_modes(x))
    y = sample_gaussian(model, cov, rng, size=params.mc_samples)
    inner = f_lambda_prime(potential, moll, _reg(params), mean_arg + y)
    outer = model.from_modes(np.exp(-t * model.lamC) * model.to_modes(inner))
    return _mc_mean(outer)


def _mollified_profile(noise: NoiseFamily, moll: MollifierSpec, eps: float, r):
    return noise.profile(r) + mollification_gap(noise, moll, eps, r)


def smooth_diffusion(x, params: SmoothingParams, noise: NoiseFamily, model: SpatialModel,
                     rng: np.random.Generator, moll: MollifierSpec | None = None):
    """Monte-Carlo ``B_{lam,n}(x) e_k`` for every mode; returns ``(fields, standard_errors)``
    with shape ``(num_modes, npts)``."""
    moll = moll or MollifierSpec()
    x = np.asarray(x, dtype=float)
    eps = params.lam**params.gamma
    c = noise.amplitudes[:, None]
    if not params.smoothed:
        prof = _mollified_profile(noise, moll, eps, x)
        return c * prof, np.zeros((noise.num_modes, x.size))
    t = params.t_noise
    cov = covariance(model, t)
    mean_arg = model.from_modes(np.exp(-t * model.lamC) * model.to_modes(x))
    y = sample_gaussian(model, cov, rng, size=params.mc_samples)
    inner = _mollified_profile(noise, moll, eps, mean_arg + y)
    outer = model.from_modes(np.exp(-t * model.lamC) * model.to_modes(inner))
    m, se = _mc_mean(outer)
    return c * m, c * se


class RegularizedCoefficients:
    """Tabulated ``F_{lam,n}`` and ``B_{lam,n}`` on a spatial model.

    Every mode of ``B_{lam,n}(x)`` is ``c_k b(x)`` for one shared field
    ``b``, because all noise coefficients share a profile.
    """

    def __init__(self, potential: PotentialSpec, noise: NoiseFamily, model: SpatialModel,
                 params: SmoothingParams, moll: MollifierSpec | None = None,
                 table_range: float = 4.0, table_points: int = 8001, gh_nodes: int = 48):
        self.potential, self.noise, self.model, self.params = potential, noise, model, params
        self.moll = moll or MollifierSpec()
        reg = _reg(params)
        eps = params.lam**params.gamma
        self.base_drift = HermiteTable.from_function(
            lambda z: f_lambda_prime(potential, self.moll, reg, z),
            lambda z: f_lambda_second(potential, self.moll, reg, z),
            -table_range, table_range, table_points,
        )
        self.base_noise = HermiteTable.from_function(
            lambda z: _mollified_profile(noise, self.moll, eps, z),
            lambda z: self.moll.convolve(noise.profile_prime, z, eps),
            -table_range, table_range, table_points,
        )
        if params.smoothed:
            self._ed = np.exp(-params.t_drift * model.lamC)
            self._en = np.exp(-params.t_noise * model.lamC)
            sd = np.sqrt(pointwise_variance(model, covariance(model, params.t_drift)))
            sn = np.sqrt(pointwise_variance(model, covariance(model, params.t_noise)))
            self.drift_table = gaussian_smooth(self.base_drift, sd, gh_nodes)
            self.noise_table = gaussian_smooth(self.base_noise, sn, gh_nodes)
        else:
            self.drift_table, self.noise_table = self.base_drift, self.base_noise

    @property
    def amplitudes(self) -> np.ndarray:
        return self.noise.amplitudes

    def _heat(self, mult, u):
        m = self.model
        return m.from_modes(mult * m.to_modes(u))

    def _apply(self, table, mult, u):
        if mult is None:
            return table.eval(u)
        return self._heat(mult, table.eval(self._heat(mult, u)))

    def _apply_jvp(self, table, mult, u, v):
        if mult is None:
            val, slope = table.eval(u, deriv=True)
            return val, slope * v
        val, slope = table.eval(self._heat(mult, u), deriv=True)
        return self._heat(mult, val), self._heat(mult, slope * self._heat(mult, v))

    @property
    def _mults(self):
        if self.params.smoothed:
            return self._ed, self._en
        return None, None

    def drift(self, u):
        return self._apply(self.drift_table, self._mults[0], u)

    def drift_jvp(self, u, v):
        """``(F_{lam,n}(u), DF_{lam,n}(u)[v])``."""
        return self._apply_jvp(self.drift_table, self._mults[0], u, v)

    def diffusion_profile(self, u):
        """The field ``b(u)`` with ``B_{lam,n}(u) e_k = c_k b(u)``."""
        return self._apply(self.noise_table, self._mults[1], u)

    def diffusion_jvp(self, u, v):
        return self._apply_jvp(self.noise_table, self._mults[1], u, v)

    def diffusion_fields(self, u):
        """``B_{lam,n}(u) e_k`` stacked over modes on a new leading-from-last axis."""
        b = self.diffusion_profile(u)
        return b[..., None, :] * self.amplitudes[:, None]

    def diffusion_apply(self, u, dW):
        dW = np.asarray(dW, dtype=float)
        if dW.shape[-1] != self.noise.num_modes:
            raise ValueError("noise increment dimension mismatch")
        return self.diffusion_profile(u) * (dW @ self.amplitudes)[..., None]

    def hs_norm_sq(self, u):
        b = self.diffusion_profile(u)
        return self.noise.amp_sq_sum * np.sum(self.model.weights * b * b, axis=-1)
