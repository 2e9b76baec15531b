"""Logarithmic double-well potential, its monotone part and their regularisations.

The singular derivative ``F'`` blows up at the barriers ``r = +-1``.  Everything
here that involves the resolvent ``J_lam = (I + lam*beta)^{-1}`` is computed in
the coordinate ``s = artanh(y)``: for small ``lam`` and moderately large inputs
the resolvent lands closer to ``+-1`` than a double can resolve, while ``s``
stays finite and carries the exact distance to the barrier.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize
from scipy.special import xlogy

__all__ = [
    "DomainError",
    "SingularityError",
    "ConvergenceError",
    "PotentialSpec",
    "MollifierSpec",
    "RegularizationParams",
    "eval_F",
    "eval_F_prime",
    "eval_F_second",
    "eval_F_third",
    "eval_beta",
    "resolvent",
    "resolvent_coordinate",
    "resolvent_residual",
    "yosida",
    "yosida_prime",
    "yosida_second",
    "f_lambda_prime",
    "f_lambda_second",
    "f_lambda_third",
]


class DomainError(ValueError):
    """Argument outside the closed interval [-1, 1]."""


class SingularityError(ValueError):
    """Argument at or beyond a barrier where the derivative is infinite."""


class ConvergenceError(ArithmeticError):
    """An iterative solver failed to converge."""


def _check_closed(r):
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1.0) or np.any(np.isnan(r)):
        raise DomainError("potential evaluated outside [-1, 1]")
    return r


def _check_open(r):
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1.0) or np.any(np.isnan(r)):
        raise SingularityError("derivative evaluated at or beyond the barriers +-1")
    return r


def _raw_F(theta, theta0, r):
    return 0.5 * theta * (xlogy(1.0 + r, 1.0 + r) + xlogy(1.0 - r, 1.0 - r)) - 0.5 * theta0 * r * r


@dataclass(frozen=True)
class PotentialSpec:
    """Flory-Huggins potential ``F(r) = theta/2 [(1+r)ln(1+r) + (1-r)ln(1-r)] - theta0/2 r^2``.

    ``K``, ``C0``, ``C1`` and ``offset`` are derived on construction.
    ``C0`` defaults to ``K``; ``C1`` is then the smallest constant with
    ``F'(r) r >= C0 r^2 - C1`` on (-1, 1).
    """

    theta: float = 1.0
    theta0: float = 2.0
    C0: float | None = None
    K: float = field(init=False)
    C1: float = field(init=False)
    offset: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.theta < self.theta0):
            raise ValueError(f"need 0 < theta < theta0, got theta={self.theta}, theta0={self.theta0}")
        K = self.theta0 - self.theta
        C0 = K if self.C0 is None else float(self.C0)
        if C0 <= 0:
            raise ValueError("C0 must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "C0", C0)

        # F is even; its minimum sits in [0, 1]. Coarse scan for a bracket, then golden section.
        grid = np.linspace(0.0, 1.0, 1001)
        vals = _raw_F(self.theta, self.theta0, grid)
        i = int(np.argmin(vals))
        fmin = float(vals[i])
        if 0 < i < grid.size - 1:
            res = optimize.minimize_scalar(
                lambda r: _raw_F(self.theta, self.theta0, r),
                bracket=(grid[i - 1], grid[i], grid[i + 1]),
                method="golden",
                tol=1e-12,
            )
            fmin = min(fmin, float(res.fun))
        fmin = min(fmin, 0.0)
        object.__setattr__(self, "offset", -fmin)

        # sup_r (C0 r^2 - F'(r) r); the function is even and -> -inf at the barriers
        s = np.linspace(0.0, 10.0, 200_001)
        r = np.tanh(s)
        gap = C0 * r * r - (self.theta * s - self.theta0 * r) * r
        i = int(np.argmax(gap))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, s.size - 1)]
        ref = optimize.minimize_scalar(
            lambda t: -(C0 * np.tanh(t) ** 2 - (self.theta * t - self.theta0 * np.tanh(t)) * np.tanh(t)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        C1 = max(float(gap[i]), float(-ref.fun))
        # a hair of slack so the inequality is strict on any sampled grid
        object.__setattr__(self, "C1", max(C1, 0.0) * (1 + 1e-9) + 1e-12)

    @property
    def sup_F(self) -> float:
        """``max_{[-1,1]} (F + offset)``; attained at the endpoints or at 0."""
        ends = float(_raw_F(self.theta, self.theta0, 1.0))
        return max(ends, 0.0) + self.offset


@dataclass(frozen=True)
class MollifierSpec:
    """Normalised bump ``rho(s) = exp(-1/(1-s^2)) / Z`` supported on [-1, 1].

    Convolutions use ``points``-node Gauss-Legendre quadrature in the
    rescaled variable; the discrete weights are renormalised to unit mass so
    that the odd/even symmetry of the integrands is preserved exactly.
    """

    points: int = 64

    @cached_property
    def Z(self) -> float:
        val, _ = integrate.quad(lambda s: np.exp(-1.0 / (1.0 - s * s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-12)
        return float(val)

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        out[inside] = np.exp(-1.0 / (1.0 - si * si)) / self.Z
        return out

    def profile_prime(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        w = 1.0 - si * si
        out[inside] = -2.0 * si / (w * w) * np.exp(-1.0 / w) / self.Z
        return out

    @cached_property
    def c_rho(self) -> float:
        """``||rho'||_{L^1}``; the profile is even and unimodal, so this is ``2 rho(0)``."""
        return 2.0 * float(np.exp(-1.0)) / self.Z

    @cached_property
    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = leggauss(self.points)
        w = w * self.profile(x)
        return x, w / w.sum()

    def quadrature_mass(self) -> float:
        """Gauss-Legendre integral of the analytically normalised profile."""
        x, w = leggauss(self.points)
        return float(np.sum(w * self.profile(x)))

    def convolve(self, fn, x, eps):
        """``(rho_eps * fn)(x) = sum_i w_i fn(x - eps*s_i)``, vectorised over ``x``."""
        s, w = self.nodes_weights
        x = np.asarray(x, dtype=float)
        pts = x[..., None] - eps * s
        return np.sum(fn(pts) * w, axis=-1)


@dataclass(frozen=True)
class RegularizationParams:
    lam: float
    gamma: float = 4.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def eval_F(spec: PotentialSpec, r):
    """Shifted potential ``F(r) + offset``; ``0 ln 0 = 0`` at the endpoints."""
    r = _check_closed(r)
    return _raw_F(spec.theta, spec.theta0, r) + spec.offset


def eval_F_prime(spec: PotentialSpec, r):
    r = _check_open(r)
    return spec.theta * np.arctanh(r) - spec.theta0 * r


def eval_F_second(spec: PotentialSpec, r):
    r = _check_open(r)
    return spec.theta / (1.0 - r * r) - spec.theta0


def eval_F_third(spec: PotentialSpec, r):
    r = _check_open(r)
    w = 1.0 - r * r
    return 2.0 * spec.theta * r / (w * w)


def eval_beta(spec: PotentialSpec, r):
    """Monotone part ``beta = F' + K r = theta (artanh r - r)``."""
    r = _check_open(r)
    return spec.theta * (np.arctanh(r) - r)


def resolvent_coordinate(spec: PotentialSpec, lam: float, x, *, tol: float = 1e-15, max_iter: int = 200):
    """``s = artanh(J_lam(x))``.

    Solves ``g(s) = (1 - lam*theta) tanh(s) + lam*theta*s - x = 0``, which is
    the resolvent equation ``y + lam*beta(y) = x`` with ``y = tanh(s)``.
    ``g`` is odd and ``g'(s) = sech^2 s + lam*theta*tanh^2 s > 0``, so the
    root is bracketed in ``[0, |x| max(1, 1/(lam theta)) + 1]`` and a
    safeguarded Newton iteration converges.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    sign = np.sign(x)
    a = np.abs(x)
    lt = lam * spec.theta

    lo = np.zeros_like(a)
    hi = a * max(1.0, 1.0 / lt) + 1.0
    # initial guess: inverse of whichever branch dominates
    s = np.where(a < 1.0 - lt, np.arctanh(np.minimum(a, 1.0 - 1e-16)), np.maximum((a - (1.0 - lt)) / lt, 0.0))
    s = np.clip(s, lo, hi)

    converged = False
    for _ in range(max_iter):
        t = np.tanh(s)
        g = (1.0 - lt) * t + lt * s - a
        lo = np.where(g < 0, s, lo)
        hi = np.where(g > 0, s, hi)
        gp = 1.0 - t * t + lt * t * t
        step = g / gp
        s_new = s - step
        bad = (s_new <= lo) | (s_new >= hi) | ~np.isfinite(s_new)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        done = np.abs(s_new - s) <= tol * np.maximum(1.0, s)
        s = s_new
        if np.all(done):
            converged = True
            break
    if not converged:
        raise ConvergenceError("resolvent iteration did not converge")
    # one polishing Newton step at full precision
    t = np.tanh(s)
    g = (1.0 - lt) * t + lt * s - a
    s = s - g / (1.0 - t * t + lt * t * t)
    return sign * s


def resolvent(spec: PotentialSpec, lam: float, x, **kw):
    """``J_lam(x)``, the unique ``y`` in (-1, 1) with ``y + lam beta(y) = x``.

    The double returned rounds to ``+-1`` once ``|artanh(y)| > ~19``; use
    :func:`resolvent_coordinate` when the distance to the barrier matters.
    """
    return np.tanh(resolvent_coordinate(spec, lam, x, **kw))


def resolvent_residual(spec: PotentialSpec, lam: float, x, s):
    """``|J + lam beta(J) - x|`` evaluated in the artanh coordinate."""
    lt = lam * spec.theta
    return np.abs((1.0 - lt) * np.tanh(s) + lt * s - np.asarray(x, dtype=float))


def yosida(spec: PotentialSpec, lam: float, x):
    """Yosida approximation ``beta_lam(x) = beta(J_lam(x)) = (x - J_lam(x)) / lam``."""
    s = resolvent_coordinate(spec, lam, x)
    return spec.theta * (s - np.tanh(s))


def yosida_prime(spec: PotentialSpec, lam: float, x):
    """``beta_lam' = beta'(J) / (1 + lam beta'(J))`` with ``beta'(tanh s) = theta sinh^2 s``."""
    s = resolvent_coordinate(spec, lam, x)
    t2 = np.tanh(s) ** 2
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(s) ** 2
    return spec.theta * t2 / (sech2 + lam * spec.theta * t2)


def yosida_second(spec: PotentialSpec, lam: float, x):
    """``beta_lam'' = beta''(J) / (1 + lam beta'(J))^3``, rewritten to stay finite as ``s`` grows."""
    s = resolvent_coordinate(spec, lam, x)
    t = np.tanh(s)
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(s) ** 2
    den = sech2 + lam * spec.theta * t * t
    return 2.0 * spec.theta * t * sech2 / den**3


def f_lambda_prime(spec: PotentialSpec, moll: MollifierSpec, params: RegularizationParams, x):
    """``F_lam'(x) = (rho_{lam^2} * beta_lam)(x) - K x``."""
    lam = params.lam
    return moll.convolve(lambda p: yosida(spec, lam, p), x, lam * lam) - spec.K * np.asarray(x, dtype=float)


def f_lambda_second(spec: PotentialSpec, moll: MollifierSpec, params: RegularizationParams, x):
    """``F_lam''(x) = (rho_{lam^2} * beta_lam')(x) - K``; equals ``(rho_{lam^2})' * beta_lam - K``."""
    lam = params.lam
    return moll.convolve(lambda p: yosida_prime(spec, lam, p), x, lam * lam) - spec.K


def f_lambda_third(spec: PotentialSpec, moll: MollifierSpec, params: RegularizationParams, x):
    """``F_lam'''(x) = (rho_{lam^2} * beta_lam'')(x)``."""
    lam = params.lam
    return moll.convolve(lambda p: yosida_second(spec, lam, p), x, lam * lam)
