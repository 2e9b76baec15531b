"""Degenerate multiplicative noise coefficients.

Every mode shares one profile: ``h_k(r) = c_k (1 - r^2)^p`` with ``c_k = scale * k^{-decay}``.
The profile and its first derivative vanish at ``+-1`` (for ``p >= 2``), which is
what lets the noise switch off at the potential barriers.  Outside [-1, 1] the
coefficients are extended by zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .potential import MollifierSpec, PotentialSpec

__all__ = [
    "NoiseFamily",
    "eval_h",
    "diffusion_apply",
    "hs_norm_sq",
    "mollification_gap",
    "eval_h_mollified",
    "diffusion_apply_mollified",
]

_CONST_GRID = 10_001


@dataclass(frozen=True)
class NoiseFamily:
    num_modes: int = 8
    decay: float = 2.0
    exponent: int = 2
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    scale: float = 1.0

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError("num_modes must be >= 1")
        if self.exponent < 2:
            raise ValueError("exponent must be >= 2 so that h_k'(+-1) = 0")
        if self.decay <= 0.5:
            raise ValueError("decay must exceed 1/2 for square-summable amplitudes")
        if self.scale < 0:
            raise ValueError("amplitude scale must be nonnegative")

    @cached_property
    def amplitudes(self) -> np.ndarray:
        k = np.arange(1, self.num_modes + 1, dtype=float)
        return self.scale * k ** (-self.decay)

    @cached_property
    def amp_sq_sum(self) -> float:
        return float(np.sum(self.amplitudes**2))

    def tail_sq_sum(self, upto: int = 10**6) -> float:
        """Sum of ``c_k^2`` over the modes dropped by the truncation."""
        k = np.arange(self.num_modes + 1, upto + 1, dtype=float)
        return float(self.scale**2 * np.sum(k ** (-2 * self.decay)))

    # profile p(r) = (1 - r^2)^p extended by zero
    def profile(self, r):
        r = np.asarray(r, dtype=float)
        w = np.clip(1.0 - r * r, 0.0, None)
        return w**self.exponent

    def profile_prime(self, r):
        r = np.asarray(r, dtype=float)
        w = np.clip(1.0 - r * r, 0.0, None)
        p = self.exponent
        return -2.0 * p * r * w ** (p - 1)

    def profile_second(self, r):
        r = np.asarray(r, dtype=float)
        inside = np.abs(r) <= 1.0
        w = np.clip(1.0 - r * r, 0.0, None)
        p = self.exponent
        val = -2.0 * p * w ** (p - 1) + 4.0 * p * (p - 1) * r * r * w ** (p - 2)
        return np.where(inside, val, 0.0)

    @cached_property
    def _sup_terms(self) -> dict[str, float]:
        r = np.linspace(-1.0, 1.0, _CONST_GRID)
        w = 1.0 - r * r
        p = self.exponent
        th, th0 = self.potential.theta, self.potential.theta0
        # h^2 F'' = theta w^{2p-1} - theta0 w^{2p}: bounded up to the barriers
        h2F2 = th * w ** (2 * p - 1) - th0 * w ** (2 * p)
        return {
            "h": float(np.max(np.abs(self.profile(r)))),
            "h1": float(np.max(np.abs(self.profile_prime(r)))),
            "h2": float(np.max(np.abs(self.profile_second(r)))),
            "h2F2": float(np.max(np.abs(h2F2))),
        }

    @cached_property
    def C_B(self) -> float:
        """``sum_k (||h_k||_{C^1}^2 + ||h_k^2 F''||_inf)`` with ``||h||_{C^1}^2 = |h|_inf^2 + |h'|_inf^2``."""
        s = self._sup_terms
        return self.amp_sq_sum * (s["h"] ** 2 + s["h1"] ** 2 + s["h2F2"])

    @cached_property
    def C_B_prime(self) -> float:
        return self.amp_sq_sum * self._sup_terms["h2"] ** 2

    @cached_property
    def lipschitz_sq(self) -> float:
        """``sum_k |h_k'|_inf^2``, the squared Lipschitz constant of the superposition map."""
        return self.amp_sq_sum * self._sup_terms["h1"] ** 2


def _check_k(fam: NoiseFamily, k: int):
    if not (1 <= k <= fam.num_modes):
        raise IndexError(f"mode index {k} outside 1..{fam.num_modes}")


def eval_h(fam: NoiseFamily, k: int, r):
    _check_k(fam, k)
    return fam.amplitudes[k - 1] * fam.profile(r)


def _check_dW(fam: NoiseFamily, dW):
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != fam.num_modes:
        raise ValueError(f"expected {fam.num_modes} noise increments, got trailing dimension {dW.shape[-1]}")
    return dW


def diffusion_apply(fam: NoiseFamily, u, dW):
    """Pointwise ``sum_k h_k(u) dW_k``.

    ``u`` has shape ``(..., npts)`` and ``dW`` shape ``(..., num_modes)`` with
    matching leading dimensions.
    """
    dW = _check_dW(fam, dW)
    scalar = dW @ fam.amplitudes
    return fam.profile(u) * np.asarray(scalar)[..., None]


def hs_norm_sq(fam: NoiseFamily, u, weights):
    """``sum_k ||h_k(u)||_H^2`` with the quadrature ``weights`` of the grid."""
    p = fam.profile(u)
    return fam.amp_sq_sum * np.sum(weights * p * p, axis=-1)


def _profile_difference(fam: NoiseFamily, r, d):
    """``p(r - d) - p(r)`` without cancellation when both points lie in [-1, 1].

    ``A^p - B^p = (A - B) sum_i A^i B^{p-1-i}`` and ``A - B = d (2r - d)``.
    """
    a = 1.0 - (r - d) ** 2
    b = 1.0 - r * r
    p = fam.exponent
    both = (a >= 0) & (b >= 0)
    acc = np.zeros(np.broadcast(a, b).shape)
    for i in range(p):
        acc = acc + np.clip(a, 0, None) ** i * np.clip(b, 0, None) ** (p - 1 - i)
    inner = d * (2.0 * r - d) * acc
    outer = fam.profile(r - d) - fam.profile(r)
    return np.where(both, inner, outer)


def mollification_gap(fam: NoiseFamily, moll: MollifierSpec, eps: float, r):
    """Profile-level gap ``(rho_eps * p)(r) - p(r)`` computed without cancellation."""
    s, w = moll.nodes_weights
    r = np.asarray(r, dtype=float)
    diff = _profile_difference(fam, r[..., None], eps * s)
    return np.sum(diff * w, axis=-1)


def eval_h_mollified(fam: NoiseFamily, moll: MollifierSpec, lam: float, gamma: float, k: int, r, deriv: int = 0):
    """``h_{k,lam} = rho_{lam^gamma} * h~_k`` and its first two derivatives."""
    _check_k(fam, k)
    if not (lam > 0 and gamma > 0):
        raise ValueError("lambda and gamma must be positive")
    eps = lam**gamma
    ck = fam.amplitudes[k - 1]
    if deriv == 0:
        r = np.asarray(r, dtype=float)
        return ck * (fam.profile(r) + mollification_gap(fam, moll, eps, r))
    fn = {1: fam.profile_prime, 2: fam.profile_second}[deriv]
    return ck * moll.convolve(fn, r, eps)


def diffusion_apply_mollified(fam: NoiseFamily, moll: MollifierSpec, lam: float, gamma: float, u, dW):
    """Pointwise ``sum_k h_{k,lam}(u) dW_k``; defined for any real field values."""
    dW = _check_dW(fam, dW)
    eps = lam**gamma
    u = np.asarray(u, dtype=float)
    prof = fam.profile(u) + mollification_gap(fam, moll, eps, u)
    return prof * np.asarray(dW @ fam.amplitudes)[..., None]
