"""Explicit-constant envelopes for the a priori moment bounds.

The constants come from the energy identities for ``||u||_H^2``,
``||grad u||_H^2`` and ``int F(u)``, with the Burkholder-Davis-Gundy
inequality ``E sup |M| <= 3 E <M>^{1/2}`` and Young's inequality.
``|D|`` is the domain volume.
"""
from __future__ import annotations

import numpy as np

from .noise import NoiseFamily
from .potential import PotentialSpec

__all__ = ["tight_envelope", "h2_envelope", "fprime_envelope"]


def _R(x_H2, t, potential: PotentialSpec, noise: NoiseFamily, volume: float):
    return 0.5 * x_H2 + (9.5 * noise.C_B + potential.C1) * volume * np.asarray(t, dtype=float)


def tight_envelope(x_H2, t, potential: PotentialSpec, noise: NoiseFamily, volume: float, nu: float):
    """Bound on ``E sup_{[0,t]} ||u||_H^2 + int_0^t E ||u||_V^2``."""
    R = _R(x_H2, t, potential, noise, volume)
    return (4.0 + 1.0 / nu) * R + volume * np.asarray(t, dtype=float)


def h2_envelope(x_H2, x_grad2, t, potential: PotentialSpec, noise: NoiseFamily, volume: float, nu: float):
    """Bound on ``E sup_{[0,t]} ||u||_V^2 + int_0^t E ||u||_Z^2`` for initial data in V."""
    t = np.asarray(t, dtype=float)
    R = _R(x_H2, t, potential, noise, volume)
    G = R / nu                                   # int E ||grad u||^2
    S = x_grad2 + (2 * potential.K + noise.C_B) * G + 9.0 * noise.C_B * volume * t / nu
    Y = S / nu                                   # int E ||Lap u||^2
    A = np.minimum(4.0 * R, volume)              # E sup ||u||_H^2, and |u| < 1
    return A + S + volume * t + 2.0 * G + Y


def fprime_envelope(x_H2, t, potential: PotentialSpec, noise: NoiseFamily, volume: float, nu: float):
    """Bound on ``int_0^t E ||F'(u)||_H^2``."""
    t = np.asarray(t, dtype=float)
    G = _R(x_H2, t, potential, noise, volume) / nu
    return volume * potential.sup_F + nu * potential.K * G + 0.5 * noise.C_B * volume * t
