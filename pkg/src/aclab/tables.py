"""Cubic Hermite tables for fast pointwise evaluation of smooth scalar maps.

A table stores values and slopes on a uniform grid, optionally one row per
grid node of a spatial model, and extrapolates linearly outside the grid.
The derivative returned by :meth:`HermiteTable.eval` is the exact derivative
of the interpolant, so linearised schemes built on it are consistent with
finite differences of the nonlinear scheme.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


class HermiteTable:
    def __init__(self, lo: float, hi: float, f, fp):
        f = np.atleast_2d(np.asarray(f, dtype=float))
        fp = np.atleast_2d(np.asarray(fp, dtype=float))
        self.rows, self.nz = f.shape
        self.lo, self.hi = float(lo), float(hi)
        self.h = (self.hi - self.lo) / (self.nz - 1)
        self.f = f
        self.fp = fp
        self._ff = f.ravel()
        self._fpf = fp.ravel()

    @classmethod
    def from_function(cls, fn, fn_prime, lo: float, hi: float, nz: int):
        z = np.linspace(lo, hi, nz)
        return cls(lo, hi, fn(z), fn_prime(z))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.nz)

    def eval(self, z, deriv: bool = False):
        """Interpolate at ``z``.

        For a multi-row table the last axis of ``z`` indexes rows.
        Returns the value, or ``(value, slope)`` when ``deriv`` is set.
        """
        z = np.asarray(z, dtype=float)
        u = (z - self.lo) / self.h
        idx = np.clip(np.floor(u).astype(np.int64), 0, self.nz - 2)
        t = u - idx
        if self.rows > 1:
            idx = idx + self.nz * np.arange(self.rows)
        f0, f1 = self._ff[idx], self._ff[idx + 1]
        d0, d1 = self._fpf[idx] * self.h, self._fpf[idx + 1] * self.h
        below, above = t < 0, t > 1
        tc = np.clip(t, 0.0, 1.0)
        t2 = tc * tc
        t3 = t2 * tc
        val = (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + tc) * d0 + (3 * t2 - 2 * t3) * f1 + (t3 - t2) * d1
        # linear continuation beyond the grid ends
        val = np.where(below, f0 + d0 * t, val)
        val = np.where(above, f1 + d1 * (t - 1.0), val)
        if not deriv:
            return val
        slope = ((6 * t2 - 6 * tc) * (f0 - f1) + (3 * t2 - 4 * tc + 1) * d0 + (3 * t2 - 2 * tc) * d1) / self.h
        slope = np.where(below, d0 / self.h, slope)
        slope = np.where(above, d1 / self.h, slope)
        return val, slope


def gaussian_smooth(table: HermiteTable, sigma, nodes: int = 48) -> HermiteTable:
    """Rows ``m -> E[f(m + sigma_i xi)]``, ``xi ~ N(0, 1)``, one per entry of ``sigma``.

    The Gaussian expectation is taken with probabilists' Gauss-Hermite
    quadrature against the interpolant of ``table``.  Entries of ``sigma``
    that coincide share one computed row.
    """
    if table.rows != 1:
        raise ValueError("base table must have a single row")
    sigma = np.asarray(sigma, dtype=float)
    xi, w = hermegauss(nodes)
    w = w / w.sum()
    key = np.round(sigma, 14)
    uniq, inverse = np.unique(key, return_inverse=True)
    z = table.grid
    F = np.empty((uniq.size, z.size))
    Fp = np.empty((uniq.size, z.size))
    for r, s in enumerate(uniq):
        v, d = table.eval(z[:, None] + s * xi, deriv=True)
        F[r] = v @ w
        Fp[r] = d @ w
    return HermiteTable(table.lo, table.hi, F[inverse], Fp[inverse])
