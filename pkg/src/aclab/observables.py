"""Bounded smooth test functionals of the field.

Each observable acts on arrays of shape ``(..., npts)`` and returns ``(...)``.
Directions ``w`` and centres ``x0`` are given by eigenmode coefficients,
so the same configuration makes sense on any grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import SpatialModel

__all__ = ["Observable", "make_observable", "OBSERVABLE_KINDS", "field_from_coeffs"]

OBSERVABLE_KINDS = {
    "constant": "x -> c",
    "cosine": "x -> cos((x, w)_H)",
    "gauss-radial": "x -> exp(-||x - x0||_H^2)",
    "coordinate": "x -> tanh((x, w)_H), a smoothly clamped linear functional",
}


def field_from_coeffs(model: SpatialModel, coeffs) -> np.ndarray:
    """Nodal field with the given leading eigenmode coefficients."""
    coeffs = np.asarray(coeffs if coeffs is not None else [], dtype=float)
    if coeffs.size > model.nmodes:
        raise ValueError(f"{coeffs.size} coefficients for a model with {model.nmodes} modes")
    a = np.zeros(model.nmodes)
    a[: coeffs.size] = coeffs
    return model.from_modes(a)


@dataclass(eq=False)
class Observable:
    kind: str
    model: SpatialModel
    w: np.ndarray | None = None
    x0: np.ndarray | None = None
    value: float = 1.0
    params: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.params.get("name", self.kind)

    @property
    def sup_norm(self) -> float:
        """``||g||_inf`` over H."""
        return abs(self.value) if self.kind == "constant" else 1.0

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant with respect to the H norm."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "gauss-radial":
            return float(np.sqrt(2.0 / np.e))
        return float(np.sqrt(self.model.inner(self.w, self.w)))

    @property
    def oscillation(self) -> float:
        """``sup g - inf g`` over H."""
        return {"constant": 0.0, "cosine": 2.0, "coordinate": 2.0, "gauss-radial": 1.0}[self.kind]

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        wts = self.model.weights
        if self.kind == "constant":
            return np.full(u.shape[:-1], self.value)
        if self.kind == "cosine":
            return np.cos(np.sum(wts * u * self.w, axis=-1))
        if self.kind == "coordinate":
            return np.tanh(np.sum(wts * u * self.w, axis=-1))
        d = u - self.x0
        return np.exp(-np.sum(wts * d * d, axis=-1))


def make_observable(spec: dict, model: SpatialModel) -> Observable:
    """Build from a mapping such as ``{"kind": "cosine", "w": [1.0, 0.5]}``.

    ``w`` and ``x0`` are eigenmode coefficient lists; ``value`` is the constant.
    """
    kind = spec.get("kind")
    if kind not in OBSERVABLE_KINDS:
        raise ValueError(f"unknown observable kind {kind!r}; choose from {sorted(OBSERVABLE_KINDS)}")
    w = x0 = None
    if kind in ("cosine", "coordinate"):
        w = field_from_coeffs(model, spec.get("w", [1.0]))
    if kind == "gauss-radial":
        x0 = field_from_coeffs(model, spec.get("x0", []))
    return Observable(kind, model, w=w, x0=x0, value=float(spec.get("value", 1.0)), params=dict(spec))
