"""Experiment configuration schema.

A configuration is a YAML (or JSON) mapping validated by pydantic.  Numeric
knobs live in the file; the command line only overrides paths, the seed and
the worker count.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .noise import NoiseFamily
from .observables import OBSERVABLE_KINDS, field_from_coeffs
from .potential import PotentialSpec
from .spatial import SpatialModel, build_model

KINDS = ("simulate", "couple", "invariant", "mixing", "kolmogorov-residual", "rate-sweep", "potential-rates")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PotentialConfig(_Strict):
    theta: float = Field(1.0, gt=0)
    theta0: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if not self.theta < self.theta0:
            raise ValueError(f"need theta < theta0, got theta={self.theta}, theta0={self.theta0}")
        return self

    def build(self) -> PotentialSpec:
        return PotentialSpec(self.theta, self.theta0)


class NoiseConfig(_Strict):
    num_modes: int = Field(8, ge=1)
    decay: float = Field(2.0, gt=0.5)
    exponent: int = Field(2, ge=2)
    scale: float = Field(1.0, ge=0)

    def build(self, potential: PotentialSpec) -> NoiseFamily:
        return NoiseFamily(self.num_modes, self.decay, self.exponent, potential, self.scale)


class SpatialConfig(_Strict):
    dim: Literal[1, 2] = 1
    grid: int = Field(64, ge=4)
    length: float = Field(1.0, gt=0)
    bc: Literal["dirichlet", "neumann"] = "dirichlet"

    def build(self) -> SpatialModel:
        return build_model(self.dim, self.grid, self.length, self.bc)


class IntegratorSection(_Strict):
    dt: float = Field(gt=0)
    T: float = Field(gt=0)
    nu: float = Field(gt=0)
    scheme: Literal["resolvent_splitting", "regularized_explicit"] = "resolvent_splitting"
    record_every: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _dt(self):
        if self.dt > self.T:
            raise ValueError(f"dt={self.dt} exceeds T={self.T}")
        return self


class FieldSpec(_Strict):
    """``constant + sum_j coeffs[j] phi_j``, optionally rescaled so that ``max |x| = sup``."""

    coeffs: list[float] = Field(default_factory=list)
    constant: float = 0.0
    sup: Optional[float] = Field(None, ge=0)

    def build(self, model: SpatialModel) -> np.ndarray:
        x = field_from_coeffs(model, self.coeffs) + self.constant
        if self.sup is not None:
            m = float(np.max(np.abs(x)))
            x = x * (self.sup / m) if m > 0 else x
        return x


class ObservableSpec(_Strict):
    kind: str
    name: Optional[str] = None
    w: Optional[list[float]] = None
    x0: Optional[list[float]] = None
    value: Optional[float] = None

    @field_validator("kind")
    @classmethod
    def _known(cls, v):
        if v not in OBSERVABLE_KINDS:
            raise ValueError(f"unknown observable kind {v!r}; available: {sorted(OBSERVABLE_KINDS)}")
        return v

    def as_dict(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class SmoothingSection(_Strict):
    lam: float = Field(gt=0)
    n: Optional[float] = Field(4, gt=0)
    gamma: float = Field(4.0, gt=0)
    delta: float = Field(2.0, gt=0)
    mc_samples: int = Field(256, ge=2)


class CoupleSection(_Strict):
    initial_y: FieldSpec
    npairs: int = Field(100, ge=1)


class InvariantSection(_Strict):
    initial_y: Optional[FieldSpec] = None
    burn_in: Optional[float] = Field(None, ge=0)
    nbatches: int = Field(32, ge=2)


class MixingSection(_Strict):
    initial_y: FieldSpec
    npairs: int = Field(100, ge=2)
    window: tuple[float, float] = (1.0, 3.0)
    nboot: int = Field(1000, ge=10)


class KolmogorovSection(_Strict):
    alpha: Optional[float] = Field(None, gt=0)
    observable: ObservableSpec
    smoothing: SmoothingSection
    points: list[FieldSpec] = Field(min_length=1)
    ntraj: int = Field(10_000, ge=2)
    eps: float = Field(1e-2, gt=0)
    budget_seconds: Optional[float] = Field(None, gt=0)


class RateSweepSection(_Strict):
    ns: list[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64], min_length=2)
    gamma: float = Field(4.0, gt=0)
    delta: float = Field(2.0, gt=0)
    fields: list[FieldSpec] = Field(min_length=1)


class PotentialRatesSection(_Strict):
    lams: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4], min_length=2)
    npoints: int = Field(1000, ge=10)
    xmax: float = Field(5.0, gt=0)
    gamma: float = Field(4.0, gt=0)


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    output_dir: str = "aclab-output"
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    spatial: SpatialConfig = Field(default_factory=SpatialConfig)
    integrator: Optional[IntegratorSection] = None
    initial: FieldSpec = Field(default_factory=FieldSpec)
    observables: list[ObservableSpec] = Field(default_factory=list)
    ntraj: int = Field(1, ge=1)
    couple: Optional[CoupleSection] = None
    invariant: Optional[InvariantSection] = None
    mixing: Optional[MixingSection] = None
    kolmogorov: Optional[KolmogorovSection] = None
    rate_sweep: Optional[RateSweepSection] = None
    potential_rates: Optional[PotentialRatesSection] = None

    @model_validator(mode="after")
    def _sections(self):
        needs_integrator = {"simulate", "couple", "invariant", "mixing", "kolmogorov-residual"}
        if self.kind in needs_integrator and self.integrator is None:
            raise ValueError(f"kind {self.kind!r} requires an 'integrator' section (dt, T, nu)")
        section = {
            "couple": "couple", "mixing": "mixing", "kolmogorov-residual": "kolmogorov",
            "rate-sweep": "rate_sweep",
        }.get(self.kind)
        if self.kind == "potential-rates" and self.potential_rates is None:
            self.potential_rates = PotentialRatesSection()
        if section and getattr(self, section) is None:
            raise ValueError(f"kind {self.kind!r} requires a '{section}' section")
        return self

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        """sha256 of the canonical configuration, excluding where outputs are written."""
        data = self.canonical()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_mapping(path: str | Path) -> dict:
    """Read a YAML/JSON file; a run manifest is unwrapped to the configuration it records."""
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    if "config" in data and "config_hash" in data:
        data = data["config"]
    return data


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(load_mapping(path))
