"""Time stepping for the stochastic Allen-Cahn equation.

Two schemes share one ensemble driver:

* ``resolvent_splitting`` treats the monotone part of the singular drift with
  the pointwise resolvent ``J_dt``, which maps every real number into (-1, 1);
* ``regularized_explicit`` is semi-implicit Euler-Maruyama with the Lipschitz
  coefficients of :class:`~aclab.smoothing.RegularizedCoefficients`.

Ensembles are arrays of shape ``(ntraj, ncopy, npts)``.  Copies of a
trajectory (coupled pairs, perturbed initial data) are driven by the same
increments.  Each trajectory draws its increments from its own generator,
seeded from ``(seed, trajectory id)``, so results do not depend on how
trajectories are grouped into blocks or workers.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .noise import NoiseFamily, diffusion_apply
from .potential import PotentialSpec, eval_F, eval_F_prime, resolvent
from .smoothing import RegularizedCoefficients
from .spatial import SpatialModel, implicit_heat

__all__ = [
    "BoundViolation",
    "IntegratorConfig",
    "TrajectoryState",
    "SimulationResult",
    "CoupledResult",
    "FirstVariationResult",
    "trajectory_rng",
    "step",
    "step_regularized",
    "simulate",
    "simulate_coupled",
    "first_variation",
    "energy",
]

SCHEMES = ("resolvent_splitting", "regularized_explicit")


class BoundViolation(ArithmeticError):
    """A resolvent-splitting state left the open interval (-1, 1)."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    T: float
    nu: float = 1.0
    scheme: str = "resolvent_splitting"
    seed: int = 0
    record_every: int = 1
    # each step consumes 2**brownian_level fine Gaussian increments, so runs
    # with (dt, level) and (dt/2, level-1) see the same Brownian path
    brownian_level: int = 0
    chunk_steps: int = 256

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.dt > self.T * (1 + 1e-12):
            raise ValueError("dt must not exceed T")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1 or self.brownian_level < 0 or self.chunk_steps < 1:
            raise ValueError("record_every, chunk_steps must be >= 1 and brownian_level >= 0")

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class TrajectoryState:
    t: float
    u: np.ndarray
    rng: np.random.Generator | None = None

    def check_bounds(self):
        if not np.all(np.abs(self.u) < 1.0):
            raise BoundViolation(f"|u| reached 1 at t={self.t}")


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(traj_id),)))


class _Increments:
    """Per-trajectory Brownian increments drawn in chunks of steps."""

    def __init__(self, cfg: IntegratorConfig, traj_ids, num_modes: int):
        self.gens = [trajectory_rng(cfg.seed, i) for i in traj_ids]
        self.sub = 2**cfg.brownian_level
        self.scale = math.sqrt(cfg.dt / self.sub)
        self.M = num_modes
        self.chunk = cfg.chunk_steps
        self.buf = None
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.buf is None or self.pos >= self.buf.shape[0]:
            self.buf = np.stack([g.standard_normal((self.chunk, self.sub, self.M)) for g in self.gens], axis=1)
            self.buf = self.buf.sum(axis=2) * self.scale
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def _splitting(u, dW, dt, nu, model, potential, noise):
    w = u + potential.K * dt * u + diffusion_apply(noise, u, dW)
    return resolvent(potential, dt, implicit_heat(model, nu * dt, w))


def _regularized(u, dW, dt, nu, model, coeffs):
    w = u - dt * coeffs.drift(u) + coeffs.diffusion_apply(u, dW)
    return implicit_heat(model, nu * dt, w)


def step(state: TrajectoryState, config: IntegratorConfig, model: SpatialModel,
         potential: PotentialSpec, noise: NoiseFamily, dW) -> TrajectoryState:
    """One resolvent-splitting step; ``dW`` holds the ``num_modes`` increments."""
    u = _splitting(state.u, np.asarray(dW, dtype=float), config.dt, config.nu, model, potential, noise)
    new = TrajectoryState(state.t + config.dt, u, state.rng)
    new.check_bounds()
    return new


def step_regularized(state: TrajectoryState, config: IntegratorConfig, model: SpatialModel,
                     coeffs: RegularizedCoefficients, dW) -> TrajectoryState:
    u = _regularized(state.u, np.asarray(dW, dtype=float), config.dt, config.nu, model, coeffs)
    return TrajectoryState(state.t + config.dt, u, state.rng)


def energy(model: SpatialModel, potential: PotentialSpec, u, nu: float = 1.0):
    """Discrete ``int (nu/2 |grad u|^2 + F(u))``."""
    return 0.5 * nu * model.grad_sq(u) + np.sum(model.weights * eval_F(potential, u), axis=-1)


@dataclass
class SimulationResult:
    times: np.ndarray
    observables: dict
    H: np.ndarray            # ||u||_H^2 at record times, shape (ntraj, nrec)
    V: np.ndarray
    Z: np.ndarray
    sup_H: np.ndarray        # running sup of ||u||_H^2
    sup_V: np.ndarray
    int_V: np.ndarray        # running integral of ||u||_V^2
    int_Z: np.ndarray
    Fp: np.ndarray           # ||F'(u)||_H^2 at record times (resolvent scheme only)
    int_Fp: np.ndarray       # running integral of ||F'(u)||_H^2
    martingale: np.ndarray   # running sum of (u, B(u) dW)_H
    terminal: np.ndarray
    max_abs: float
    wall: float = 0.0
    traj_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    states: np.ndarray | None = None   # (ntraj, nrec, npts) when requested

    @property
    def ntraj(self) -> int:
        return self.H.shape[0]

    def mean(self, key: str):
        arr = self.observables[key] if key in self.observables else getattr(self, key)
        return arr.mean(axis=0)

    @staticmethod
    def concat(parts):
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)
        return SimulationResult(
            times=first.times,
            observables={k: np.concatenate([p.observables[k] for p in parts]) for k in first.observables},
            H=cat("H"), V=cat("V"), Z=cat("Z"), sup_H=cat("sup_H"), sup_V=cat("sup_V"),
            int_V=cat("int_V"), int_Z=cat("int_Z"),
            Fp=cat("Fp"), int_Fp=cat("int_Fp"), martingale=cat("martingale"), terminal=cat("terminal"),
            max_abs=max(p.max_abs for p in parts), wall=sum(p.wall for p in parts),
            traj_ids=cat("traj_ids"),
            states=None if first.states is None else cat("states"),
        )


def _record_times(cfg: IntegratorConfig):
    ks = list(range(0, cfg.nsteps + 1, cfg.record_every))
    if ks[-1] != cfg.nsteps:
        ks.append(cfg.nsteps)
    return np.array(ks)


def _prepare_x0(x0, model, ntraj):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != model.npts:
        raise ValueError(f"initial field has {x0.shape[-1]} nodes, model has {model.npts}")
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (ntraj, model.npts))
    return np.array(x0, dtype=float)


def _advance_fn(cfg, model, potential, noise, coeffs):
    if cfg.scheme == "resolvent_splitting":
        return lambda u, dW: _splitting(u, dW, cfg.dt, cfg.nu, model, potential, noise)
    if coeffs is None:
        raise ValueError("regularized scheme needs RegularizedCoefficients")
    return lambda u, dW: _regularized(u, dW, cfg.dt, cfg.nu, model, coeffs)


def _simulate_block(x0, cfg, model, potential, noise, observables, traj_ids, coeffs, keep_states=False):
    t0 = time.perf_counter()
    ntraj = len(traj_ids)
    u = _prepare_x0(x0, model, ntraj)
    split = cfg.scheme == "resolvent_splitting"
    if split and not np.all(np.abs(u) <= 1.0):
        raise ValueError("initial field must satisfy |x0| <= 1 for the resolvent scheme")
    advance = _advance_fn(cfg, model, potential, noise, coeffs)
    inc = _Increments(cfg, traj_ids, noise.num_modes)
    rec = _record_times(cfg)
    nrec = rec.size
    store = {k: np.zeros((ntraj, nrec)) for k in ("H", "V", "Z", "sup_H", "sup_V", "int_V", "int_Z", "Fp", "int_Fp", "martingale")}
    states = np.zeros((ntraj, nrec, model.npts)) if keep_states else None
    obs = {o.name: np.zeros((ntraj, nrec)) for o in observables}
    amps = noise.amplitudes
    lc = model.lamC
    w = model.weights
    dt = cfg.dt

    def norms(u):
        a = model.to_modes(u)
        a2 = a * a
        return a2.sum(-1), (lc * a2).sum(-1), (lc * lc * a2).sum(-1)

    def fp_sq(u):
        if not split:
            return np.zeros(u.shape[0])
        with np.errstate(divide="ignore"):
            return np.sum(w * eval_F_prime(potential, u) ** 2, axis=-1)

    H, V, Z = norms(u)
    sup_H, sup_V = H.copy(), V.copy()
    int_V, int_Z, int_Fp, mart = (np.zeros(ntraj) for _ in range(4))
    Fp_prev = fp_sq(u) if split and np.all(np.abs(u) < 1) else np.zeros(ntraj)
    max_abs = float(np.max(np.abs(u)))
    j = 0

    def put(j, u, H, V, Z):
        store["H"][:, j], store["V"][:, j], store["Z"][:, j] = H, V, Z
        store["sup_H"][:, j], store["int_V"][:, j] = sup_H, int_V
        store["sup_V"][:, j], store["int_Z"][:, j] = sup_V, int_Z
        store["Fp"][:, j], store["int_Fp"][:, j], store["martingale"][:, j] = Fp_prev, int_Fp, mart
        if states is not None:
            states[:, j] = u
        for o in observables:
            obs[o.name][:, j] = o(u)

    put(0, u, H, V, Z)
    j = 1
    for k in range(1, cfg.nsteps + 1):
        dW = inc.next()
        if split:
            mart += np.sum(w * u * noise.profile(u), axis=-1) * (dW @ amps)
        else:
            mart += np.sum(w * u * coeffs.diffusion_profile(u), axis=-1) * (dW @ amps)
        u = advance(u, dW)
        if split:
            m = float(np.max(np.abs(u)))
            if not m < 1.0:
                raise BoundViolation(f"|u| reached {m!r} at step {k}")
            max_abs = max(max_abs, m)
        H2, V2, Z2 = norms(u)
        int_V += 0.5 * dt * (V + V2)
        int_Z += 0.5 * dt * (Z + Z2)
        if split:
            Fp = fp_sq(u)
            int_Fp += 0.5 * dt * (Fp_prev + Fp)
            Fp_prev = Fp
        H, V, Z = H2, V2, Z2
        np.maximum(sup_H, H, out=sup_H)
        np.maximum(sup_V, V, out=sup_V)
        if not np.all(np.isfinite(H)):
            raise FloatingPointError(f"non-finite state at step {k}")
        if j < nrec and k == rec[j]:
            put(j, u, H, V, Z)
            j += 1
    if split:
        max_abs = max(max_abs, float(np.max(np.abs(u))))
    return SimulationResult(
        times=rec * dt, observables=obs, terminal=u, max_abs=max_abs,
        wall=time.perf_counter() - t0, traj_ids=np.asarray(traj_ids), states=states, **store,
    )


def _blocks(ntraj: int, workers: int, offset: int = 0):
    workers = max(1, min(workers, ntraj))
    edges = np.linspace(0, ntraj, workers + 1).astype(int)
    return [list(range(offset + a, offset + b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _slice_x0(x0, ids, offset):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return x0
    return x0[ids[0] - offset: ids[-1] - offset + 1]


def simulate(x0, config: IntegratorConfig, model: SpatialModel, potential: PotentialSpec,
             noise: NoiseFamily, observables=(), ntraj: int = 1, coeffs: RegularizedCoefficients | None = None,
             workers: int = 1, traj_offset: int = 0, keep_states: bool = False) -> SimulationResult:
    """Run ``ntraj`` independent trajectories from ``x0`` (one field or one per trajectory).

    Records observables, squared H/V/Z norms, running sup of the H norm and
    running time integrals every ``config.record_every`` steps.
    """
    blocks = _blocks(ntraj, workers, traj_offset)
    args = [(_slice_x0(x0, b, traj_offset), config, model, potential, noise, tuple(observables), b, coeffs,
             keep_states) for b in blocks]
    if len(blocks) == 1:
        return _simulate_block(*args[0])
    with ProcessPoolExecutor(max_workers=len(blocks)) as ex:
        parts = list(ex.map(_simulate_block, *zip(*args)))
    return SimulationResult.concat(parts)


@dataclass
class CoupledResult:
    times: np.ndarray
    diff_sq: np.ndarray      # ||u^x - u^y||_H^2, shape (npairs, nrec)
    max_abs: float

    @property
    def mean(self) -> np.ndarray:
        return self.diff_sq.mean(axis=0)


def _coupled_block(x0, y0, cfg, model, potential, noise, traj_ids, coeffs):
    ntraj = len(traj_ids)
    u = np.stack([_prepare_x0(x0, model, ntraj), _prepare_x0(y0, model, ntraj)], axis=1)
    split = cfg.scheme == "resolvent_splitting"
    if split and not np.all(np.abs(u) <= 1.0):
        raise ValueError("initial fields must satisfy |x| <= 1 for the resolvent scheme")
    advance = _advance_fn(cfg, model, potential, noise, coeffs)
    inc = _Increments(cfg, traj_ids, noise.num_modes)
    rec = _record_times(cfg)
    out = np.zeros((ntraj, rec.size))
    w = model.weights
    out[:, 0] = np.sum(w * (u[:, 0] - u[:, 1]) ** 2, axis=-1)
    max_abs = float(np.max(np.abs(u)))
    j = 1
    for k in range(1, cfg.nsteps + 1):
        dW = inc.next()[:, None, :]
        u = advance(u, dW)
        if split:
            m = float(np.max(np.abs(u)))
            if not m < 1.0:
                raise BoundViolation(f"|u| reached {m!r} at step {k}")
            max_abs = max(max_abs, m)
        if j < rec.size and k == rec[j]:
            out[:, j] = np.sum(w * (u[:, 0] - u[:, 1]) ** 2, axis=-1)
            j += 1
    return CoupledResult(rec * cfg.dt, out, max_abs)


def simulate_coupled(x0, y0, config: IntegratorConfig, model: SpatialModel, potential: PotentialSpec,
                     noise: NoiseFamily, ntraj: int = 1, coeffs: RegularizedCoefficients | None = None,
                     workers: int = 1) -> CoupledResult:
    """Synchronous coupling: both solutions consume the identical increment arrays."""
    blocks = _blocks(ntraj, workers)
    args = [(x0, y0, config, model, potential, noise, b, coeffs) for b in blocks]
    if len(blocks) == 1:
        return _coupled_block(*args[0])
    with ProcessPoolExecutor(max_workers=len(blocks)) as ex:
        parts = list(ex.map(_coupled_block, *zip(*args)))
    return CoupledResult(parts[0].times, np.concatenate([p.diff_sq for p in parts]),
                         max(p.max_abs for p in parts))


@dataclass
class FirstVariationResult:
    times: np.ndarray
    v_norm_sq: np.ndarray    # ||v(t)||_H^2, shape (ntraj, nrec)
    v_terminal: np.ndarray
    u_terminal: np.ndarray
    z_norm_sq: float


def first_variation(x0, z, config: IntegratorConfig, model: SpatialModel, coeffs: RegularizedCoefficients,
                    ntraj: int = 1, traj_offset: int = 0) -> FirstVariationResult:
    """Carrier trajectory and its derivative along ``z`` under common noise.

    The linearisation differentiates the discrete map itself (including the
    tabulated coefficients), so it matches difference quotients of
    :func:`simulate` with the same seed up to ``O(eps)``.
    """
    cfg = config if config.scheme == "regularized_explicit" else replace(config, scheme="regularized_explicit")
    ids = list(range(traj_offset, traj_offset + ntraj))
    u = _prepare_x0(x0, model, ntraj)
    v = _prepare_x0(z, model, ntraj)
    inc = _Increments(cfg, ids, coeffs.noise.num_modes)
    rec = _record_times(cfg)
    out = np.zeros((ntraj, rec.size))
    w = model.weights
    out[:, 0] = np.sum(w * v * v, axis=-1)
    amps = coeffs.amplitudes
    nudt = cfg.nu * cfg.dt
    j = 1
    for k in range(1, cfg.nsteps + 1):
        xi = (inc.next() @ amps)[:, None]
        f, df = coeffs.drift_jvp(u, v)
        b, db = coeffs.diffusion_jvp(u, v)
        u = implicit_heat(model, nudt, u - cfg.dt * f + b * xi)
        v = implicit_heat(model, nudt, v - cfg.dt * df + db * xi)
        if j < rec.size and k == rec[j]:
            out[:, j] = np.sum(w * v * v, axis=-1)
            j += 1
    return FirstVariationResult(rec * cfg.dt, out, v, u, float(np.sum(w * np.asarray(z) ** 2)))
