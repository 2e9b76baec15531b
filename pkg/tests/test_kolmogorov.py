import math

import numpy as np
import pytest

from aclab.integrator import IntegratorConfig, simulate
from aclab.kolmogorov import (
    ConditioningError,
    KolmogorovProblem,
    alpha0,
    apply_L0,
    bar_alpha,
    diffusion_gap_lambda,
    drift_gap_lambda,
    envelope,
    fit_exponent,
    in_A_str,
    resolvent_phi,
    resolvent_weights,
    residual_check,
    scaling_sweep,
)
from aclab.noise import NoiseFamily, hs_norm_sq
from aclab.observables import make_observable
from aclab.potential import PotentialSpec
from aclab.smoothing import RegularizedCoefficients, SmoothingParams
from aclab.spatial import build_model

# sum_{k<=5} k^-4, the HS norm of B(0) for five modes with c_k = k^-2
S5 = 1.0803519290123457


def test_bar_alpha():
    assert bar_alpha(0, 0) == 0.5
    assert bar_alpha(1, S5) == pytest.approx(0.5 * (2 + 33 * S5 + 1), rel=1e-14)
    assert bar_alpha(1, S5) == pytest.approx(19.326, abs=5e-4)
    ks, cs = np.linspace(0, 3, 7), np.linspace(0, 6, 7)
    vals = np.array([[bar_alpha(k, c) for c in cs] for k in ks])
    assert np.all(np.diff(vals, axis=0) >= 0) and np.all(np.diff(vals, axis=1) >= 0)


def test_alpha0():
    K0 = (1 + math.pi**2) ** -0.5
    assert alpha0(1.0, K0, S5, 1.0) == pytest.approx(math.pi**2 - S5 / 2 - 1, rel=1e-12)
    assert alpha0(1.0, K0, S5, 1.0) == pytest.approx(8.329, abs=1e-3)
    assert alpha0(1.0, 1.0, 2.0, 1.0) == -2.0
    slope = alpha0(2.0, K0, S5, 1.0) - alpha0(1.0, K0, S5, 1.0)
    assert slope == pytest.approx(1 / K0**2 - 1, rel=1e-12)


def test_problem_checks_alpha():
    m = build_model(1, 8)
    g = make_observable({"kind": "cosine"}, m)
    noise = NoiseFamily(num_modes=4)
    thr = bar_alpha(1.0, noise.C_B)
    with pytest.raises(ValueError, match="bar_alpha"):
        KolmogorovProblem(thr - 1, g, SmoothingParams(0.5, 4))
    prob = KolmogorovProblem(thr + 1, g, SmoothingParams(0.5, 4))
    assert prob.M == 4 and prob.threshold == pytest.approx(thr)


def test_resolvent_weights():
    for alpha, dt, n in ((80.0, 1e-3, 200), (5.0, 0.01, 50)):
        w = resolvent_weights(alpha, dt, n)
        assert w.sum() == pytest.approx(1 / alpha, rel=1e-12)
        # exact for linear g(t) = t on [0, T] plus the tail model g(t) = T for t > T
        T = n * dt
        exact = (1 - math.exp(-alpha * T) * (1 + alpha * T)) / alpha**2 + T * math.exp(-alpha * T) / alpha
        assert w @ (dt * np.arange(n + 1)) == pytest.approx(exact, rel=1e-10)


@pytest.fixture(scope="module")
def setup():
    m = build_model(1, 16)
    pot = PotentialSpec()
    noise = NoiseFamily(num_modes=4)
    params = SmoothingParams(0.5, 4)
    rc = RegularizedCoefficients(pot, noise, m, params)
    cfg = IntegratorConfig(dt=2e-3, T=0.1, scheme="regularized_explicit")
    alpha = bar_alpha(pot.K, noise.C_B) + 1
    return m, pot, noise, params, rc, cfg, alpha


def test_constant_g(setup):
    m, pot, noise, params, rc, cfg, alpha = setup
    g = make_observable({"kind": "constant", "value": 0.7}, m)
    prob = KolmogorovProblem(alpha, g, params, pot, noise)
    est = resolvent_phi(0.3 * m.mode(0), prob, m, cfg, ntraj=20, coeffs=rc)
    assert est.value == pytest.approx(0.7 / alpha, rel=1e-12)
    rep = residual_check(0.3 * m.mode(0), prob, m, cfg, ntraj=20, coeffs=rc)
    assert abs(rep.r_direct) <= 1e-10 and abs(rep.r_semigroup) <= 1e-9
    assert rep.passed and rep.bound_ok


def test_phi_bound_positivity_and_seed_sets(setup):
    m, pot, noise, params, rc, cfg, alpha = setup
    g = make_observable({"kind": "gauss-radial", "x0": [0.2]}, m)
    prob = KolmogorovProblem(alpha, g, params, pot, noise)
    x = 0.4 * m.mode(0)
    a = resolvent_phi(x, prob, m, cfg, ntraj=400, coeffs=rc)
    b = resolvent_phi(x, prob, m, IntegratorConfig(dt=2e-3, T=0.1, seed=77), ntraj=400, coeffs=rc)
    assert 0 <= a.value <= g.sup_norm / alpha
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr) + 2 * a.tail_bound
    assert a.tail_bound == pytest.approx(2 * math.exp(-alpha * 0.1) / alpha)


def test_budget_flags_partial(setup):
    m, pot, noise, params, rc, cfg, alpha = setup
    g = make_observable({"kind": "cosine"}, m)
    prob = KolmogorovProblem(alpha, g, params, pot, noise)
    pf = resolvent_phi(0.1 * m.mode(0), prob, m, cfg, ntraj=400, coeffs=rc, budget=1e-9, block=100)
    assert pf.partial and pf.ntraj < 400


def test_L0_constant_and_linear():
    m = build_model(1, 16)
    x = 0.3 * m.mode(0) + 0.1 * m.mode(2)
    fields = np.zeros((4, m.npts))
    const = apply_L0(lambda X: np.full((1, X.shape[0]), 2.0), x, np.zeros(m.npts), fields, m)
    assert const.value == 0.0
    w = m.mode(1) + 0.5 * m.mode(0)
    lin = apply_L0(lambda X: m.inner(X, w)[None], x, np.zeros(m.npts), fields, m)
    assert lin.value == pytest.approx(m.inner(-m.laplacian(x), w), rel=1e-9)
    with pytest.raises(ConditioningError):
        apply_L0(lambda X: m.inner(X, w)[None], x, np.zeros(m.npts), fields, m, eps=1e-12)


def test_L0_quadratic_trace_matches_hs_norm():
    m = build_model(1, 16)
    noise = NoiseFamily(num_modes=4)
    x = 0.5 * m.mode(0)
    fields = noise.amplitudes[:, None] * noise.profile(x)[None]
    res = apply_L0(lambda X: m.inner(X, X)[None], x, np.zeros(m.npts), fields, m, nu=1e-12)
    # D2 phi = 2 I, so the trace term is -||B(x)||_HS^2; the transport term is 2 (nu(-Lap x), x)
    assert res.trace == pytest.approx(-hs_norm_sq(noise, x, m.weights), rel=1e-9)


def test_residuals_small_run(setup):
    m, pot, noise, params, rc, cfg, alpha = setup
    g = make_observable({"kind": "cosine", "w": [2, 1, 0.5]}, m)
    prob = KolmogorovProblem(alpha, g, params, pot, noise)
    rep = residual_check(0.2 * m.mode(0), prob, m, cfg, ntraj=400, coeffs=rc)
    assert rep.bound_ok
    assert rep.direct_ok and rep.semigroup_ok and rep.consistent
    assert abs(rep.d2_along_noise) <= rep.d2_envelope
    d = rep.as_dict()
    assert set(d) >= {"r_direct", "err_direct", "r_semigroup", "err_semigroup", "passed"}


def test_in_A_str(model, pot):
    assert in_A_str(model, pot, 0.5 * model.mode(0) / np.sqrt(2))
    assert not in_A_str(model, pot, np.ones(model.npts))
    assert not in_A_str(model, pot, np.full(model.npts, np.nan))


def test_integrator_states_are_strictly_admissible(model, pot, noise):
    x0 = model.field(lambda s: 0.99 * np.sin(np.pi * s))
    res = simulate(x0, IntegratorConfig(dt=1e-3, T=0.2, record_every=20), model, pot, noise, ntraj=5,
                   keep_states=True)
    assert all(in_A_str(model, pot, u) for u in res.states.reshape(-1, model.npts))


def test_fit_and_envelope():
    xs = np.array([1.0, 2.0, 4.0])
    assert fit_exponent(xs, 3 * xs**-1.5) == pytest.approx(-1.5)
    ns = np.array([4, 8, 16, 32, 64])
    assert fit_exponent(ns, envelope(ns)) <= -0.15
    assert envelope(1.0) == pytest.approx(3 * 2)


def test_lambda_gaps(model, pot, noise):
    f = model.mode(0) + 0.3 * model.mode(1)
    f = 0.7 * f / np.max(np.abs(f))
    lams = [0.1, 0.03, 0.01, 0.003]
    dg = drift_gap_lambda(f, pot, model, lams)[0]
    assert fit_exponent(lams, dg) >= 0.9
    bl = [0.5, 0.4, 0.3, 0.25]
    bg = diffusion_gap_lambda(f, noise, model, bl)[0]
    assert np.all(bg <= noise.C_B * model.volume * np.array(bl) ** 8)
    assert fit_exponent(bl, bg) >= 2 * 4 - 0.2


def test_scaling_sweep_small(model, pot, noise):
    f = model.mode(0) + 0.3 * model.mode(1)
    f = 0.7 * f / np.max(np.abs(f))
    tab = scaling_sweep(f, pot, noise, model, ns=(4, 8, 16))
    assert tab.drift_monotone
    assert np.all(np.diff(tab.diffusion_gap[0]) < 0)
    assert np.allclose(tab.lams, np.array([4, 8, 16]) ** -0.25)
    with pytest.raises(ValueError):
        scaling_sweep(np.ones(model.npts), pot, noise, model, ns=(4, 8))
