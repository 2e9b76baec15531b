import math

import numpy as np
import pytest

from aclab.noise import NoiseFamily
from aclab.potential import MollifierSpec, RegularizationParams, eval_F_prime, f_lambda_prime, f_lambda_second
from aclab.smoothing import RegularizedCoefficients, SmoothingParams, smooth_diffusion, smooth_drift
from aclab.spatial import norms
from aclab.tables import HermiteTable, gaussian_smooth


def _field(model, sup=0.7):
    x = model.mode(0) + 0.2 * model.mode(1)
    return x * (sup / np.max(np.abs(x)))


def test_params():
    p = SmoothingParams(0.3, 8)
    assert p.satisfies_scaling()
    assert p.t_drift == 1 / 8 and p.t_noise == 1 / 64
    q = SmoothingParams.along_schedule(16)
    assert q.lam == pytest.approx(0.5) and q.n == 16
    assert not SmoothingParams(0.3).smoothed
    assert not SmoothingParams(0.3, 8, gamma=3.0).satisfies_scaling()
    with pytest.raises(ValueError):
        SmoothingParams(0.0)


def test_hermite_table_reproduces_cubics():
    f = lambda z: z**3 - 2 * z
    fp = lambda z: 3 * z**2 - 2
    t = HermiteTable.from_function(f, fp, -2, 2, 11)
    z = np.linspace(-2, 2, 97)
    v, s = t.eval(z, deriv=True)
    assert np.allclose(v, f(z), atol=1e-12)
    assert np.allclose(s, fp(z), atol=1e-12)
    # linear continuation outside
    assert t.eval(3.0) == pytest.approx(f(2.0) + fp(2.0), abs=1e-12)


def test_hermite_slope_is_interpolant_derivative():
    t = HermiteTable.from_function(np.sin, np.cos, -3, 3, 41)
    z = np.linspace(-3.5, 3.5, 301)
    h = 1e-6
    fd = (t.eval(z + h) - t.eval(z - h)) / (2 * h)
    assert np.allclose(t.eval(z, deriv=True)[1], fd, atol=1e-6)


def test_gaussian_smooth_quadratic():
    t = HermiteTable.from_function(lambda z: z * z, lambda z: 2 * z, -6, 6, 601)
    sig = np.array([0.0, 0.3, 0.3, 0.5])
    s = gaussian_smooth(t, sig)
    m = np.linspace(-2, 2, 9)
    vals = s.eval(m[:, None] * np.ones(4))
    assert np.allclose(vals, m[:, None] ** 2 + sig**2, atol=1e-10)


def test_unsmoothed_limit_is_exact(pot, model):
    x = _field(model)
    p = SmoothingParams(0.2)
    v, se = smooth_drift(x, p, pot, model, np.random.default_rng(0))
    assert np.array_equal(v, f_lambda_prime(pot, MollifierSpec(), RegularizationParams(0.2), x))
    assert np.all(se == 0)
    rc = RegularizedCoefficients(pot, NoiseFamily(), model, p)
    assert np.allclose(rc.drift(x), v, atol=1e-9)


def test_table_route_matches_monte_carlo(pot, noise, model, rng):
    x = _field(model)
    for lam, n in ((0.5, 4), (0.3, 16)):
        p = SmoothingParams(lam, n, mc_samples=2000)
        rc = RegularizedCoefficients(pot, noise, model, p)
        mc, se = smooth_drift(x, p, pot, model, rng)
        assert np.all(np.abs(mc - rc.drift(x)) <= 4.5 * se + 1e-12)
        md, sd = smooth_diffusion(x, p, noise, model, rng)
        assert np.all(np.abs(md - rc.diffusion_fields(x)) <= 4.5 * sd + 1e-14)


def test_drift_gap_bound(pot, noise, model):
    x = _field(model)
    H, _, Z = norms(model, x)
    for lam, n in ((0.5, 4), (0.3, 16), (0.2, 64), (0.1, 256)):
        rc = RegularizedCoefficients(pot, noise, model, SmoothingParams(lam, n))
        d = rc.drift(x) - eval_F_prime(pot, x)
        gap = math.sqrt(model.inner(d, d))
        assert gap <= Z / (lam * n) + 1 / (lam * math.sqrt(n)) + lam * (1 + H)


def test_diffusion_gap_decays(pot, noise, model):
    x = _field(model)
    gaps = []
    for n in (4, 16, 64, 256):
        rc = RegularizedCoefficients(pot, noise, model, SmoothingParams.along_schedule(n))
        b = rc.diffusion_profile(x) - noise.profile(x)
        gaps.append(noise.amp_sq_sum * model.inner(b, b))
    assert np.all(np.diff(gaps) < 0)


def test_smoothed_hs_norm_bound(pot, noise, model, rng):
    rc = RegularizedCoefficients(pot, noise, model, SmoothingParams(0.3, 8))
    u = rng.uniform(-1.5, 1.5, (200, model.npts))
    assert np.all(rc.hs_norm_sq(u) <= noise.C_B * model.volume)


def test_drift_one_sided_bound(pot, noise, model, rng):
    rc = RegularizedCoefficients(pot, noise, model, SmoothingParams(0.3, 8))
    x = rng.uniform(-1.2, 1.2, (100, model.npts))
    z = rng.standard_normal((100, model.npts))
    _, dz = rc.drift_jvp(x, z)
    assert np.all(model.inner(dz, z) >= -pot.K * model.inner(z, z) * (1 + 1e-9))
    # directional differences of the nonlinear map
    h = 1e-3
    diff = (rc.drift(x + h * z) - rc.drift(x)) / h
    assert np.all(model.inner(diff, z) >= -pot.K * model.inner(z, z) * (1 + 1e-6))


def test_jvp_matches_differences(pot, noise, model, rng):
    rc = RegularizedCoefficients(pot, noise, model, SmoothingParams(0.4, 4))
    x = _field(model)
    z = rng.standard_normal(model.npts)
    for fn, jvp in ((rc.drift, rc.drift_jvp), (rc.diffusion_profile, rc.diffusion_jvp)):
        _, d = jvp(x, z)
        h = 1e-5
        fd = (fn(x + h * z) - fn(x - h * z)) / (2 * h)
        assert np.allclose(d, fd, atol=1e-5 * (1 + np.max(np.abs(d))))


def test_table_vs_direct_unsmoothed(pot, noise, model):
    rc = RegularizedCoefficients(pot, noise, model, SmoothingParams(0.25))
    z = np.linspace(-3.9, 3.9, 777)
    p = RegularizationParams(0.25)
    assert np.allclose(rc.base_drift.eval(z), f_lambda_prime(pot, rc.moll, p, z), atol=1e-8)
    assert np.allclose(rc.base_drift.eval(z, deriv=True)[1], f_lambda_second(pot, rc.moll, p, z), atol=1e-5)
