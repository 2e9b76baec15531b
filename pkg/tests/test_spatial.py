import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh_tridiagonal

from aclab.spatial import (
    ConfigError,
    build_model,
    covariance,
    heat_semigroup,
    implicit_heat,
    norms,
    norms_sq,
    pointwise_variance,
    sample_gaussian,
)


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
@pytest.mark.parametrize("dim,grid", [(1, 16), (1, 64), (2, 8)])
def test_orthonormal_basis(bc, dim, grid):
    m = build_model(dim, grid, 1.0, bc)
    G = m.basis.T @ (m.weights[:, None] * m.basis)
    assert np.allclose(G, np.eye(m.nmodes), atol=1e-10)
    assert np.all(np.diff(m.mu) >= 0) and np.all(m.mu >= 0)
    assert m.K0 <= 1.0
    assert (m.mu[0] > 0) if bc == "dirichlet" else (m.mu[0] == 0)


def test_dirichlet_eigenvalues(model):
    j = np.arange(1, model.nmodes + 1)
    assert np.allclose(model.mu, (j * np.pi) ** 2)
    assert model.K0 == pytest.approx((1 + math.pi**2) ** -0.5, abs=1e-6)


def test_dirichlet_modes_against_discrete_laplacian():
    # second-difference Laplacian eigenvectors are sampled sines; compare mode shapes
    m = build_model(1, 64)
    n = m.npts
    h = 1 / 64
    vals, vecs = eigh_tridiagonal(np.full(n, 2 / h**2), np.full(n - 1, -1 / h**2))
    for j in range(4):
        a = vecs[:, j] / math.sqrt(h)
        b = m.mode(j)
        assert abs(abs(a @ b) * h - 1) < 1e-10
        assert vals[j] == pytest.approx(m.mu[j], rel=1e-2)


def test_neumann(neumann):
    assert neumann.mu[0] == 0.0
    assert neumann.K0 == 1.0
    c = np.full(neumann.npts, -0.7)
    H, V, Z = norms(neumann, c)
    assert H == pytest.approx(0.7, rel=1e-12)
    assert V == pytest.approx(H, rel=1e-12)


def test_2d_separable():
    m1 = build_model(1, 8)
    m2 = build_model(2, 8)
    sums = np.sort((m1.mu[:, None] + m1.mu[None, :]).ravel())
    assert np.allclose(m2.mu, sums)
    assert m2.volume == 1.0


def test_build_errors():
    with pytest.raises(ConfigError):
        build_model(3, 8)
    with pytest.raises(ConfigError):
        build_model(1, 3)
    with pytest.raises(ConfigError):
        build_model(1, 8, bc="robin")


def test_first_eigenfunction_norms(model):
    phi = model.mode(0)
    H, V, Z = norms_sq(model, phi)
    assert H == pytest.approx(1.0)
    assert V == pytest.approx(1 + math.pi**2)
    assert Z == pytest.approx((1 + math.pi**2) ** 2)


def test_parseval_against_quadrature(model):
    x = model.field(lambda s: s * (1 - s) * np.sin(3 * s))
    H2 = norms_sq(model, x)[0]
    assert H2 == pytest.approx(np.sum(model.weights * x * x), rel=1e-8)
    # ||grad x||^2 against the exact derivative of a function in the span
    y = model.field(lambda s: np.sin(np.pi * s) + 0.3 * np.sin(2 * np.pi * s))
    exact = 0.5 * np.pi**2 + 0.3**2 * 0.5 * (2 * np.pi) ** 2
    assert model.grad_sq(y) == pytest.approx(exact, rel=1e-10)


def test_embedding_inequality(model, rng):
    x = rng.standard_normal((200, model.npts))
    H, V, _ = norms(model, x)
    assert np.all(H <= model.K0 * V * (1 + 1e-12))


def test_heat_semigroup(model, rng):
    x = rng.standard_normal(model.npts)
    assert np.allclose(heat_semigroup(model, 0.0, x), x, atol=1e-12)
    assert np.max(np.abs(heat_semigroup(model, 100.0, x))) < 1e-30
    for t in (0.01, 0.3, 2.0):
        assert norms(model, heat_semigroup(model, t, x))[0] <= math.exp(-t) * norms(model, x)[0] * (1 + 1e-12)
    with pytest.raises(ValueError):
        heat_semigroup(model, -1.0, x)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_semigroup_property(s, t, seed):
    m = build_model(1, 16)
    x = np.random.default_rng(seed).standard_normal(m.npts)
    a = heat_semigroup(m, t, heat_semigroup(m, s, x))
    b = heat_semigroup(m, s + t, x)
    assert np.allclose(a, b, atol=1e-12)


def test_implicit_heat_inverts(model, rng):
    v = rng.standard_normal(model.npts)
    w = v - 0.01 * model.laplacian(v)
    assert np.allclose(implicit_heat(model, 0.01, w), v, atol=1e-10)


def test_covariance(model):
    assert np.all(covariance(model, 0.0).q == 0.0)
    for t in (1e-3, 0.1, 1.0):
        cov = covariance(model, t)
        lc = model.lamC
        assert np.allclose(cov.q, (1 - np.exp(-2 * lc * t)) / (2 * lc**3), rtol=1e-12)
        assert cov.trace <= t * np.sum(lc**-2.0)
    with pytest.raises(ValueError):
        covariance(model, -0.1)


def test_gaussian_sampler(model, rng):
    cov = covariance(model, 0.5)
    assert np.all(sample_gaussian(model, covariance(model, 0.0), rng) == 0.0)
    y = sample_gaussian(model, cov, rng, size=10_000)
    H2 = norms_sq(model, y)[0]
    se = H2.std(ddof=1) / 100
    assert abs(H2.mean() - cov.trace) <= 3 * se
    a = model.to_modes(y)
    var = a.var(axis=0, ddof=1)
    # chi-square CI on each per-mode variance (10^4 samples, 4 sigma)
    assert np.all(np.abs(var / cov.q - 1) <= 4 * math.sqrt(2 / 9999))
    pv = y.var(axis=0, ddof=1)
    assert np.allclose(pv, pointwise_variance(model, cov), rtol=0.1)
