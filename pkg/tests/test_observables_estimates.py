import numpy as np
import pytest

from aclab.estimates import fprime_envelope, h2_envelope, tight_envelope
from aclab.observables import OBSERVABLE_KINDS, field_from_coeffs, make_observable


def test_field_from_coeffs(model):
    assert np.allclose(field_from_coeffs(model, [0, 1.0]), model.mode(1))
    with pytest.raises(ValueError):
        field_from_coeffs(model, np.ones(model.nmodes + 1))


def test_unknown_kind(model):
    with pytest.raises(ValueError):
        make_observable({"kind": "quartic"}, model)


@pytest.mark.parametrize("spec", [
    {"kind": "cosine", "w": [2.0, 1.0]},
    {"kind": "coordinate", "w": [1.0, -0.5, 0.25]},
    {"kind": "gauss-radial", "x0": [0.3]},
    {"kind": "constant", "value": -0.4},
])
def test_bounded_with_bounded_differences(spec, model, rng):
    g = make_observable(spec, model)
    X = rng.uniform(-1.5, 1.5, (500, model.npts))
    Z = rng.standard_normal((500, model.npts))
    Z /= np.sqrt(model.inner(Z, Z))[:, None]
    v = g(X)
    assert np.all(np.abs(v) <= g.sup_norm + 1e-15)
    assert np.ptp(v) <= g.oscillation + 1e-15
    h = 1e-3
    d1 = np.abs(g(X + h * Z) - g(X)) / h
    assert np.all(d1 <= g.lipschitz + 1e-6)
    d2 = np.abs(g(X + h * Z) - 2 * v + g(X - h * Z)) / h**2
    assert np.all(np.isfinite(d2))
    assert np.all(d2 <= 2 + g.lipschitz**2 + 1e-3)


def test_names_and_kinds(model):
    assert set(OBSERVABLE_KINDS) == {"constant", "cosine", "gauss-radial", "coordinate"}
    assert make_observable({"kind": "cosine", "name": "c2"}, model).name == "c2"


@pytest.mark.parametrize("env", [tight_envelope, fprime_envelope])
def test_envelopes_affine_in_t(env, pot, noise):
    t = np.array([0.0, 1.0, 2.0, 3.0])
    e = env(0.5, t, pot, noise, 1.0, 1.0)
    assert np.allclose(np.diff(e, 2), 0.0, atol=1e-12)
    assert np.all(np.diff(e) > 0)


def test_h2_envelope(pot, noise):
    t = np.linspace(0, 5, 11)
    e = h2_envelope(0.5, 3.0, t, pot, noise, 1.0, 1.0)
    assert np.all(np.diff(e) > 0)
    assert e[0] >= 3.0
