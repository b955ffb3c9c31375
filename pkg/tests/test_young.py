import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orliczhom.young import (
    YoungFunction,
    conjugate_function,
    delta2_nabla2,
    luxemburg_norm,
    phi_conjugate,
    phi_eval,
    phi_inverse,
    piecewise_convex,
    power,
    power_log,
    probe_grid,
    sup_transform,
)
from orliczhom.fields import TorusField, unit_cell, box

FAMILY = [power(1.5), power(2.0), power(3.0), power_log(2.0), power_log(1.5, shift=4.0),
          piecewise_convex([(0.5, 0.1), (1.0, 0.5), (2.0, 2.0), (4.0, 9.0)])]


def brute_conjugate(phi, s, tmax=60.0, n=2_000_001):
    t = np.linspace(0.0, tmax, n)
    return float(np.max(s * t - phi_eval(phi, t)))


# -- evaluation ---------------------------------------------------------------

def test_power_values():
    assert phi_eval(power(2), 2.0) == 2.0
    assert phi_eval(power(3), 1.0) == pytest.approx(1.0 / 3.0, rel=1e-15)


@pytest.mark.parametrize("phi", FAMILY)
def test_zero_at_origin(phi):
    assert phi_eval(phi, 0.0) == 0.0


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        phi_eval(power(2), -1.0)


@pytest.mark.parametrize("phi", FAMILY)
def test_convex_positive_and_superlinear(phi):
    t = np.geomspace(1e-4, 1e4, 400)
    v = phi_eval(phi, t)
    assert np.all(v > 0)
    # second differences on a uniform grid
    u = np.linspace(0.0, 20.0, 2001)
    w = phi_eval(phi, u)
    assert np.all(np.diff(w, 2) >= -1e-9 * (1 + w[2:]))
    dyadic = 2.0 ** np.arange(-20, 21)
    ratio = phi_eval(phi, dyadic) / dyadic
    assert np.all(np.diff(ratio) > 0)
    assert ratio[0] < 1e-2 * ratio[20] and ratio[-1] > 1e2 * ratio[20]


def test_invalid_parameters():
    with pytest.raises(ValueError):
        power(1.0)
    with pytest.raises(ValueError):
        power_log(2.0, shift=2.0)
    with pytest.raises(ValueError):
        piecewise_convex([(1.0, 1.0), (2.0, 1.5)])  # concave slopes


def test_serialization_round_trip():
    for phi in FAMILY:
        again = YoungFunction.from_json(phi.to_json())
        t = np.linspace(0, 5, 11)
        assert np.array_equal(phi_eval(again, t), phi_eval(phi, t))
        assert set(phi.to_dict()) == {"kind", "params", "t0"}


# -- conjugates ---------------------------------------------------------------

def test_conjugate_closed_form_example():
    assert phi_conjugate(power(2), 3.0) == pytest.approx(4.5, rel=1e-15)


@pytest.mark.parametrize("phi", FAMILY)
def test_conjugate_at_zero(phi):
    assert phi_conjugate(phi, 0.0) == 0.0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_numeric_conjugate_matches_closed_form(p):
    q = p / (p - 1)
    s = np.linspace(0.1, 10, 50)
    num = phi_conjugate(power(p), s, method="numeric")
    np.testing.assert_allclose(num, s**q / q, rtol=1e-6)


def test_power_log_conjugate_against_dense_grid():
    phi = power_log(2.0)
    assert phi_conjugate(phi, 1.0) == pytest.approx(brute_conjugate(phi, 1.0, tmax=2.0), rel=1e-6)
    for s in (0.5, 4.0, 20.0):
        assert phi_conjugate(phi, s) == pytest.approx(brute_conjugate(phi, s, tmax=10.0), rel=1e-6)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_double_conjugate_recovers_power(p):
    conj = conjugate_function(power(p), method="numeric")
    t = np.linspace(0.1, 10, 25)
    back, _ = sup_transform(conj, t)
    np.testing.assert_allclose(back, t**p / p, rtol=1e-6)


@pytest.mark.parametrize("phi", FAMILY)
def test_fenchel_young_inequality(phi):
    s = np.linspace(0, 8, 41)
    t = np.linspace(0, 8, 41)
    cs = phi_conjugate(phi, s)
    S, Tt = np.meshgrid(s, t, indexing="ij")
    slack = phi_eval(phi, Tt) + cs[:, None] - S * Tt
    assert slack.min() >= -1e-9


@given(st.floats(0.0, 50.0), st.sampled_from(FAMILY[:5]))
@settings(max_examples=60, deadline=None)
def test_fenchel_young_property(s, phi):
    cs = phi_conjugate(phi, s)
    t = np.linspace(0, 10, 101)
    assert np.all(phi_eval(phi, t) + cs - s * t >= -1e-9 * (1 + cs))


# -- inverse ------------------------------------------------------------------

def test_inverse_examples():
    assert phi_inverse(power(2), 2.0) == pytest.approx(2.0, abs=1e-12)
    assert phi_inverse(power(3), 1.0 / 3.0) == pytest.approx(1.0, abs=1e-12)
    assert phi_inverse(power_log(2), 0.0) == 0.0


@pytest.mark.parametrize("phi", FAMILY)
def test_inverse_of_eval_is_identity(phi):
    t = np.concatenate([np.linspace(0, 3, 31), np.geomspace(3, 1e3, 20)])
    np.testing.assert_allclose(phi_inverse(phi, phi_eval(phi, t)), t, rtol=1e-9, atol=1e-9)


# -- doubling certificates ----------------------------------------------------

def test_power_two_certificate():
    cert = delta2_nabla2(power(2))
    assert cert.alpha == pytest.approx(4.0, rel=1e-12)
    assert cert.beta == 2.0
    assert cert.certified
    assert cert.t0 == 1.0 and cert.probe_max == 1e6


def brute_alpha(phi, t0, tmax):
    t = np.geomspace(t0, tmax, 400_001)
    return float(np.max(phi_eval(phi, 2 * t) / phi_eval(phi, t)))


def brute_beta(phi, t0, tmax, step=1 / 64):
    t = np.geomspace(t0, tmax, 20_001)
    for k in range(0, 64 * 10 + 1):
        b = 2.0 ** (k * step)
        if np.all(phi_eval(phi, b * t) / (2 * b * phi_eval(phi, t)) >= 1 - 1e-12):
            return b
    return math.inf


def test_power_log_certificate_against_brute_force():
    phi = power_log(2.0)
    cert = delta2_nabla2(phi)
    assert cert.certified
    assert cert.alpha == pytest.approx(brute_alpha(phi, 1.0, 1e6), abs=1e-3)
    assert cert.alpha >= 4.0
    assert cert.beta == pytest.approx(brute_beta(phi, 1.0, 1e6), rel=2 ** (1 / 64) - 1 + 1e-12)


def test_certificate_inequalities_hold_on_probes():
    for phi in FAMILY[:5]:
        c = delta2_nabla2(phi, probe_max=1e4)
        t = probe_grid(c.t0, c.probe_max)
        assert np.all(phi_eval(phi, 2 * t) <= c.alpha * phi_eval(phi, t) * (1 + 1e-12))
        assert np.all(phi_eval(phi, t) <= phi_eval(phi, c.beta * t) / (2 * c.beta) * (1 + 1e-9))


def test_certificate_violation_reported():
    # t^1.05 needs beta = 2^20, far outside the beta grid
    c = delta2_nabla2(power(1.05), beta_max=1024.0)
    assert c.status == "violated" and c.violation_at is not None


def test_certificate_needs_valid_range():
    with pytest.raises(ValueError):
        delta2_nabla2(power(2), t0=10.0, probe_max=1.0)


# -- Luxemburg norm -----------------------------------------------------------

def test_luxemburg_examples():
    g = box((8, 8), (1.0, 1.0))
    ones = TorusField(g, np.ones((9, 9, 1)))
    assert luxemburg_norm(ones, power(2)) == pytest.approx(1 / math.sqrt(2), rel=1e-10)
    assert luxemburg_norm(TorusField(g, np.zeros((9, 9, 1))), power(2)) == 0.0


@pytest.mark.parametrize("phi", FAMILY)
@pytest.mark.parametrize("c", [0.5, 2.0])
def test_luxemburg_constant_closed_form(phi, c):
    assert luxemburg_norm(np.full(100, c), phi) == pytest.approx(c / phi_inverse(phi, 1.0), rel=1e-8)


def test_luxemburg_uses_grid_measure():
    g = box((4,), (2.0,))
    u = TorusField(g, np.ones((5, 1)))
    # 2 * Phi(1/k) = 1 with Phi(t) = t^2/2 gives k = 1
    assert luxemburg_norm(u, power(2)) == pytest.approx(1.0, rel=1e-10)


def test_luxemburg_vector_values_use_euclidean_norm():
    g = unit_cell(4, 1)
    u = TorusField(g, np.tile([3.0, 4.0], (5, 1)))
    assert luxemburg_norm(u, power(2)) == pytest.approx(5 / math.sqrt(2), rel=1e-10)


@pytest.mark.parametrize("phi", FAMILY)
def test_luxemburg_homogeneity_and_triangle(phi):
    rng = np.random.default_rng(7)
    for _ in range(100):
        u, v = rng.standard_normal((2, 64, 2)) * rng.uniform(0.1, 5)
        nu, nv = luxemburg_norm(u, phi), luxemburg_norm(v, phi)
        assert luxemburg_norm(u + v, phi) <= nu + nv + 1e-8
    for c in (0.5, 3.0):
        assert luxemburg_norm(c * u, phi) == pytest.approx(c * nu, rel=1e-8)
        assert luxemburg_norm(-c * u, phi) == pytest.approx(c * nu, rel=1e-8)


def test_luxemburg_tiny_fields_scale_exactly():
    v = np.array([6.4e-180, -3.2e-180])
    assert luxemburg_norm(v, power(2)) == pytest.approx(luxemburg_norm(v * 1e180, power(2)) * 1e-180, rel=1e-12)
    assert luxemburg_norm(np.array([5e-324]), power(2)) > 0.0
