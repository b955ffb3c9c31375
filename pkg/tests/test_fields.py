import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orliczhom.errors import ConfigurationError
from orliczhom.fields import (
    GridCorrector,
    TorusField,
    TorusGrid,
    TrigCorrector,
    ZeroCorrector,
    admissible_epsilons,
    affine_field,
    box,
    check_commensurate,
    corrector_from_dict,
    discrete_gradient,
    field_to_csv,
    frac,
    laminate_field,
    load_field,
    oscillating_sequence,
    save_field,
    sawtooth,
    sawtooth_sequence,
    t_cell,
    unit_cell,
)
from orliczhom.discrete import p1_gradient

SINE = TrigCorrector([{"amp": 1 / (2 * np.pi), "factors": [["y", 0, "sin", 1]]}], 1, 2)


# -- grids and fields ---------------------------------------------------------

def test_grid_invariants():
    g = box((4, 6), (1.0, 2.0))
    assert g.n_cells == 24 and g.measure == 2.0
    assert np.allclose(g.spacing, [0.25, 1 / 3])
    with pytest.raises(ConfigurationError):
        TorusGrid((1,), (1.0,))
    with pytest.raises(ConfigurationError):
        TorusGrid((4,), (0.0,))
    assert t_cell(4, 8, 2).resolution == (32, 32)
    assert TorusGrid.from_dict(g.to_dict()) == g


def test_field_shape_and_finiteness():
    g = unit_cell(4, 1)
    with pytest.raises(ConfigurationError):
        TorusField(g, np.zeros((4, 1)))  # free fields carry n+1 nodes
    with pytest.raises(ConfigurationError):
        TorusField(g, np.full((5, 1), np.nan))
    assert TorusField(g, np.zeros((4, 1)), "periodic").samples.shape == (4, 1)


def test_zero_dirichlet_must_vanish_on_boundary():
    g = unit_cell(4, 2)
    vals = np.zeros((5, 5, 1))
    vals[2, 2] = 1.0
    TorusField(g, vals, "zero_dirichlet")
    vals[0, 3] = 0.1
    with pytest.raises(ConfigurationError):
        TorusField(g, vals, "zero_dirichlet")


def test_affine_field_boundary_checked():
    g = unit_cell(4, 2)
    u = affine_field(g, [[1.0, 2.0]])
    assert u.boundary == "affine"
    bad = u.values.copy()
    bad[0, 0] += 1.0
    with pytest.raises(ConfigurationError):
        TorusField(g, bad, "affine", [[1.0, 2.0]])


# -- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["forward", "centered"])
def test_affine_gradient_is_constant(scheme):
    F = np.array([[0.3, -1.2], [2.0, 0.5]])
    u = affine_field(box((16, 8), (1.0, 0.5)), F)
    g = discrete_gradient(u, scheme)
    assert np.max(np.abs(g.samples - F)) <= 1e-12


def test_affine_p1_gradient_is_constant():
    F = np.array([[0.3, -1.2]])
    u = affine_field(box((16, 8), (1.0, 0.5)), F)
    g = p1_gradient(u)
    assert np.max(np.abs(g.samples - F)) <= 1e-12
    assert g.points().shape == (2 * 16 * 8, 2)
    assert g.weights().sum() == pytest.approx(0.5)


@pytest.mark.parametrize("scheme", ["forward", "centered"])
def test_constant_gradient_is_zero(scheme):
    u = TorusField(unit_cell(8, 2), np.full((9, 9, 1), 3.5))
    assert np.all(discrete_gradient(u, scheme).samples == 0.0)


def test_centered_sine_against_analytic_derivative():
    g = unit_cell(256, 1)
    u = TorusField.from_function(g, lambda x: np.sin(2 * np.pi * x[:, 0]), boundary="periodic")
    du = discrete_gradient(u, "centered")
    x = du.points()[:, 0]
    err = np.max(np.abs(du.samples[:, 0, 0] - 2 * np.pi * np.cos(2 * np.pi * x)))
    assert err <= 1e-3


def test_centered_needs_three_points():
    u = TorusField(unit_cell(2, 1), np.zeros((3, 1)))
    with pytest.raises(ConfigurationError):
        discrete_gradient(u, "centered")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_periodic_gradient_has_zero_mean(seed):
    rng = np.random.default_rng(seed)
    u = TorusField(unit_cell(8, 2), rng.standard_normal((8, 8, 2)), "periodic")
    for scheme in ("forward", "centered"):
        s = discrete_gradient(u, scheme).samples
        assert np.max(np.abs(s.mean(axis=0))) <= 1e-10
    assert np.max(np.abs(p1_gradient(u).samples.mean(axis=0))) <= 1e-10


# -- sawtooth -----------------------------------------------------------------

def test_sawtooth_values():
    assert sawtooth(0.5) == 0.5
    assert sawtooth(1.5) == 0.5
    assert sawtooth(2.0) == 0.0
    assert sawtooth(-0.25) == 0.25
    t = np.linspace(-4, 4, 101)
    assert np.allclose(sawtooth(t + 2), sawtooth(t))


def test_frac_range():
    x = np.array([-1e-18, -0.5, 0.0, 0.999999, 3.25])
    f = frac(x)
    assert np.all((f >= 0) & (f < 1))
    assert f[3] == pytest.approx(0.999999) and f[4] == 0.25


def test_sawtooth_sequence_gradients():
    eps = 1 / 8
    g = box((64, 64), (1.0, 1.0))
    u = sawtooth_sequence(g, eps)
    grad = discrete_gradient(u, "forward").values  # (64, 64, 1, 2), left/bottom node values
    X = g.node_coords("free")[:64, :64]
    d1 = grad[..., 0, 0]
    assert np.allclose(np.abs(d1), X[..., 1], atol=1e-12)
    up = frac(X[..., 0] / (2 * eps)) < 0.5
    assert np.allclose(d1[up], X[..., 1][up], atol=1e-12)
    assert np.allclose(grad[..., 0, 1], eps * sawtooth(X[..., 0] / eps), atol=1e-12)


# -- oscillating sequences ----------------------------------------------------

def test_oscillating_amplitude():
    g = box((64, 64), (1.0, 1.0))
    u = TorusField(g, np.zeros((65, 65, 1)))
    (un,) = oscillating_sequence(u, SINE, [1 / 8])
    assert np.max(np.abs(un.values)) == pytest.approx(1 / (8 * 2 * np.pi), rel=1e-12)


def test_zero_corrector_keeps_affine_field():
    g = box((32, 32), (1.0, 1.0))
    u = affine_field(g, [[1.0, -2.0]])
    for un in oscillating_sequence(u, ZeroCorrector(1, 2), [1 / 2, 1 / 4, 1 / 8]):
        assert np.array_equal(un.values, u.values)
        assert un.boundary == "affine"


def test_incommensurate_epsilon_names_nearest():
    g = box((64,), (1.0,))
    u = TorusField(g, np.zeros((65, 1)))
    with pytest.raises(ConfigurationError, match="nearest admissible epsilon is 0.125"):
        oscillating_sequence(u, ZeroCorrector(1, 1), [0.12])
    check_commensurate(g, 1 / 16)
    assert 1 / 64 in admissible_epsilons(g) and 1.0 in admissible_epsilons(g)


@given(st.sampled_from([1 / 4, 1 / 8, 1 / 16]), st.floats(-2, 2), st.floats(0.1, 3))
@settings(max_examples=20, deadline=None)
def test_perturbation_bounded_by_eps_sup(eps, slope, amp):
    u1 = TrigCorrector([{"amp": amp, "x_slope": [slope, 0.0], "factors": [["y", 0, "cos", 1], ["y", 1, "sin", 2]]}], 1, 2)
    g = box((32, 32), (1.0, 1.0))
    u = affine_field(g, [[0.5, 0.25]])
    (un,) = oscillating_sequence(u, u1, [eps])
    X = g.node_coords("free").reshape(-1, 2)
    sup = np.max(np.abs(u1(X, frac(X / eps))))
    assert np.max(np.abs(un.values - u.values)) <= eps * sup + 1e-15


def test_one_scale_gradient_structure():
    eps = 1 / 4
    u1 = TrigCorrector([{"amp": 0.2, "x_slope": [0.5, 0.0], "factors": [["y", 0, "sin", 1], ["y", 1, "cos", 1]]}], 1, 2)
    g = box((256, 256), (1.0, 1.0))
    F = np.array([[0.3, -0.7]])
    (un,) = oscillating_sequence(affine_field(g, F), u1, [eps])
    grad = discrete_gradient(un, "centered")
    X = grad.points()
    Y = frac(X / eps)
    expect = F + u1.grad_y(X, Y) + eps * u1.grad_x(X, Y)
    interior = np.all((X > 0) & (X < 1), axis=1)
    err = np.max(np.abs(grad.samples - expect)[interior])
    h = 1 / 256
    # centered differences: error ~ |d^3 u| h^2 / 6 with |d^3 u| ~ amp (2 pi / eps)^3 eps
    assert err <= 0.2 * (2 * np.pi / eps) ** 3 * eps * h**2


def test_two_scale_sequence():
    u1 = TrigCorrector([{"amp": 1.0, "factors": [["z", 0, "sin", 1]]}], 1, 1)
    g = box((256,), (1.0,))
    u = TorusField(g, np.zeros((257, 1)))
    (un,) = oscillating_sequence(u, u1, [1 / 4], scales="two_scale")
    assert np.max(np.abs(un.values)) == pytest.approx(1 / 16, rel=1e-12)
    with pytest.raises(ConfigurationError):
        oscillating_sequence(u, u1, [1 / 32], scales="two_scale")


# -- correctors ---------------------------------------------------------------

def test_trig_corrector_gradients_match_differences():
    u1 = TrigCorrector([{"amp": 0.7, "x_slope": [0.3, -0.2], "factors": [["y", 0, "cos", 2], ["y", 1, "sin", 1]]},
                        {"component": 1, "amp": 0.1, "factors": [["y", 1, "cos", 3]]}], 2, 2)
    rng = np.random.default_rng(3)
    x, y = rng.random((2, 20, 2))
    fd = super(TrigCorrector, u1).grad_y(x, y)
    assert np.allclose(u1.grad_y(x, y), fd, atol=1e-7)
    assert np.allclose(u1.grad_x(x, y), super(TrigCorrector, u1).grad_x(x, y), atol=1e-7)
    again = corrector_from_dict(u1.to_dict(), 2, 2)
    assert np.array_equal(again(x, y), u1(x, y))


def test_trig_corrector_needs_oscillating_factor():
    with pytest.raises(ConfigurationError):
        TrigCorrector([{"amp": 1.0, "factors": [["y", 0, "cos", 0]]}], 1, 1)


def test_grid_corrector_interpolates_nodes():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((8, 8, 1))
    c = GridCorrector(vals)
    idx = np.stack(np.meshgrid(np.arange(8), np.arange(8), indexing="ij"), -1).reshape(-1, 2)
    assert np.allclose(c(None, idx / 8.0)[:, 0], vals[idx[:, 0], idx[:, 1], 0])
    assert np.allclose(c(None, idx / 8.0 + 1.0), c(None, idx / 8.0))  # periodic
    y = rng.random((30, 2))
    step = 1e-7
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        fd = (c(None, y + e) - c(None, y - e)) / (2 * step)
        assert np.allclose(c.grad_y(None, y)[:, :, k], fd, atol=1e-5)


# -- laminates ----------------------------------------------------------------

def test_laminate_gradient_values_and_fractions():
    g = box((64, 64), (1.0, 1.0))
    F = np.array([[0.5, -0.25]])
    u = laminate_field(g, F, [1.0], axis=0, eps=1 / 8, theta=0.25, amplitude=2.0)
    s = p1_gradient(u).samples
    hi = F + np.array([[2.0 * 0.75, 0.0]])
    lo = F - np.array([[2.0 * 0.25, 0.0]])
    is_hi = np.all(np.isclose(s, hi), axis=(1, 2))
    is_lo = np.all(np.isclose(s, lo), axis=(1, 2))
    assert np.all(is_hi | is_lo)
    assert is_hi.mean() == pytest.approx(0.25)
    assert np.allclose(s.mean(axis=0), F)


# -- serialization ------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    g = box((4, 3), (1.0, 2.0))
    u = affine_field(g, [[1.0, 2.0], [0.5, -1.0]])
    save_field(u, tmp_path / "u.bin")
    v = load_field(tmp_path / "u.bin")
    assert np.array_equal(v.values, u.values) and v.grid == u.grid and v.boundary == "affine"
    field_to_csv(u, tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,u1,u2" and len(lines) == 1 + 5 * 4
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ConfigurationError):
        load_field(tmp_path / "bad.bin")
