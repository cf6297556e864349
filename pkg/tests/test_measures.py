import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaysmp.measures import (
    AlignmentError,
    DelayMeasure,
    PastSegment,
    ShapeError,
    dirac,
    exponential,
    mollify,
    node_masses,
    past_integral,
    stack_masses,
    theta_grid,
    total_variation,
    trapezoid_weights,
    uniform,
)

from oracles import hat_quadrature


def test_total_variation_examples():
    assert total_variation(dirac(-0.5, 0.5)) == 1.0
    assert total_variation(uniform(1.0, L=64)) == pytest.approx(1.0, abs=1e-14)
    mixed = DelayMeasure(1.0, atoms=((-0.5, -2.0),), density_samples=np.ones(65))
    assert total_variation(mixed) == pytest.approx(3.0, abs=1e-14)


def test_past_integral_examples():
    L = 64
    seg = np.full((L + 1, 1), 3.5)
    assert past_integral(seg, dirac(-1.0, 1.0))[0] == 3.5
    th = theta_grid(1.0, L)
    lin = PastSegment(th[:, None], 1.0 / L)
    assert past_integral(lin, uniform(1.0))[0] == pytest.approx(-0.5, abs=1e-12)
    atoms = DelayMeasure(1.0, atoms=((-1.0, 2.0), (0.0, 3.0)))
    assert past_integral((th + 1)[:, None], atoms)[0] == pytest.approx(3.0, abs=1e-14)


def test_off_grid_atom_raises_unless_interpolated():
    mu = dirac(-0.3, 1.0)
    with pytest.raises(AlignmentError):
        node_masses(mu, 4)
    m = node_masses(DelayMeasure(1.0, atoms=((-0.3, 1.0),), interpolate=True), 4)
    assert m.sum() == pytest.approx(1.0)
    assert np.count_nonzero(m) == 2


def test_density_resolution_mismatch():
    mu = DelayMeasure(1.0, density_samples=np.ones(9))
    with pytest.raises(ShapeError):
        node_masses(mu, 16)
    fn = exponential(1.0, 2.0)
    assert node_masses(fn, 16).sum() == pytest.approx(node_masses(fn, 32).sum(), rel=1e-2)


def test_trapezoid_weights_sum_to_span():
    assert trapezoid_weights(0.5, 7).sum() == pytest.approx(0.5)
    assert trapezoid_weights(0.0, 0).sum() == 0.0


def test_mollified_dirac_hat_quadrature():
    # interior atom: symmetric hat, first moment is reproduced exactly
    for n in (4, 8, 16):
        mu = mollify(dirac(-0.5, 1.0), n, 256)
        th = theta_grid(1.0, 256)
        val = past_integral(th[:, None], mu)[0]
        assert abs(val + 0.5) <= 0.5 / n / 2
        assert val == pytest.approx(hat_quadrature(-0.5, 1.0, n, lambda t: t), abs=1e-9)


def test_mollified_boundary_atom_keeps_total_variation():
    for n in (1, 2, 4, 8, 16, 32, 64):
        assert total_variation(mollify(dirac(-0.5, 0.5), n, 128)) == pytest.approx(1.0, abs=1e-13)


def test_mollify_density_converges():
    mu = exponential(1.0, 1.5, L=128)
    th = theta_grid(1.0, 128)
    f = np.sin(3 * th)[:, None]
    exact = past_integral(f, mu)[0]
    errs = [abs(past_integral(f, mollify(mu, n))[0] - exact) for n in (4, 8, 16, 32)]
    assert errs[-1] < errs[0]
    assert max(errs) < 0.1


def test_stack_masses_shape():
    assert stack_masses([], 8).shape == (0, 9)
    assert stack_masses([dirac(-1.0, 1.0), uniform(1.0)], 8).shape == (2, 9)


def test_mollify_rejects_bad_index():
    with pytest.raises(ValueError):
        mollify(dirac(-1.0, 1.0), 0, 8)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.0, 3.0), min_size=1, max_size=4),
    st.integers(1, 40),
    st.sampled_from([16, 32, 64]),
)
def test_mollify_preserves_positive_mass(weights, n, L):
    span = 1.0
    atoms = tuple((-span * k / 4, w) for k, w in enumerate(weights))
    mu = DelayMeasure(span, atoms=atoms)
    m = node_masses(mollify(mu, n, L), L)
    assert np.all(m >= -1e-15)
    assert m.sum() == pytest.approx(sum(weights), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5),
    st.lists(st.floats(-3, 3), min_size=9, max_size=9),
    st.lists(st.floats(-3, 3), min_size=9, max_size=9),
)
def test_past_integral_is_linear(a, b, f, g):
    mu = DelayMeasure(1.0, atoms=((-0.5, 0.7),), density_samples=np.linspace(0, 1, 9))
    f, g = np.array(f)[:, None], np.array(g)[:, None]
    lhs = past_integral(a * f + b * g, mu)
    rhs = a * past_integral(f, mu) + b * past_integral(g, mu)
    assert np.allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.sampled_from(["dirac", "uniform", "exp"]))
def test_past_integral_of_constant_is_mass(c, kind):
    mu = {"dirac": dirac(-1.0, 1.0), "uniform": uniform(1.0, L=32), "exp": exponential(1.0, 2.0, L=32)}[kind]
    val = past_integral(np.full((33, 1), c), mu)[0]
    assert val == pytest.approx(c * node_masses(mu, 32).sum(), abs=1e-12)
