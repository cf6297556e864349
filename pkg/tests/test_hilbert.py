import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaysmp.absde import solve_absde
from delaysmp.hilbert import (
    HilbertPoint,
    PipelineError,
    assemble_operators,
    extract_p00,
    hilbert_weights,
    lift,
    shift_adjoint,
    shift_matrix,
    shift_semigroup,
    solve_first_adjoint_h,
    solve_second_adjoint_h,
)
from delaysmp.model import ControlPath, scenario_lq_delay
from delaysmp.paths import make_grid, sample_brownian
from delaysmp.sdde import simulate_state

from oracles import riccati_free_p00


def _point(L=8, span=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return HilbertPoint(rng.standard_normal(1), rng.standard_normal((L + 1, 1)), span)


def _base(spec, N=32, M=64, seed=0, u=1.0):
    g = make_grid(spec.T, N, spec.delay)
    W = sample_brownian(g, M, seed)
    uc = ControlPath.constant(u, g.N)
    return g, W, uc, simulate_state(spec, uc, W)


def test_lift_of_constant_path():
    g = make_grid(1.0, 8, 0.5)
    vals = np.full((3, g.L + g.N + 1, 1), 2.5)
    p = lift(vals, 0.25, g)
    assert np.all(p.head == 2.5) and np.all(p.tail == 2.5)
    assert p.tail.shape == (3, g.L + 1, 1)


def test_lift_reads_the_window():
    g = make_grid(1.0, 8, 0.5)
    vals = (np.arange(-g.L, g.N + 1) * g.dt)[None, :, None]
    p = lift(vals, 0.5, g)
    assert p.head[0, 0] == 0.5
    assert np.allclose(p.tail[0, :, 0], 0.5 + np.linspace(-0.5, 0.0, g.L + 1))


def test_shift_example():
    L, span = 8, 1.0
    dt = span / L
    theta = np.linspace(-span, 0.0, L + 1)
    p = HilbertPoint(np.array([2.0]), theta[:, None].copy(), span)
    s = shift_semigroup(0.5, p, dt)
    expect = np.where(theta >= -0.5, 2.0, theta + 0.5)
    assert np.allclose(s.tail[:, 0], expect)
    assert s.head[0] == 2.0
    consistent = HilbertPoint(np.array([0.0]), theta[:, None].copy(), span)
    assert np.array_equal(shift_semigroup(0.0, consistent, dt).vector(), consistent.vector())


def test_shift_matches_matrix():
    p = _point()
    for k in range(10):
        assert np.allclose(shift_semigroup(k / 8, p, 1 / 8).vector(), shift_matrix(k, 8, 1) @ p.vector())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.integers(0, 12), st.integers(0, 1000))
def test_shift_is_a_semigroup(a, b, seed):
    p = _point(seed=seed)
    lhs = shift_semigroup(a / 8, shift_semigroup(b / 8, p, 1 / 8), 1 / 8)
    assert np.array_equal(lhs.vector(), shift_semigroup((a + b) / 8, p, 1 / 8).vector())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.integers(0, 1000))
def test_shift_adjoint_identity(k, seed):
    p, q = _point(seed=seed), _point(seed=seed + 1)
    lhs = shift_semigroup(k / 8, p, 1 / 8).inner(q)
    rhs = p.inner(shift_adjoint(k / 8, q, 1 / 8))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_inner_uses_weights():
    p = _point()
    w = hilbert_weights(1.0, 8, 1)
    assert p.inner(p) == pytest.approx(np.sum(w * p.vector() ** 2))
    assert np.array_equal(HilbertPoint.from_vector(p.vector(), 1, 1.0).tail, p.tail)


def test_unaligned_shift_is_rejected():
    with pytest.raises(ValueError):
        shift_semigroup(0.1, _point(), 1 / 8)


def test_operators_without_delay():
    spec = scenario_lq_delay(0.7, 0.0, 0.4, 0.0, 0.5, mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec)
    ops = assemble_operators(spec, x, u, 0.25)
    h = np.zeros(ops.J.shape[1])
    h[0] = 1.3
    assert np.allclose(ops.B_X() @ h, 0.7 * 1.3)
    assert np.allclose(ops.Sigma_X() @ h, 0.4 * 1.3)
    h = np.zeros_like(h)
    h[1:] = 1.0
    assert np.allclose(ops.B_X() @ h, 0.0)


def test_drift_derivative_on_tail():
    spec = scenario_lq_delay(0.0, 0.6, 0.0, 0.0, 0.0, mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec)
    ops = assemble_operators(spec, x, u, 0.5)
    h = np.zeros(ops.J.shape[1])
    h[1:] = 2.0
    assert np.allclose(ops.B_X() @ h, 0.6 * 2.0)


def test_second_derivatives_are_symmetric():
    spec = scenario_lq_delay(0.3, 0.3, 0.2, 0.2, 0.5, kb=0.5, ks=0.4, mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec)
    ops = assemble_operators(spec, x, u, 0.5, p0=np.ones((W.M, 1)), q0=np.ones((W.M, 1, 1)))
    for A in (ops.B_XX(), ops.Sigma_XX(), ops.L_XX(), ops.H_XX()):
        assert np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-13)
    assert np.abs(ops.B_XX()).max() > 0


def test_atoms_are_rejected():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x = _base(spec)
    with pytest.raises(PipelineError):
        assemble_operators(spec, x, u, 0.25)
    with pytest.raises(PipelineError):
        solve_first_adjoint_h(spec, x, u, W)


def test_zero_coefficients_transport_terminal_value():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0, q_x=0.0, drift_u=0.0, control_set=(0.0,),
                             mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec, N=16, M=4, u=0.0)
    adj = solve_first_adjoint_h(spec, x, u, W, store=g.times)
    pN = adj.full[g.N]
    for i in range(g.N + 1):
        S = shift_matrix(g.N - i, g.L, 1)
        assert np.allclose(adj.full[i], pN @ S, atol=1e-14)


def test_head_is_minus_the_adjoint():
    spec = scenario_lq_delay(0.6, 0.5, 0.0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,),
                             mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec, N=64, M=4, u=0.0)
    ha = solve_first_adjoint_h(spec, x, u, W)
    pa = solve_absde(spec, x, u, W)
    assert ha.p_head[0, -1, 0] == -pa.p[0, g.N, 0]
    assert np.allclose(ha.p_head[0, :, 0], -pa.p[0, : g.N + 1, 0], rtol=g.dt)


def test_no_delay_kernel_matches_riccati():
    a0, s0, h, q = 0.5, 0.4, 1.0, 1.0
    spec = scenario_lq_delay(a0, 0.0, s0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,), q_x=q, h_coef=h,
                             mu_b="uniform", mu_sigma="uniform")
    for N in (64, 128):
        g, W, u, x = _base(spec, N=N, M=512, u=0.0)
        first = solve_first_adjoint_h(spec, x, u, W)
        P = solve_second_adjoint_h(spec, x, u, first, W)
        assert P.P00[0, g.N, 0, 0] == -2 * h
        kern = extract_p00(P, [0.0, 0.5]).as_curvature()
        for k, s in enumerate((0.0, 0.5)):
            exact = riccati_free_p00(a0, s0, 2 * h, 2 * q, 1.0, s)
            assert abs(kern.matrices[k, 0, 0] - exact) <= 4 * g.dt * exact


def test_operator_adjoint_symmetric_blocks():
    spec = scenario_lq_delay(0.3, 0.5, 0.2, 0.3, 0.0, drift_u=0.0, control_set=(0.0,),
                             mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _base(spec, N=16, M=512, u=0.0)
    first = solve_first_adjoint_h(spec, x, u, W)
    P = solve_second_adjoint_h(spec, x, u, first, W, store=[0.0, 0.5])
    blk = P.block(g.index(0.5))
    assert blk.asymmetry() <= 1e-12
    assert np.allclose(extract_p00(blk), P.P00[:, g.index(0.5)])
