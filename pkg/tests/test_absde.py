import numpy as np
import pytest

from delaysmp.absde import (
    ConditioningError,
    RegressionConfig,
    RegressionConfigError,
    Regressor,
    duality_residual_first,
    duality_residual_second,
    solve_absde,
)
from delaysmp.model import ControlPath, scenario_lq_delay
from delaysmp.paths import make_grid, sample_brownian
from delaysmp.sdde import (
    ConsistencyError,
    SpikeWindow,
    simulate_first_variation,
    simulate_second_variation,
    simulate_state,
)

from oracles import backward_method_of_steps, method_of_steps


def _solve(spec, N=128, M=64, seed=0, u=0.0, cfg=None):
    g = make_grid(spec.T, N, spec.delay)
    W = sample_brownian(g, M, seed)
    uc = ControlPath.constant(u, g.N)
    x = simulate_state(spec, uc, W)
    return g, W, uc, x, solve_absde(spec, x, uc, W, cfg)


def _det(a0=0.0, a1=0.0, **kw):
    return scenario_lq_delay(a0, a1, 0.0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,), **kw)


def test_constant_terminal_value():
    g, W, u, x, adj = _solve(_det(q_x=0.0, x0=1.5, h_coef=1.0))
    assert np.allclose(adj.p[:, : g.N + 1, 0], 3.0, atol=1e-12)
    assert np.all(adj.p[:, g.N + 1 :] == 0)
    assert np.allclose(adj.q, 0.0, atol=1e-12)


def test_running_cost_adds_linear_ramp():
    g, W, u, x, adj = _solve(_det(q_x=0.5, x0=1.0, h_coef=1.0))
    expect = 2.0 + 1.0 * (g.T - g.times)
    assert np.abs(adj.p[0, : g.N + 1, 0] - expect).max() <= 2 * g.dt


def test_linear_drift_gives_exponential():
    a = 0.8
    g, W, u, x, adj = _solve(_det(a, q_x=0.0, h_coef=0.5), N=512, M=2)
    xT = x.at(g.N)[0, 0]
    expect = xT * np.exp(a * (g.T - g.times))
    err = np.abs(adj.p[0, : g.N + 1, 0] - expect).max()
    assert err <= 3 * g.dt * abs(expect).max()


def test_point_delay_matches_backward_oracle():
    a0, a1 = 0.7, 0.8
    g, W, u, x, adj = _solve(_det(a0, a1, q_x=0.0, h_coef=0.5), N=512, M=2)
    xT = method_of_steps(a0, a1, 0.5, 1.0)(np.array([1.0]))[0]
    oracle = backward_method_of_steps(a0, a1, 0.5, 1.0, xT)
    err = np.abs(adj.p[0, : g.N + 1, 0] - oracle(g.times)).max()
    assert err <= 5 * g.dt * abs(xT)


def test_p_bar_is_conditional_mean_of_next_value():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x, adj = _solve(spec, N=32, M=2048, seed=1, u=1.0)
    assert adj.p_bar.shape == (W.M, g.N, 1)
    gap = adj.p_bar[:, -1] - adj.p[:, g.N]
    assert abs(gap.mean()) <= 3 * gap.std() / np.sqrt(W.M) + 1e-12


def test_regression_budget_and_config_errors():
    with pytest.raises(RegressionConfigError):
        RegressionConfig(degree=-1)
    rng = np.random.default_rng(0)
    with pytest.raises(RegressionConfigError):
        Regressor(rng.standard_normal((40, 3)), RegressionConfig(degree=2))
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    with pytest.raises(RegressionConfigError):
        _solve(spec, N=16, M=32, u=1.0, cfg=RegressionConfig(degree=3, lags=2))


def test_collinear_design_is_rejected():
    z = np.random.default_rng(0).standard_normal(4000)
    raw = np.column_stack([z, z + 1e-9 * np.sin(z)])
    with pytest.raises(ConditioningError):
        Regressor(raw, RegressionConfig(degree=1, ridge=0.0, max_condition=1e6))


def test_regressor_reproduces_polynomials():
    z = np.random.default_rng(1).standard_normal((5000, 1))
    Y = 1 + 2 * z[:, 0] - 0.5 * z[:, 0] ** 2
    fit, _ = Regressor(z, RegressionConfig(degree=2, ridge=0.0)).project(Y)
    assert np.allclose(fit, Y, atol=1e-8)


def test_mismatched_bundle_is_rejected():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g = make_grid(1.0, 16, 0.5)
    u = ControlPath.constant(-1.0, g.N)
    x = simulate_state(spec, u, sample_brownian(g, 64, 0))
    with pytest.raises(ConsistencyError):
        solve_absde(spec, x, u, sample_brownian(g, 128, 0))


def test_duality_with_empty_window_is_exact():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x, adj = _solve(spec, N=32, M=512, u=1.0)
    w = SpikeWindow(0.25, 0.0, 1.0)
    y = simulate_first_variation(spec, x, u, w, W)
    z = simulate_second_variation(spec, x, y, u, w, W)
    for rep in (duality_residual_first(spec, y, adj, w, x), duality_residual_second(spec, y, z, adj, w, x)):
        assert rep.residual == 0.0 and rep.within == 0.0


def test_duality_identities_within_noise():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5, kb=0.3, ks=0.3, mu_b="mixed")
    g, W, u, x, adj = _solve(spec, N=64, M=4096, seed=9, u=1.0)
    w = SpikeWindow(0.25, 0.125, -1.0)
    y = simulate_first_variation(spec, x, u, w, W)
    z = simulate_second_variation(spec, x, y, u, w, W)
    r1 = duality_residual_first(spec, y, adj, w, x)
    r2 = duality_residual_second(spec, y, z, adj, w, x)
    assert r1.within <= 4.0
    assert r2.within <= 4.0
    assert set(r1.as_dict()) >= {"lhs", "rhs", "residual", "std_error"}
