from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaysmp.model import ControlPath, scenario_lq_delay
from delaysmp.paths import make_grid, sample_brownian
from delaysmp.sdde import (
    ConsistencyError,
    DivergenceError,
    SpikeWindow,
    cost,
    read_binary,
    simulate_first_variation,
    simulate_linearized,
    simulate_regularized_variations,
    simulate_second_variation,
    simulate_state,
    spike,
    sup_sq,
    write_binary,
    write_csv,
)

from oracles import gbm_second_moment, method_of_steps


def _setup(spec, N=64, M=64, seed=0, u=1.0):
    g = make_grid(spec.T, N, spec.delay)
    W = sample_brownian(g, M, seed)
    uc = ControlPath.constant(u, g.N)
    return g, W, uc, simulate_state(spec, uc, W)


def test_spike_examples():
    g = make_grid(1.0, 4, 0.5)
    u = ControlPath.constant(-1.0, 4)
    assert np.array_equal(spike(u, SpikeWindow(0.5, 0.0, 1.0), g).values, u.values)
    ue = spike(u, SpikeWindow(0.25, 0.25, 1.0), g)
    assert ue.values[0, :, 0].tolist() == [-1.0, 1.0, -1.0, -1.0, -1.0]
    full = spike(u, SpikeWindow(0.0, 1.0, 1.0), g)
    assert np.all(full.values[0, :4, 0] == 1.0)


def test_spike_window_outside_horizon():
    with pytest.raises(ValueError):
        SpikeWindow(0.9, 0.25, 1.0).nodes(make_grid(1.0, 4, 0.5))


def test_zero_dynamics_state_is_constant():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0, x0=1.5, drift_u=0.0)
    _, _, _, x = _setup(spec)
    assert np.all(x.values == 1.5)


def test_exponential_growth():
    spec = scenario_lq_delay(1.0, 0.0, 0.0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,))
    g, W, u, x = _setup(spec, N=1024, M=2, u=0.0)
    assert x.at(g.N)[0, 0] == pytest.approx(np.e, rel=1e-3)


def test_pure_delay_method_of_steps():
    spec = scenario_lq_delay(0.0, 1.0, 0.0, 0.0, 0.0, d=1.0, T=2.0, drift_u=0.0, control_set=(0.0,))
    g, W, u, x = _setup(spec, N=512, M=1, u=0.0)
    oracle = method_of_steps(0.0, 1.0, 1.0, 2.0)
    assert x.at(g.index(1.0))[0, 0] == pytest.approx(2.0, abs=2 * g.dt)
    assert x.at(g.N)[0, 0] == pytest.approx(3.5, abs=4 * g.dt)
    err = np.abs(x.on_horizon()[0, :, 0] - oracle(g.times)).max()
    assert err <= 5 * g.dt


def test_mixed_delay_matches_ode_oracle():
    spec = scenario_lq_delay(0.7, 0.8, 0.0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,))
    g, W, u, x = _setup(spec, N=512, M=1, u=0.0)
    err = np.abs(x.on_horizon()[0, :, 0] - method_of_steps(0.7, 0.8, 0.5, 1.0)(g.times)).max()
    assert err <= 5 * g.dt * abs(x.at(g.N)[0, 0])


def test_off_set_control_is_rejected():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g = make_grid(1.0, 16, 0.5)
    with pytest.raises(ValueError):
        simulate_state(spec, ControlPath.constant(0.3, g.N), sample_brownian(g, 4, 0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    spec = scenario_lq_delay(1e60, 0.0, 0.0, 0.0, 0.0, drift_u=0.0, control_set=(0.0,))
    g = make_grid(1.0, 8, 0.5)
    with pytest.raises(DivergenceError):
        simulate_state(spec, ControlPath.constant(0.0, g.N), sample_brownian(g, 2, 0))


def test_variations_vanish_without_forcing():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x = _setup(spec)
    empty = SpikeWindow(0.25, 0.0, 1.0)
    y = simulate_first_variation(spec, x, u, empty, W)
    assert np.all(y.values == 0)
    assert np.all(simulate_second_variation(spec, x, y, u, empty, W).values == 0)
    spec0 = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.0, drift_u=0.0)
    g, W, u, x = _setup(spec0)
    w = SpikeWindow(0.25, 0.125, -1.0)
    y = simulate_first_variation(spec0, x, u, w, W)
    assert np.all(y.values == 0)
    assert np.all(simulate_second_variation(spec0, x, y, u, w, W).values == 0)


def test_variation_requires_matching_bundle():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x = _setup(spec)
    with pytest.raises(ConsistencyError):
        simulate_first_variation(spec, x, u, SpikeWindow(0.25, 0.125, -1.0), sample_brownian(g, 64, 1))


def test_first_variation_order():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x = _setup(spec, N=128, M=2048, seed=3)
    eps = [2.0**-k for k in range(3, 7)]
    vals = [sup_sq(simulate_first_variation(spec, x, u, SpikeWindow(0.25, e, -1.0), W).values, g).mean() for e in eps]
    slope = np.polyfit(np.log2(eps), np.log2(vals), 1)[0]
    assert 0.75 <= slope <= 1.25


def test_regularized_variations_converge_for_point_delay():
    spec = scenario_lq_delay(0.5, 0.8, 0.3, 0.4, 0.5)
    g, W, u, x = _setup(spec, N=256, M=256, seed=2)
    w = SpikeWindow(0.25, 0.0625, -1.0)
    y = simulate_first_variation(spec, x, u, w, W)
    d = [sup_sq(simulate_regularized_variations(spec, n, x, u, w, W)[0].values - y.values, g).mean() for n in (4, 8, 16, 32)]
    assert all(a > b for a, b in zip(d, d[1:]))


def test_regularized_variations_for_density_are_close():
    spec = scenario_lq_delay(0.5, 0.8, 0.3, 0.4, 0.5, mu_b="uniform", mu_sigma="uniform")
    g, W, u, x = _setup(spec, N=128, M=256, seed=2)
    w = SpikeWindow(0.25, 0.0625, -1.0)
    y = simulate_first_variation(spec, x, u, w, W)
    yn, _ = simulate_regularized_variations(spec, 64, x, u, w, W)
    diff = sup_sq(yn.values - y.values, g)
    assert diff.mean() <= 3 * diff.std() / np.sqrt(W.M) + 1e-3 * sup_sq(y.values, g).mean()


def test_linearized_flow_frozen_dynamics():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0)
    g, W, u, x = _setup(spec)
    Y = simulate_linearized(spec, 0.5, 1.7, u, W, x)
    assert np.all(Y.values[:, g.L + g.index(0.5) :] == 1.7)
    assert np.all(Y.values[:, : g.L + g.index(0.5)] == 0)


def test_linearized_flow_second_moment():
    gam = 0.6
    spec = scenario_lq_delay(0.0, 0.0, gam, 0.0, 0.0, control_set=(0.0,))
    g, W, u, x = _setup(spec, N=256, M=20000, seed=4, u=0.0)
    YT = simulate_linearized(spec, 0.25, 1.0, u, W, x).at(g.N)[:, 0]
    m2 = YT**2
    assert abs(m2.mean() - gbm_second_moment(gam, 1.0, 0.25)) <= 3 * m2.std() / np.sqrt(W.M)


@settings(max_examples=15, deadline=None)
@given(st.floats(-4, 4, allow_nan=False), st.sampled_from([0.0, 0.25, 0.5]))
def test_linearized_flow_is_homogeneous(alpha, s):
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5, kb=0.3, ks=0.3, mu_b="mixed")
    g, W, u, x = _setup(spec, N=32, M=16, seed=1)
    a = simulate_linearized(spec, s, 1.0, u, W, x).values
    b = simulate_linearized(spec, s, alpha, u, W, x).values
    assert np.allclose(b, alpha * a, rtol=1e-12, atol=1e-12)


def test_cost_examples():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0, x0=2.0, h_coef=0.0, drift_u=0.0)
    g, W, u, x = _setup(spec)
    assert cost(spec, x, u) == (pytest.approx(4.0), 0.0)
    one = replace(spec.ell, f=lambda t, x, y, u: np.ones(len(x)))
    zero = replace(spec.h, f=lambda t, x, y, u: np.zeros(len(x)))
    assert cost(replace(spec, ell=one, h=zero), x, u) == (pytest.approx(1.0), 0.0)
    z = replace(spec.ell, f=lambda t, x, y, u: np.zeros(len(x)))
    o = replace(spec.h, f=lambda t, x, y, u: np.ones(len(x)))
    assert cost(replace(spec, ell=z, h=o), x, u) == (1.0, 0.0)


def test_exports_round_trip(tmp_path):
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    g, W, u, x = _setup(spec, N=16, M=3)
    write_binary(x, tmp_path / "x.trjb")
    vals, t0, dt = read_binary(tmp_path / "x.trjb")
    assert np.array_equal(vals, x.values) and dt == g.dt and t0 == -g.d
    write_csv(x, tmp_path / "x.csv", {"seed": 0})
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert any(line.startswith("# seed=0") for line in lines)
    body = [line for line in lines if not line.startswith("#")]
    assert body[0] == "path,t,component,value"
    assert len(body) == 1 + x.values.size
    assert float(body[-1].split(",")[-1]) == x.values[-1, -1, -1]
