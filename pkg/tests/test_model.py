from dataclasses import replace

import numpy as np
import pytest

from delaysmp.model import (
    ControlPath,
    MarketFunction,
    Utility,
    build_scenario,
    scenario_lq_delay,
    scenario_pointwise,
    scenario_portfolio,
    scenario_tracking,
    validate_hypotheses,
)
from delaysmp.paths import make_grid, sample_brownian
from delaysmp.sdde import cost, simulate_state


def test_linear_scenario_passes_checks():
    rep = validate_hypotheses(scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5, kb=0.3, ks=0.3, mu_b="mixed"), 80)
    assert rep.passed, rep.violations
    assert all(np.isfinite(v) for v in rep.lipschitz_u.values())


def test_injected_derivative_fault_is_reported():
    spec = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    f = spec.b.dx
    bad = replace(spec, b=replace(spec.b, dx=lambda t, x, y, u: f(t, x, y, u) + 1.0))
    rep = validate_hypotheses(bad, 50)
    assert not rep.passed
    assert rep.derivative_residuals["b.dx"] == pytest.approx(1.0, abs=1e-6)


def test_unbounded_in_u_is_fine_on_finite_set():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0, control_set=(-3.0, 0.0, 3.0))
    f = spec.b.f
    sq = replace(spec, b=replace(spec.b, f=lambda t, x, y, u: f(t, x, y, u) + u**2))
    rep = validate_hypotheses(sq, 40)
    assert np.isfinite(rep.lipschitz_u["b"])


@pytest.mark.parametrize("name", ["lq_delay", "pointwise", "tracking", "portfolio"])
def test_registry_builds_valid_specs(name):
    spec = build_scenario(name)
    assert validate_hypotheses(spec, 30).passed


def test_unknown_scenario():
    with pytest.raises(KeyError):
        build_scenario("nope")


def test_identity_tracks_parameters():
    a = scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5)
    assert a.identity() == scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.5).identity()
    assert a.identity() != scenario_lq_delay(0.5, 0.5, 0.3, 0.2, 0.6).identity()


def test_pointwise_forces_atoms():
    spec = scenario_pointwise(a1=0.5)
    assert spec.has_atoms and spec.mu_b[0].atoms[0][0] == -spec.delay


def test_tracking_levels_must_be_admissible():
    with pytest.raises(ValueError):
        scenario_tracking(levels=(2.0, 0.0))


def test_control_membership():
    U = np.array([[-1.0], [1.0]])
    ControlPath.constant(1.0, 4).check_members(U)
    with pytest.raises(ValueError):
        ControlPath.constant(0.5, 4).check_members(U)


def test_portfolio_rejects_bad_consumption():
    with pytest.raises(ValueError):
        scenario_portfolio(consumption=())
    with pytest.raises(ValueError):
        scenario_portfolio(consumption=(-0.1, 0.0))


def _portfolio_run(spec, u, N=200, M=4):
    g = make_grid(spec.T, N, spec.delay)
    return simulate_state(spec, ControlPath.constant(u, N), sample_brownian(g, M, 0))


def test_frozen_market_keeps_wealth():
    z = MarketFunction.constant(0.0)
    spec = scenario_portfolio(b=z, sigma=z, r=z, consumption=(0.0,), pi_grid=(0.0, 1.0))
    x = _portfolio_run(spec, [1.0, 0.0])
    assert np.allclose(x.values[:, :, 1], 1.0)


def test_riskless_growth():
    spec = scenario_portfolio(r=MarketFunction.constant(0.05), consumption=(0.0,), V0=2.0)
    x = _portfolio_run(spec, [0.0, 0.0], N=400)
    assert x.values[0, -1, 1] == pytest.approx(2.0 * np.exp(0.05), rel=1e-4)


def test_price_drift_from_delayed_level():
    spec = scenario_portfolio(b=MarketFunction.linear_past(1.0), sigma=MarketFunction.constant(0.0), d=0.5, S0=1.0)
    g = make_grid(1.0, 256, 0.5)
    x = simulate_state(spec, ControlPath.constant([0.0, 0.0], g.N), sample_brownian(g, 1, 0))
    # on [0, d] the delayed price is the history S0 = 1, so dS = S dt
    S = x.values[0, g.L : g.L + g.L + 1, 0]
    assert S[-1] == pytest.approx(np.exp(0.5), rel=5e-3)


def test_consumption_utility_and_costs_are_negated():
    spec = scenario_portfolio(U1=Utility.consumption(0.0, 1.0), U2=Utility.linear(1.0))
    t, x = 0.0, np.array([[1.0, 2.0]])
    assert spec.ell.f(t, x, np.zeros((1, 2)), np.array([[0.0, 1.0]]))[0] == pytest.approx(-np.log(2.0))
    assert spec.h.f(1.0, x, np.zeros((1, 0)), np.array([[0.0, 0.0]]))[0] == pytest.approx(-2.0)


def test_zero_dynamics_pointwise_and_mollified_costs_agree():
    spec = scenario_lq_delay(0.0, 0.0, 0.0, 0.0, 0.0)
    g = make_grid(1.0, 64, 0.5)
    W = sample_brownian(g, 8, 1)
    u = ControlPath.constant(-1.0, g.N)
    a = cost(spec, simulate_state(spec, u, W), u)
    from delaysmp.measures import mollify

    spec_n = spec.with_measures(mu_b=[mollify(spec.mu_b[0], 8, g.L)], mu_sigma=[mollify(spec.mu_sigma[0], 8, g.L)])
    b = cost(spec_n, simulate_state(spec_n, u, W), u)
    assert a[0] == b[0]
