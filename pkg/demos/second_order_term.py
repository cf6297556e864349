"""Why the second-order term matters when the control enters the noise.

Spike the control on [t0, t0 + eps] and compare the exact cost change with
its expansion.  Without the 1/2 dSigma^T P00 dSigma term the remainder is
O(eps); with it the remainder drops to O(eps^2).
"""
import numpy as np

from delaysmp import (
    ControlPath,
    SpikeWindow,
    cost_expansion_check,
    make_grid,
    p00_kernel,
    sample_brownian,
    scenario_lq_delay,
    simulate_state,
    solve_absde,
)


def main():
    spec = scenario_lq_delay(0.5, 0.5, 0.0, 0.0, 0.5)
    g = make_grid(spec.T, 128, spec.delay)
    W = sample_brownian(g, 8192, seed=5)
    u = ControlPath.constant(-1.0, g.N)
    x = simulate_state(spec, u, W)
    adj = solve_absde(spec, x, u, W)
    K = p00_kernel(spec, 0.25 + np.arange(5) / 32, adj, W, x)
    spikes = [SpikeWindow(0.25, 2.0**-k, 1.0) for k in range(3, 7)]
    rep = cost_expansion_check(spec, u, spikes, adj, K, W, x)
    print(f"{'eps':>9} {'J(u)-J(u^e)':>12} {'first only':>12} {'with P00':>12}")
    for e, lhs, r1, r2 in zip(rep.eps, rep.lhs, rep.remainder_first, rep.remainder):
        print(f"{e:9.5f} {lhs:12.5f} {r1:12.2e} {r2:12.2e}")
    print(f"remainder slopes: first order only {rep.slope_first:.2f}, with P00 {rep.slope:.2f}")


if __name__ == "__main__":
    main()
