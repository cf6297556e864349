"""Maximum-principle verdicts on the tracking problem.

The running cost x^2 + (u - gamma(t))^2 with control-free dynamics makes
u = gamma optimal.  The check passes for it and fails for u = 0, where every
grid time shows the same unit gap.
"""
import numpy as np

from delaysmp import (
    ControlPath,
    check_variational_inequality,
    make_grid,
    p00_kernel,
    sample_brownian,
    scenario_tracking,
    simulate_state,
    solve_absde,
)


def verdict(spec, W, x, u):
    adj = solve_absde(spec, x, u, W)
    K = p00_kernel(spec, np.linspace(0.0, spec.T, 5), adj, W, x)
    return check_variational_inequality(spec, u, adj, K, x)


def main():
    spec = scenario_tracking()
    g = make_grid(spec.T, 64, spec.delay)
    W = sample_brownian(g, 2048, seed=1)

    x = simulate_state(spec, spec.policies["optimal"], W)
    good = verdict(spec, W, x, x.control)
    print(f"u = gamma: {'pass' if good.verdict else 'fail'}, worst gap {good.worst_gap:.2e}")

    u0 = ControlPath.constant(0.0, g.N)
    bad = verdict(spec, W, simulate_state(spec, u0, W), u0)
    print(f"u = 0:     {'pass' if bad.verdict else 'fail'}, worst gap {bad.worst_gap:.3f}, "
          f"{len(bad.violations)} of {g.N} times violate")
    for v in bad.violations[:4]:
        print(f"  t={v['t']:.4f} better control {v['v']} gap {v['gap']:.3f}")


if __name__ == "__main__":
    main()
