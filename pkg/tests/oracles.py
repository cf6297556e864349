"""Independent reference solutions used by the tests.

Nothing here imports the package: the oracles integrate the same equations
with scipy or closed forms so that agreement is evidence, not tautology.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

RTOL = 1e-11


def method_of_steps(a0: float, a1: float, d: float, T: float, history: float = 1.0, forcing: float = 0.0):
    """x' = a0 x + a1 x(t - d) + forcing with constant history; returns a dense callable on [-d, T]."""
    pieces = []

    def lagged(t):
        s = t - d
        if s <= 0:
            return history
        for lo, hi, sol in pieces:
            if lo - 1e-14 <= s <= hi + 1e-14:
                return float(sol.sol(s)[0])
        raise RuntimeError("lag outside solved range")

    t0, x0 = 0.0, history
    while t0 < T - 1e-14:
        t1 = min(T, t0 + d) if d > 0 else T
        sol = solve_ivp(lambda t, y: a0 * y + a1 * lagged(t) + forcing, (t0, t1), [x0],
                        dense_output=True, rtol=RTOL, atol=RTOL)
        pieces.append((t0, t1, sol))
        t0, x0 = t1, float(sol.y[0, -1])

    def x(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(t)
        for k, s in enumerate(t):
            if s <= 0:
                out[k] = history
                continue
            for lo, hi, sol in pieces:
                if lo - 1e-14 <= s <= hi + 1e-14:
                    out[k] = sol.sol(s)[0]
                    break
        return out

    return x


def backward_method_of_steps(a0: float, a1: float, d: float, T: float, terminal: float, g=None):
    """-p' = a0 p + a1 p(t + d) 1{t + d <= T} + g(t), p(T) = terminal; dense callable on [0, T]."""
    g = g or (lambda t: 0.0)
    pieces = []

    def ahead(t):
        s = t + d
        if s >= T - 1e-13:
            return 0.0
        for lo, hi, sol in pieces:
            if lo - 1e-14 <= s <= hi + 1e-14:
                return float(sol.sol(s)[0])
        raise RuntimeError("lead outside solved range")

    t1, p1 = T, terminal
    while t1 > 1e-14:
        t0 = max(0.0, t1 - d) if d > 0 else 0.0
        sol = solve_ivp(lambda t, y: -(a0 * y + a1 * ahead(t) + g(t)), (t1, t0), [p1],
                        dense_output=True, rtol=RTOL, atol=RTOL)
        pieces.append((t0, t1, sol))
        t1, p1 = t0, float(sol.y[0, -1])

    def p(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(t)
        for k, s in enumerate(t):
            for lo, hi, sol in pieces:
                if lo - 1e-14 <= s <= hi + 1e-14:
                    out[k] = sol.sol(s)[0]
                    break
        return out

    return p


def riccati_free_p00(bx: float, sx: float, hxx: float, lxx: float, T: float, s: float) -> float:
    """Curvature of a no-delay scalar problem: P' = -(2 bx + sx^2) P - lxx, P(T) = hxx."""
    sol = solve_ivp(lambda t, P: -(2 * bx + sx**2) * P - lxx, (T, s), [hxx], rtol=RTOL, atol=RTOL)
    return float(sol.y[0, -1])


def gbm_second_moment(gamma: float, T: float, s: float, h: float = 1.0) -> float:
    """E|Y(T)|^2 for dY = gamma Y dW, Y(s) = h."""
    return h * h * np.exp(gamma**2 * (T - s))


def hat_quadrature(theta0: float, span: float, n: int, phi, nodes: int = 20001) -> float:
    """Integral of phi against a unit hat of half-width span/n at theta0, reflected into [-span, 0]."""
    w = span / n
    th = np.linspace(theta0 - w, theta0 + w, nodes)
    k = np.clip(1 - np.abs(th - theta0) / w, 0, None)
    r = np.where(th < -span, -2 * span - th, th)
    r = np.where(r > 0, -r, r)
    return float(trapezoid(k * phi(r), th) / trapezoid(k, th))


def log_slope(x, y) -> float:
    return float(np.polyfit(np.log2(np.asarray(x, float)), np.log2(np.abs(np.asarray(y, float))), 1)[0])
