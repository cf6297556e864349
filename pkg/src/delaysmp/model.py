"""Control problems: coefficients with derivatives, delay measures, control sets.

Shapes, for a batch of M evaluation points:

* ``x``: (M, d)     state
* ``y``: (M, ny)    stacked past integrals, one block of d per measure
* ``u``: (M, k)     control

Drift callbacks return ``f`` (M, d), ``dx`` (M, d, d), ``dy`` (M, d, ny),
``dxx`` (M, d, d, d), ``dxy`` (M, d, d, ny), ``dyy`` (M, d, ny, ny).  The
diffusion adds a noise axis after the component axis: ``f`` (M, d, m),
``dx`` (M, d, m, d) and so on.  Scalar costs drop the component axis.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .measures import DelayMeasure, dirac, exponential, theta_grid, uniform

__all__ = [
    "Coefficient",
    "ProblemSpec",
    "ControlPath",
    "EvaluationError",
    "HypothesisReport",
    "validate_hypotheses",
    "scenario_lq_delay",
    "scenario_pointwise",
    "scenario_tracking",
    "scenario_portfolio",
    "MarketFunction",
    "Utility",
    "SCENARIOS",
    "build_scenario",
]


class EvaluationError(ArithmeticError):
    """A coefficient returned a non-finite value."""


_Fn = Callable[..., NDArray]


def _zeros(shape_fn):
    def f(t, x, y, u):
        return np.zeros(shape_fn(x.shape[0]))

    return f


@dataclass(frozen=True, eq=False)
class Coefficient:
    """A coefficient psi(t, x, y, u) and its first and second (x, y)-derivatives."""

    f: _Fn
    dx: _Fn
    dy: _Fn
    dxx: _Fn
    dxy: _Fn
    dyy: _Fn

    def derivatives(self) -> dict[str, _Fn]:
        return {"dx": self.dx, "dy": self.dy, "dxx": self.dxx, "dxy": self.dxy, "dyy": self.dyy}


def zero_coefficient(out: tuple[int, ...], d: int, ny: int) -> Coefficient:
    return Coefficient(
        f=_zeros(lambda M: (M, *out)),
        dx=_zeros(lambda M: (M, *out, d)),
        dy=_zeros(lambda M: (M, *out, ny)),
        dxx=_zeros(lambda M: (M, *out, d, d)),
        dxy=_zeros(lambda M: (M, *out, d, ny)),
        dyy=_zeros(lambda M: (M, *out, ny, ny)),
    )


def _as_measures(mu) -> tuple[DelayMeasure, ...]:
    if mu is None:
        return ()
    if isinstance(mu, DelayMeasure):
        return (mu,)
    return tuple(mu)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything that defines the controlled delay problem.

    ``h`` is evaluated as ``h.f(T, x, y_h, u)`` with ``y_h`` the past integrals
    against ``mu_h``; the general-measure pipeline requires ``mu_h`` empty.
    """

    name: str
    d_state: int
    m_noise: int
    k_control: int
    T: float
    delay: float
    b: Coefficient
    sigma: Coefficient
    ell: Coefficient
    h: Coefficient
    mu_b: tuple[DelayMeasure, ...]
    mu_sigma: tuple[DelayMeasure, ...]
    mu_ell: tuple[DelayMeasure, ...]
    mu_h: tuple[DelayMeasure, ...]
    control_set: NDArray
    history: Callable[[NDArray], NDArray]
    params: Mapping = field(default_factory=dict)
    policies: Mapping[str, Callable] = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self) -> None:
        for name in ("mu_b", "mu_sigma", "mu_ell", "mu_h"):
            object.__setattr__(self, name, _as_measures(getattr(self, name)))
        U = np.asarray(self.control_set, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if U.shape[0] == 0:
            raise ValueError("control set is empty")
        if U.shape[1] != self.k_control:
            raise ValueError("control set points must have k_control entries")
        object.__setattr__(self, "control_set", U)

    @property
    def ny_b(self) -> int:
        return len(self.mu_b) * self.d_state

    @property
    def ny_sigma(self) -> int:
        return len(self.mu_sigma) * self.d_state

    @property
    def ny_ell(self) -> int:
        return len(self.mu_ell) * self.d_state

    @property
    def ny_h(self) -> int:
        return len(self.mu_h) * self.d_state

    def all_measures(self) -> list[DelayMeasure]:
        return [*self.mu_b, *self.mu_sigma, *self.mu_ell, *self.mu_h]

    @property
    def has_atoms(self) -> bool:
        return any(mu.has_atoms for mu in self.all_measures())

    def history_on(self, L: int) -> NDArray:
        """History x_1 on the theta-grid, shape (L + 1, d)."""
        th = theta_grid(self.delay, L)
        v = np.asarray(self.history(th), dtype=float)
        return np.broadcast_to(v.reshape(len(th), -1), (len(th), self.d_state)).copy()

    def identity(self) -> str:
        blob = json.dumps({"name": self.name, "params": _jsonable(self.params)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_measures(self, **kw) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **{k: _as_measures(v) for k, v in kw.items()})


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    if isinstance(obj, np.generic):
        return obj.item()
    return repr(obj)


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Per-path control values on the N + 1 grid nodes of [0, T].

    ``values`` has shape (M, N + 1, k); M = 1 means the same control on every path.
    """

    values: NDArray
    adapted: bool = True
    label: str = "u"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        object.__setattr__(self, "values", v)

    def check_members(self, control_set: NDArray, tol: float = 1e-12) -> None:
        v = self.values.reshape(-1, self.values.shape[-1])
        uniq = np.unique(v, axis=0)
        dist = np.min(np.abs(uniq[:, None, :] - control_set[None]).max(axis=2), axis=1)
        if np.any(dist > tol):
            bad = uniq[np.argmax(dist)]
            raise ValueError(f"control value {bad} is not in the control set")

    def at(self, i: int) -> NDArray:
        return self.values[:, i, :]

    @classmethod
    def constant(cls, value, N: int, label: str = "const") -> "ControlPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.broadcast_to(v, (1, N + 1, len(v))).copy(), label=label)

    @classmethod
    def schedule(cls, fn: Callable[[float], Sequence[float]], times: NDArray, label: str = "schedule") -> "ControlPath":
        v = np.array([np.atleast_1d(fn(float(t))) for t in times], dtype=float)
        return cls(v[None], label=label)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass
class HypothesisReport:
    lipschitz_u: dict[str, float]
    bound_at_origin: dict[str, float]
    derivative_residuals: dict[str, float]
    violations: list[str]
    n_points: int

    @property
    def passed(self) -> bool:
        return not self.violations


def _check_finite(name: str, arr: NDArray, t, x, y, u) -> None:
    bad = ~np.isfinite(arr)
    if np.any(bad):
        k = int(np.argwhere(bad.reshape(arr.shape[0], -1).any(axis=1))[0, 0])
        raise EvaluationError(
            f"{name} is not finite at t={t}, x={x[k].tolist()}, y={y[k].tolist()}, u={u[k].tolist()}"
        )


def validate_hypotheses(
    spec: ProblemSpec,
    budget: int = 100,
    *,
    seed: int = 0,
    box: float = 2.0,
    tol: float = 1e-4,
    fd_step: float = 1e-5,
) -> HypothesisReport:
    """Sample points, estimate Lipschitz constants in u, and compare derivatives to finite differences."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    d = spec.d_state
    U = spec.control_set
    coeffs = {
        "b": (spec.b, spec.ny_b),
        "sigma": (spec.sigma, spec.ny_sigma),
        "ell": (spec.ell, spec.ny_ell),
        "h": (spec.h, spec.ny_h),
    }
    lip: dict[str, float] = {}
    bound: dict[str, float] = {}
    resid: dict[str, float] = {}
    rel: dict[str, float] = {}
    violations: list[str] = []
    t = float(rng.uniform(0, spec.T))
    x = rng.uniform(-box, box, size=(budget, d))
    u = U[rng.integers(len(U), size=budget)]
    u2 = U[rng.integers(len(U), size=budget)]
    for name, (c, ny) in coeffs.items():
        y = rng.uniform(-box, box, size=(budget, ny))
        tt = spec.T if name == "h" else t
        f0 = np.asarray(c.f(tt, x, y, u), dtype=float)
        _check_finite(name, f0, tt, x, y, u)
        f1 = np.asarray(c.f(tt, x, y, u2), dtype=float)
        du = np.abs(u - u2).max(axis=1)
        df = np.abs((f1 - f0).reshape(budget, -1)).max(axis=1)
        mask = du > 0
        lip[name] = float(np.max(df[mask] / du[mask])) if mask.any() else 0.0
        z = np.zeros_like(x)
        bound[name] = float(np.max(np.abs(c.f(tt, z, np.zeros_like(y), u))))
        # first derivatives against central differences of f
        for var, n_var, key in (("x", d, "dx"), ("y", ny, "dy")):
            if n_var == 0:
                continue
            supplied = np.asarray(getattr(c, key)(tt, x, y, u), dtype=float)
            _check_finite(f"{name}.{key}", supplied, tt, x, y, u)
            fd = np.empty(supplied.shape)
            for j in range(n_var):
                e = np.zeros(n_var)
                e[j] = fd_step
                if var == "x":
                    fp, fm = c.f(tt, x + e, y, u), c.f(tt, x - e, y, u)
                else:
                    fp, fm = c.f(tt, x, y + e, u), c.f(tt, x, y - e, u)
                fd[..., j] = (np.asarray(fp) - np.asarray(fm)) / (2 * fd_step)
            err = np.abs(fd - supplied)
            resid[f"{name}.{key}"] = float(err.max())
            rel[f"{name}.{key}"] = float((err / (1.0 + np.abs(fd))).max())
        # second derivatives against central differences of the supplied first derivatives
        for key, first, var, n_var, axis_pair in (
            ("dxx", "dx", "x", d, None),
            ("dxy", "dy", "x", d, "xy"),
            ("dyy", "dy", "y", ny, None),
        ):
            n_first = ny if first == "dy" else d
            if n_var == 0 or n_first == 0:
                continue
            supplied = np.asarray(getattr(c, key)(tt, x, y, u), dtype=float)
            _check_finite(f"{name}.{key}", supplied, tt, x, y, u)
            fd = np.empty(supplied.shape)
            g = getattr(c, first)
            for j in range(n_var):
                e = np.zeros(n_var)
                e[j] = fd_step
                if var == "x":
                    gp, gm = g(tt, x + e, y, u), g(tt, x - e, y, u)
                else:
                    gp, gm = g(tt, x, y + e, u), g(tt, x, y - e, u)
                diff = (np.asarray(gp) - np.asarray(gm)) / (2 * fd_step)
                if axis_pair == "xy":
                    fd[..., j, :] = diff
                else:
                    fd[..., j] = diff
            err = np.abs(fd - supplied)
            resid[f"{name}.{key}"] = float(err.max())
            rel[f"{name}.{key}"] = float((err / (1.0 + np.abs(fd))).max())
    # residuals are absolute; the pass/fail threshold is relative to the derivative size
    for k, v in resid.items():
        if rel[k] > tol:
            violations.append(f"derivative {k} disagrees with finite differences (residual {v:.3g})")
    for k, v in lip.items():
        if not np.isfinite(v):
            violations.append(f"{k} is not Lipschitz in u on the control set")
    if spec.mu_h and any(not mu.is_zero for mu in spec.mu_h):
        violations.append("terminal cost depends on the past (density pipeline only)")
    return HypothesisReport(lip, bound, resid, violations, budget)


# ---------------------------------------------------------------------------
# scenario helpers


def _measure_from(kind, d: float, weight: float = 1.0) -> tuple[DelayMeasure, ...]:
    """'dirac', 'uniform', 'mixed', 'none', ('exp', rate) or a DelayMeasure."""
    if isinstance(kind, DelayMeasure):
        return (kind,)
    if kind is None or kind == "none" or d == 0:
        if d == 0 and kind not in (None, "none"):
            return (dirac(0.0, 0.0, weight),)
        return ()
    if kind == "dirac":
        return (dirac(-d, d, weight),)
    if kind == "uniform":
        return (uniform(d, weight),)
    if kind == "mixed":
        half = 0.5 * weight
        u = uniform(d, half)
        return (DelayMeasure(span=d, atoms=((-d, half),), density_fn=u.density_fn, label="mixed"),)
    if isinstance(kind, str) and kind.startswith("exp"):
        rate = float(kind[kind.index("(") + 1 : kind.index(")")])
        return (exponential(d, rate, weight),)
    raise ValueError(f"unknown measure kind {kind!r}")


def _const_history(x0: float | Sequence[float]):
    v = np.atleast_1d(np.asarray(x0, dtype=float))

    def hist(theta):
        return np.broadcast_to(v, (len(theta), len(v)))

    return hist


def _scalar_coeff(f, fx, fy, fxx, fxy, fyy, kind: str) -> Coefficient:
    """Wrap scalar-state functions of (t, x, y, u) with x, y, u of shape (M,)."""
    if kind == "drift":
        pre = (1,)
    elif kind == "diffusion":
        pre = (1, 1)
    else:
        pre = ()

    def wrap(g, tail):
        def out(t, x, y, u):
            M = x.shape[0]
            yy = y[:, 0] if y.shape[1] else np.zeros(M)
            val = np.asarray(g(t, x[:, 0], yy, u[:, 0]), dtype=float)
            val = np.broadcast_to(val, (M,))
            ny = y.shape[1]
            shape = (M, *pre) + tuple(ny if s == "y" else 1 for s in tail)
            res = np.zeros(shape)
            if "y" in tail and ny == 0:
                return res
            idx = (slice(None),) + (0,) * (len(shape) - 1)
            res[idx] = val
            return res

        return out

    return Coefficient(
        f=wrap(f, ()),
        dx=wrap(fx, ("x",)),
        dy=wrap(fy, ("y",)),
        dxx=wrap(fxx, ("x", "x")),
        dxy=wrap(fxy, ("x", "y")),
        dyy=wrap(fyy, ("y", "y")),
    )


def _zero(t, x, y, u):
    return 0.0


def scenario_lq_delay(
    a0: float = 0.0,
    a1: float = 0.0,
    s0: float = 0.0,
    s1: float = 0.0,
    c_u: float = 0.0,
    *,
    d: float = 0.5,
    T: float = 1.0,
    x0: float = 1.0,
    mu_b="dirac",
    mu_sigma="dirac",
    control_set: Sequence[float] = (-1.0, 1.0),
    drift_u: float = 1.0,
    q_x: float = 1.0,
    h_coef: float = 1.0,
    gamma: Callable[[float], float] | None = None,
    sigma0: float = 0.0,
    kb: float = 0.0,
    ks: float = 0.0,
    name: str = "lq_delay",
) -> ProblemSpec:
    """Scalar linear-quadratic problem with delay.

    b = a0 x + a1 Ib + drift_u u + kb sin(x),
    sigma = sigma0 + s0 x + s1 Is + c_u u + ks sin(x),
    ell = q_x x^2 + u gamma(t),  h = h_coef x^2.

    ``kb`` and ``ks`` add bounded smooth nonlinearities so that the second
    variation is not exact.
    """
    mb = _measure_from(mu_b, d)
    ms = _measure_from(mu_sigma, d)
    g = gamma if gamma is not None else (lambda t: 0.0)

    b = _scalar_coeff(
        lambda t, x, y, u: a0 * x + a1 * y + drift_u * u + kb * np.sin(x),
        lambda t, x, y, u: a0 + kb * np.cos(x),
        lambda t, x, y, u: a1 + 0.0 * x,
        lambda t, x, y, u: -kb * np.sin(x),
        _zero,
        _zero,
        "drift",
    )
    sig = _scalar_coeff(
        lambda t, x, y, u: sigma0 + s0 * x + s1 * y + c_u * u + ks * np.sin(x),
        lambda t, x, y, u: s0 + ks * np.cos(x),
        lambda t, x, y, u: s1 + 0.0 * x,
        lambda t, x, y, u: -ks * np.sin(x),
        _zero,
        _zero,
        "diffusion",
    )
    ell = _scalar_coeff(
        lambda t, x, y, u: q_x * x**2 + u * g(t),
        lambda t, x, y, u: 2 * q_x * x,
        _zero,
        lambda t, x, y, u: 2 * q_x + 0.0 * x,
        _zero,
        _zero,
        "scalar",
    )
    h = _scalar_coeff(
        lambda t, x, y, u: h_coef * x**2,
        lambda t, x, y, u: 2 * h_coef * x,
        _zero,
        lambda t, x, y, u: 2 * h_coef + 0.0 * x,
        _zero,
        _zero,
        "scalar",
    )
    params = dict(
        a0=a0, a1=a1, s0=s0, s1=s1, c_u=c_u, d=d, T=T, x0=x0, mu_b=_label(mu_b), mu_sigma=_label(mu_sigma),
        control_set=list(control_set), drift_u=drift_u, q_x=q_x, h_coef=h_coef, sigma0=sigma0, kb=kb, ks=ks,
        gamma=None if gamma is None else repr(gamma),
    )
    return ProblemSpec(
        name=name, d_state=1, m_noise=1, k_control=1, T=T, delay=d,
        b=b, sigma=sig, ell=ell, h=h,
        mu_b=mb, mu_sigma=ms, mu_ell=(), mu_h=(),
        control_set=np.asarray(control_set, dtype=float),
        history=_const_history(x0), params=params,
    )


def _label(kind) -> str:
    if isinstance(kind, DelayMeasure):
        return kind.label or "custom"
    return str(kind)


def scenario_pointwise(**params) -> ProblemSpec:
    """LQ-delay problem with mu_b = mu_sigma = Dirac at -d (atoms only)."""
    params = dict(params)
    params["mu_b"] = "dirac"
    params["mu_sigma"] = "dirac"
    params.setdefault("name", "pointwise")
    return scenario_lq_delay(**params)


def scenario_tracking(
    *,
    d: float = 0.5,
    T: float = 1.0,
    x0: float = 1.0,
    a0: float = -0.5,
    a1: float = 0.5,
    s0: float = 0.2,
    sigma0: float = 0.3,
    control_set: Sequence[float] = (-1.0, 0.0, 1.0),
    switch: float = 0.5,
    levels: tuple[float, float] = (1.0, -1.0),
    name: str = "tracking",
) -> ProblemSpec:
    """Control-free delay dynamics with ell = x^2 + (u - gamma(t))^2.

    gamma(t) = levels[0] before ``switch`` and levels[1] after; both levels
    must be in the control set, so u = gamma is the optimal control.
    """
    lo, hi = levels

    def gamma(t):
        return lo if t < switch - 1e-12 else hi

    b = _scalar_coeff(
        lambda t, x, y, u: a0 * x + a1 * y,
        lambda t, x, y, u: a0 + 0.0 * x,
        lambda t, x, y, u: a1 + 0.0 * x,
        _zero, _zero, _zero, "drift",
    )
    sig = _scalar_coeff(
        lambda t, x, y, u: sigma0 + s0 * x,
        lambda t, x, y, u: s0 + 0.0 * x,
        _zero, _zero, _zero, _zero, "diffusion",
    )
    ell = _scalar_coeff(
        lambda t, x, y, u: x**2 + (u - gamma(t)) ** 2,
        lambda t, x, y, u: 2 * x,
        _zero,
        lambda t, x, y, u: 2.0 + 0.0 * x,
        _zero, _zero, "scalar",
    )
    h = _scalar_coeff(
        lambda t, x, y, u: x**2,
        lambda t, x, y, u: 2 * x,
        _zero,
        lambda t, x, y, u: 2.0 + 0.0 * x,
        _zero, _zero, "scalar",
    )
    U = np.asarray(control_set, dtype=float)
    if not (np.any(np.isclose(U, lo)) and np.any(np.isclose(U, hi))):
        raise ValueError("tracking levels must belong to the control set")

    def optimal(t, x, past):
        return np.full((x.shape[0], 1), gamma(t))

    params = dict(d=d, T=T, x0=x0, a0=a0, a1=a1, s0=s0, sigma0=sigma0, control_set=list(control_set),
                  switch=switch, levels=list(levels))
    return ProblemSpec(
        name=name, d_state=1, m_noise=1, k_control=1, T=T, delay=d,
        b=b, sigma=sig, ell=ell, h=h,
        mu_b=_measure_from("dirac", d), mu_sigma=(), mu_ell=(), mu_h=(),
        control_set=U, history=_const_history(x0), params=params,
        policies={"optimal": optimal},
    )


# ---------------------------------------------------------------------------
# portfolio with delayed market coefficients


@dataclass(frozen=True, eq=False)
class MarketFunction:
    """Scalar g(t, S, y) with derivatives in (S, y); y is a past integral of S."""

    f: Callable
    fs: Callable
    fy: Callable
    fss: Callable
    fsy: Callable
    fyy: Callable
    label: str = ""

    @classmethod
    def constant(cls, c: float) -> "MarketFunction":
        z = lambda t, s, y: 0.0 * s  # noqa: E731
        return cls(lambda t, s, y: c + 0.0 * s, z, z, z, z, z, label=f"const({c})")

    @classmethod
    def tanh_past(cls, base: float, amp: float, ref: float) -> "MarketFunction":
        """base + amp * tanh(y / ref - 1): reacts to the delayed price level."""
        def th(y):
            return np.tanh(y / ref - 1.0)

        z = lambda t, s, y: 0.0 * s  # noqa: E731
        return cls(
            lambda t, s, y: base + amp * th(y),
            z,
            lambda t, s, y: amp * (1 - th(y) ** 2) / ref,
            z,
            z,
            lambda t, s, y: -2 * amp * th(y) * (1 - th(y) ** 2) / ref**2,
            label=f"tanh_past({base},{amp},{ref})",
        )

    @classmethod
    def linear_past(cls, scale: float) -> "MarketFunction":
        """y / scale."""
        z = lambda t, s, y: 0.0 * s  # noqa: E731
        return cls(
            lambda t, s, y: y / scale,
            z,
            lambda t, s, y: 1.0 / scale + 0.0 * s,
            z, z, z,
            label=f"linear_past({scale})",
        )


@dataclass(frozen=True, eq=False)
class Utility:
    """u(t, V, c) with derivatives in V; ``c`` is ignored by terminal utilities."""

    f: Callable
    fv: Callable
    fvv: Callable
    label: str = ""

    @classmethod
    def linear(cls, weight: float = 1.0) -> "Utility":
        return cls(lambda t, v, c: weight * v, lambda t, v, c: weight + 0.0 * v, lambda t, v, c: 0.0 * v,
                   label=f"linear({weight})")

    @classmethod
    def consumption(cls, rho: float = 0.0, scale: float = 1.0) -> "Utility":
        """exp(-rho t) * scale * log(1 + c), independent of wealth."""
        return cls(
            lambda t, v, c: np.exp(-rho * t) * scale * np.log1p(c) + 0.0 * v,
            lambda t, v, c: 0.0 * v,
            lambda t, v, c: 0.0 * v,
            label=f"consumption({rho},{scale})",
        )

    @classmethod
    def exponential(cls, alpha: float) -> "Utility":
        """(1 - exp(-alpha V)) / alpha."""
        return cls(
            lambda t, v, c: (1 - np.exp(-alpha * v)) / alpha,
            lambda t, v, c: np.exp(-alpha * v),
            lambda t, v, c: -alpha * np.exp(-alpha * v),
            label=f"exponential({alpha})",
        )


def scenario_portfolio(
    *,
    d: float = 0.25,
    T: float = 1.0,
    S0: float = 1.0,
    V0: float = 1.0,
    b: MarketFunction | None = None,
    sigma: MarketFunction | None = None,
    r: MarketFunction | None = None,
    mu_b="dirac",
    mu_sigma="dirac",
    mu_r="dirac",
    U1: Utility | None = None,
    U2: Utility | None = None,
    pi_grid: Sequence[float] = (0.0, 0.5, 1.0),
    consumption: Sequence[float] = (0.0, 0.25, 0.5),
    name: str = "portfolio",
) -> ProblemSpec:
    """Two-state market x = (S, V) with control (pi, c).

    dS = S [b(t, S, Ib) dt + sigma(t, S, Is) dW]
    dV = [r(t, S, Ir)(V - pi) - c + pi b(t, S, Ib)] dt + pi sigma(t, S, Is) dW

    Utilities are maximized, so the stored costs are ell = -U1(t, V, c) and
    h = -U2(V).  The drift depends on two delay measures (mu_b, mu_r); its
    past-integral vector is (Ib_S, Ib_V, Ir_S, Ir_V).
    """
    if len(consumption) == 0:
        raise ValueError("consumption set is empty")
    if any(c < 0 for c in consumption):
        raise ValueError("consumption values must be non-negative")
    bf = b or MarketFunction.tanh_past(0.08, 0.05, S0)
    sf = sigma or MarketFunction.constant(0.2)
    rf = r or MarketFunction.constant(0.03)
    u1 = U1 or Utility.consumption(0.1, 1.2)
    u2 = U2 or Utility.linear(1.0)
    mb = _measure_from(mu_b, d)
    mr = _measure_from(mu_r, d)
    ms = _measure_from(mu_sigma, d)
    if len(mb) != 1 or len(mr) != 1 or len(ms) != 1:
        raise ValueError("portfolio measures must each be a single non-empty measure")

    # drift y layout: [Ib_S, Ib_V, Ir_S, Ir_V]
    def drift_f(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi, c = u[:, 0], u[:, 1]
        gb = bf.f(t, S, y[:, 0])
        gr = rf.f(t, S, y[:, 2])
        out = np.empty((x.shape[0], 2))
        out[:, 0] = S * gb
        out[:, 1] = gr * (V - pi) - c + pi * gb
        return out

    def drift_dx(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi = u[:, 0]
        M = x.shape[0]
        out = np.zeros((M, 2, 2))
        out[:, 0, 0] = bf.f(t, S, y[:, 0]) + S * bf.fs(t, S, y[:, 0])
        out[:, 1, 0] = rf.fs(t, S, y[:, 2]) * (V - pi) + pi * bf.fs(t, S, y[:, 0])
        out[:, 1, 1] = rf.f(t, S, y[:, 2])
        return out

    def drift_dy(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 4))
        out[:, 0, 0] = S * bf.fy(t, S, y[:, 0])
        out[:, 1, 0] = pi * bf.fy(t, S, y[:, 0])
        out[:, 1, 2] = rf.fy(t, S, y[:, 2]) * (V - pi)
        return out

    def drift_dxx(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 2, 2))
        out[:, 0, 0, 0] = 2 * bf.fs(t, S, y[:, 0]) + S * bf.fss(t, S, y[:, 0])
        out[:, 1, 0, 0] = rf.fss(t, S, y[:, 2]) * (V - pi) + pi * bf.fss(t, S, y[:, 0])
        r_s = rf.fs(t, S, y[:, 2])
        out[:, 1, 0, 1] = r_s
        out[:, 1, 1, 0] = r_s
        return out

    def drift_dxy(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 2, 4))
        out[:, 0, 0, 0] = bf.fy(t, S, y[:, 0]) + S * bf.fsy(t, S, y[:, 0])
        out[:, 1, 0, 0] = pi * bf.fsy(t, S, y[:, 0])
        out[:, 1, 0, 2] = rf.fsy(t, S, y[:, 2]) * (V - pi)
        out[:, 1, 1, 2] = rf.fy(t, S, y[:, 2])
        return out

    def drift_dyy(t, x, y, u):
        S, V = x[:, 0], x[:, 1]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 4, 4))
        out[:, 0, 0, 0] = S * bf.fyy(t, S, y[:, 0])
        out[:, 1, 0, 0] = pi * bf.fyy(t, S, y[:, 0])
        out[:, 1, 2, 2] = rf.fyy(t, S, y[:, 2]) * (V - pi)
        return out

    # diffusion y layout: [Is_S, Is_V]
    def diff_f(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        g = sf.f(t, S, y[:, 0])
        out = np.empty((x.shape[0], 2, 1))
        out[:, 0, 0] = S * g
        out[:, 1, 0] = pi * g
        return out

    def diff_dx(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 1, 2))
        out[:, 0, 0, 0] = sf.f(t, S, y[:, 0]) + S * sf.fs(t, S, y[:, 0])
        out[:, 1, 0, 0] = pi * sf.fs(t, S, y[:, 0])
        return out

    def diff_dy(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 1, 2))
        out[:, 0, 0, 0] = S * sf.fy(t, S, y[:, 0])
        out[:, 1, 0, 0] = pi * sf.fy(t, S, y[:, 0])
        return out

    def diff_dxx(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 1, 2, 2))
        out[:, 0, 0, 0, 0] = 2 * sf.fs(t, S, y[:, 0]) + S * sf.fss(t, S, y[:, 0])
        out[:, 1, 0, 0, 0] = pi * sf.fss(t, S, y[:, 0])
        return out

    def diff_dxy(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 1, 2, 2))
        out[:, 0, 0, 0, 0] = sf.fy(t, S, y[:, 0]) + S * sf.fsy(t, S, y[:, 0])
        out[:, 1, 0, 0, 0] = pi * sf.fsy(t, S, y[:, 0])
        return out

    def diff_dyy(t, x, y, u):
        S = x[:, 0]
        pi = u[:, 0]
        out = np.zeros((x.shape[0], 2, 1, 2, 2))
        out[:, 0, 0, 0, 0] = S * sf.fyy(t, S, y[:, 0])
        out[:, 1, 0, 0, 0] = pi * sf.fyy(t, S, y[:, 0])
        return out

    def ell_f(t, x, y, u):
        return -u1.f(t, x[:, 1], u[:, 1]) + 0.0 * x[:, 0]

    def ell_dx(t, x, y, u):
        out = np.zeros((x.shape[0], 2))
        out[:, 1] = -u1.fv(t, x[:, 1], u[:, 1])
        return out

    def ell_dxx(t, x, y, u):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 1, 1] = -u1.fvv(t, x[:, 1], u[:, 1])
        return out

    def h_f(t, x, y, u):
        return -u2.f(t, x[:, 1], None) + 0.0 * x[:, 0]

    def h_dx(t, x, y, u):
        out = np.zeros((x.shape[0], 2))
        out[:, 1] = -u2.fv(t, x[:, 1], None)
        return out

    def h_dxx(t, x, y, u):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 1, 1] = -u2.fvv(t, x[:, 1], None)
        return out

    def zeros(*shape):
        return lambda t, x, y, u: np.zeros((x.shape[0], *shape))

    drift = Coefficient(drift_f, drift_dx, drift_dy, drift_dxx, drift_dxy, drift_dyy)
    diff = Coefficient(diff_f, diff_dx, diff_dy, diff_dxx, diff_dxy, diff_dyy)
    ell = Coefficient(ell_f, ell_dx, zeros(0), ell_dxx, zeros(2, 0), zeros(0, 0))
    h = Coefficient(h_f, h_dx, zeros(0), h_dxx, zeros(2, 0), zeros(0, 0))
    U = np.array([(p, c) for p in pi_grid for c in consumption], dtype=float)
    params = dict(d=d, T=T, S0=S0, V0=V0, b=bf.label, sigma=sf.label, r=rf.label, mu_b=_label(mu_b),
                  mu_sigma=_label(mu_sigma), mu_r=_label(mu_r), U1=u1.label, U2=u2.label,
                  pi_grid=list(pi_grid), consumption=list(consumption))

    def optimal(t, x, past):
        """Pointwise optimum when r is deterministic and U2 is linear.

        Then the wealth adjoint is deterministic, the noise adjoint vanishes,
        and the Hamiltonian is linear in pi with slope proportional to b - r.
        """
        S = x[:, 0]
        excess = bf.f(t, S, past["b"][:, 0]) - rf.f(t, S, past["b"][:, 2])
        pis = np.where(excess > 0, max(pi_grid), min(pi_grid))
        disc = _wealth_discount(t)
        gains = [u1.f(t, x[:, 1], np.full_like(S, c)) - disc * c for c in consumption]
        best = np.asarray(consumption)[np.argmax(np.vstack(gains), axis=0)]
        return np.column_stack([pis, best])

    def _wealth_discount(t):
        # marginal value of wealth for linear U2 and constant r: w2 * exp(r (T - t))
        r0 = float(np.asarray(rf.f(t, np.array([S0]), np.array([S0])))[0])
        w2 = float(np.asarray(u2.fv(T, np.array([V0]), None))[0])
        return w2 * np.exp(r0 * (T - t))

    return ProblemSpec(
        name=name, d_state=2, m_noise=1, k_control=2, T=T, delay=d,
        b=drift, sigma=diff, ell=ell, h=h,
        mu_b=(mb[0], mr[0]), mu_sigma=ms, mu_ell=(), mu_h=(),
        control_set=U, history=_const_history([S0, V0]), params=params,
        policies={"optimal": optimal},
        notes="cost = -utility; the verdict layer minimizes cost, i.e. maximizes utility",
    )


SCENARIOS: dict[str, Callable[..., ProblemSpec]] = {
    "lq_delay": scenario_lq_delay,
    "pointwise": scenario_pointwise,
    "tracking": scenario_tracking,
    "portfolio": scenario_portfolio,
}


def build_scenario(name: str, params: Mapping | None = None) -> ProblemSpec:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[name](**dict(params or {}))
