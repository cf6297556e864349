"""Euler-Maruyama solvers for the controlled delay state and its variations.

All trajectories live on the full grid [-d, T]: index ``L + i`` is time
``t_i`` and the past segment at ``t_i`` is ``values[:, i:i + L + 1]``.
Variation equations freeze every coefficient derivative along the base pair
(x, u) and only ever step linear (or linear-plus-forcing) recursions, so a
batch of flows shares one pass over the derivative callbacks.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .measures import mollify, stack_masses
from .model import ControlPath, ProblemSpec
from .paths import BrownianBundle, TimeGrid

__all__ = [
    "DivergenceError",
    "ConsistencyError",
    "SpikeWindow",
    "TrajectoryBundle",
    "Policy",
    "spike",
    "spike_mask",
    "spec_masses",
    "FrozenCoefficients",
    "second_forcing",
    "past_integrals",
    "control_at",
    "simulate_state",
    "simulate_first_variation",
    "simulate_second_variation",
    "simulate_regularized_variations",
    "simulate_linearized",
    "simulate_linearized_batch",
    "cost",
    "cost_paths",
    "sup_sq",
    "write_csv",
    "write_binary",
    "read_binary",
]


class DivergenceError(FloatingPointError):
    """A forward recursion produced a non-finite value."""


class ConsistencyError(ValueError):
    """Inputs were produced on different grids, bundles or controls."""


@dataclass(frozen=True)
class SpikeWindow:
    """Replace the control by ``v`` on [start, start + width)."""

    start: float
    width: float
    v: Sequence[float] | float

    def value(self, k: int) -> NDArray:
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if len(v) != k:
            raise ValueError(f"spike value has {len(v)} entries, control has {k}")
        return v

    def nodes(self, grid: TimeGrid) -> range:
        if self.width < 0:
            raise ValueError("spike width must be non-negative")
        if self.start < 0 or self.start + self.width > grid.T * (1 + 1e-12):
            raise ValueError(f"spike window [{self.start}, {self.start + self.width}) leaves [0, {grid.T}]")
        i0 = grid.index(self.start)
        k = grid.steps(self.width)
        if i0 + k > grid.N:
            raise ValueError("spike window extends past T")
        return range(i0, i0 + k)


Policy = Callable[[float, NDArray, Mapping[str, NDArray]], NDArray]
"""Feedback control (t, x (M, d), past integrals by coefficient) -> (M, k)."""


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    values: NDArray
    grid: TimeGrid
    label: str
    provenance: Mapping = field(default_factory=dict)
    control: ControlPath | None = None

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def times(self) -> NDArray:
        return self.grid.full_times

    def at(self, i: int) -> NDArray:
        """Values at t_i, shape (M, d)."""
        return self.values[:, self.grid.L + i]

    def segment(self, i: int) -> NDArray:
        return self.values[:, i : i + self.grid.L + 1]

    def on_horizon(self) -> NDArray:
        """Values on [0, T], shape (M, N + 1, d)."""
        return self.values[:, self.grid.L :]


def _windows(w: SpikeWindow | Iterable[SpikeWindow] | None) -> list[SpikeWindow]:
    if w is None:
        return []
    if isinstance(w, SpikeWindow):
        return [w]
    return list(w)


def spike(u: ControlPath, w: SpikeWindow | Iterable[SpikeWindow], grid: TimeGrid) -> ControlPath:
    """u on the complement of the window(s), v inside; nodes are left endpoints of cells."""
    vals = np.array(u.values, copy=True)
    if vals.shape[1] != grid.N + 1:
        raise ConsistencyError("control path does not match the grid")
    for win in _windows(w):
        idx = list(win.nodes(grid))
        if idx:
            vals[:, idx, :] = win.value(vals.shape[2])
    return ControlPath(vals, adapted=u.adapted, label=f"{u.label}~spike")


def spike_mask(w: SpikeWindow | Iterable[SpikeWindow], grid: TimeGrid) -> NDArray:
    """Indicator of the spiked cells, shape (N,)."""
    m = np.zeros(grid.N, dtype=bool)
    for win in _windows(w):
        m[list(win.nodes(grid))] = True
    return m


def spec_masses(spec: ProblemSpec, L: int, n: int | None = None) -> dict[str, NDArray]:
    """Node-mass matrices per coefficient; ``n`` mollifies every measure."""

    def build(measures):
        if n is not None:
            measures = [mollify(mu, n, L) for mu in measures]
        return stack_masses(measures, L)

    return {
        "b": build(spec.mu_b),
        "sigma": build(spec.mu_sigma),
        "ell": build(spec.mu_ell),
        "h": build(spec.mu_h),
    }


def past_integrals(seg: NDArray, masses: NDArray) -> NDArray:
    """(..., L + 1, d) x (n, L + 1) -> (..., n * d)."""
    if masses.shape[0] == 0:
        return np.zeros((*seg.shape[:-2], 0))
    nz = np.flatnonzero(np.any(masses != 0.0, axis=0))
    out = np.matmul(masses[:, nz], seg[..., nz, :])
    return out.reshape(*out.shape[:-2], -1)


def control_at(u: ControlPath, i: int, M: int) -> NDArray:
    v = u.values[:, i, :]
    return np.broadcast_to(v, (M, v.shape[1])) if v.shape[0] == 1 else v


def _check(arr: NDArray, i: int, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"{what} diverged at step {i}")


def _provenance(spec: ProblemSpec, u: ControlPath | None, W: BrownianBundle, label: str, n=None) -> dict:
    return {
        "label": label,
        "spec": spec.identity(),
        "control": None if u is None else u.digest(),
        "seed": W.seed,
        "M": W.M,
        "mollification": "exact" if n is None else int(n),
        **W.grid.as_dict(),
    }


def _check_grid(spec: ProblemSpec, W: BrownianBundle) -> TimeGrid:
    g = W.grid
    if abs(g.T - spec.T) > 1e-12 or abs(g.d - spec.delay) > 1e-12:
        raise ConsistencyError("Brownian grid does not match the problem horizon or delay")
    if W.m != spec.m_noise:
        raise ConsistencyError("Brownian dimension does not match m_noise")
    return g


def simulate_state(
    spec: ProblemSpec,
    u: ControlPath | Policy,
    W: BrownianBundle,
    *,
    label: str = "state",
    check_controls: bool = True,
) -> TrajectoryBundle:
    """Left-point Euler-Maruyama for the controlled delay equation."""
    g = _check_grid(spec, W)
    L, N, M, d = g.L, g.N, W.M, spec.d_state
    dt = g.dt
    mass = spec_masses(spec, L)
    X = np.empty((M, L + N + 1, d))
    X[:, : L + 1] = spec.history_on(L)
    policy = None if isinstance(u, ControlPath) else u
    if policy is None:
        if u.values.shape[1] != N + 1:
            raise ConsistencyError("control path does not match the grid")
        if u.values.shape[0] not in (1, M):
            raise ConsistencyError("control path count does not match the bundle")
        if check_controls:
            u.check_members(spec.control_set)
        realized = None
    else:
        realized = np.empty((M, N + 1, spec.k_control))
    times = g.times
    for i in range(N + 1):
        seg = X[:, i : i + L + 1]
        x = seg[:, -1]
        Ib = past_integrals(seg, mass["b"])
        Is = past_integrals(seg, mass["sigma"])
        if policy is not None:
            past = {"b": Ib, "sigma": Is, "ell": past_integrals(seg, mass["ell"])}
            ui = np.asarray(policy(times[i], x, past), dtype=float).reshape(M, spec.k_control)
            realized[:, i] = ui
        else:
            ui = control_at(u, i, M)
        if i == N:
            break
        drift = spec.b.f(times[i], x, Ib, ui)
        diff = spec.sigma.f(times[i], x, Is, ui)
        X[:, L + i + 1] = x + drift * dt + np.einsum("Mal,Ml->Ma", diff, W.dW[:, i])
        _check(X[:, L + i + 1], i, label)
    if policy is not None:
        u = ControlPath(realized, adapted=True, label=getattr(policy, "__name__", "policy"))
        if check_controls:
            u.check_members(spec.control_set)
    return TrajectoryBundle(X, g, label, _provenance(spec, u, W, label), control=u)


def _base_control(base: TrajectoryBundle, u: ControlPath | None, W: BrownianBundle | None = None) -> ControlPath:
    if W is not None:
        pv = base.provenance
        if pv.get("seed", W.seed) != W.seed or pv.get("M", W.M) != W.M:
            raise ConsistencyError("base trajectory was simulated on a different Brownian bundle")
    if u is None:
        if base.control is None:
            raise ConsistencyError("base trajectory carries no control; pass u")
        return base.control
    if base.control is not None and base.provenance.get("control") not in (None, u.digest()):
        raise ConsistencyError("control does not match the one used for the base trajectory")
    return u


class FrozenCoefficients:
    """Coefficient derivatives along the base pair, evaluated one step at a time."""

    def __init__(self, spec: ProblemSpec, base: TrajectoryBundle, u: ControlPath, mass: Mapping[str, NDArray]):
        self.spec, self.base, self.u, self.mass = spec, base, u, mass
        self.times = base.grid.times

    def args(self, i: int):
        seg = self.base.segment(i)
        x = seg[:, -1]
        return (
            self.times[i],
            x,
            past_integrals(seg, self.mass["b"]),
            past_integrals(seg, self.mass["sigma"]),
            past_integrals(seg, self.mass["ell"]),
            control_at(self.u, i, self.base.M),
        )

    def first(self, i: int):
        t, x, Ib, Is, _, ui = self.args(i)
        s = self.spec
        return s.b.dx(t, x, Ib, ui), s.b.dy(t, x, Ib, ui), s.sigma.dx(t, x, Is, ui), s.sigma.dy(t, x, Is, ui)

    def cost_first(self, i: int):
        t, x, _, _, Il, ui = self.args(i)
        return self.spec.ell.dx(t, x, Il, ui), self.spec.ell.dy(t, x, Il, ui)

    def terminal(self):
        """(t, x, past integral against mu_h, u) at T."""
        g = self.base.grid
        seg = self.base.segment(g.N)
        return g.T, seg[:, -1], past_integrals(seg, self.mass["h"]), control_at(self.u, g.N, self.base.M)


def _linear_step(
    Y: NDArray, i: int, L: int, dt: float, dW: NDArray, coeffs, mb: NDArray, ms: NDArray,
    drift_force=None, diff_force=None,
) -> None:
    """One Euler step of dY = (bx Y + by IbY + f) dt + (sx Y + sy IsY + g) dW for a batch (B, M, ...)."""
    bx, by, sx, sy = coeffs
    seg = Y[..., i : i + L + 1, :]
    y = seg[..., -1, :]
    drift = np.einsum("Mab,BMb->BMa", bx, y)
    diff = np.einsum("Malb,BMb->BMal", sx, y)
    if mb.shape[0]:
        drift += np.einsum("Mak,BMk->BMa", by, past_integrals(seg, mb))
    if ms.shape[0]:
        diff += np.einsum("Malk,BMk->BMal", sy, past_integrals(seg, ms))
    if drift_force is not None:
        drift += drift_force
    if diff_force is not None:
        diff += diff_force
    Y[..., L + i + 1, :] = y + drift * dt + np.einsum("BMal,Ml->BMa", diff, dW)


def _variation_masses(spec: ProblemSpec, L: int, n: int | None) -> tuple[dict, dict]:
    """Masses for the base coefficients (always exact) and for the variation's own past integrals."""
    exact = spec_masses(spec, L)
    forcing = exact if n is None else spec_masses(spec, L, n)
    return exact, forcing


def simulate_first_variation(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    w: SpikeWindow | Iterable[SpikeWindow],
    W: BrownianBundle,
    *,
    n: int | None = None,
) -> TrajectoryBundle:
    """Linear delay equation for the first variation, forced by the noise jump on the window.

    With ``n`` the past integrals of the variation use the mollified measures
    while the coefficients stay frozen along the exact base trajectory.
    """
    g = _check_grid(spec, W)
    u = _base_control(base, u, W)
    ue = spike(u, w, g)
    exact, forcing = _variation_masses(spec, g.L, n)
    fr = FrozenCoefficients(spec, base, u, exact)
    M, L = W.M, g.L
    Y = np.zeros((1, M, L + g.N + 1, spec.d_state))
    active = spike_mask(w, g)
    for i in range(g.N):
        coeffs = fr.first(i)
        force = None
        if active[i]:
            t, x, _, Is, _, ui = fr.args(i)
            vi = control_at(ue, i, M)
            force = (spec.sigma.f(t, x, Is, vi) - spec.sigma.f(t, x, Is, ui))[None]
        _linear_step(Y, i, L, g.dt, W.dW[:, i], coeffs, forcing["b"], forcing["sigma"], None, force)
        _check(Y[:, :, L + i + 1], i, "first variation")
    label = "y" if n is None else f"y_n{n}"
    return TrajectoryBundle(Y[0], g, label, _provenance(spec, u, W, label, n), control=u)


def second_forcing(
    fr: "FrozenCoefficients", i: int, y: TrajectoryBundle, ue: ControlPath | None, forcing: Mapping[str, NDArray]
) -> tuple[NDArray, NDArray]:
    """Drift (M, d) and diffusion (M, d, m) forcings of the second variation at step i.

    Quadratic forms use the symmetric Hessian of (x, past integral); ``ue`` is
    the spiked control when step i lies in the window, else None.
    """
    s = fr.spec
    t, x, Ib, Is, _, ui = fr.args(i)
    yseg = y.segment(i)
    yi = yseg[:, -1]
    Iyb = past_integrals(yseg, forcing["b"])
    Iys = past_integrals(yseg, forcing["sigma"])
    fd = 0.5 * np.einsum("Maij,Mi,Mj->Ma", s.b.dxx(t, x, Ib, ui), yi, yi)
    gd = 0.5 * np.einsum("Malij,Mi,Mj->Mal", s.sigma.dxx(t, x, Is, ui), yi, yi)
    if Iyb.shape[1]:
        fd += np.einsum("Maik,Mi,Mk->Ma", s.b.dxy(t, x, Ib, ui), yi, Iyb)
        fd += 0.5 * np.einsum("Makj,Mk,Mj->Ma", s.b.dyy(t, x, Ib, ui), Iyb, Iyb)
    if Iys.shape[1]:
        gd += np.einsum("Malik,Mi,Mk->Mal", s.sigma.dxy(t, x, Is, ui), yi, Iys)
        gd += 0.5 * np.einsum("Malkj,Mk,Mj->Mal", s.sigma.dyy(t, x, Is, ui), Iys, Iys)
    if ue is not None:
        vi = control_at(ue, i, x.shape[0])
        fd += s.b.f(t, x, Ib, vi) - s.b.f(t, x, Ib, ui)
        gd += np.einsum("Malb,Mb->Mal", s.sigma.dx(t, x, Is, vi) - s.sigma.dx(t, x, Is, ui), yi)
        if Iys.shape[1]:
            gd += np.einsum("Malk,Mk->Mal", s.sigma.dy(t, x, Is, vi) - s.sigma.dy(t, x, Is, ui), Iys)
    return fd, gd


def simulate_second_variation(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    y: TrajectoryBundle,
    u: ControlPath | None,
    w: SpikeWindow | Iterable[SpikeWindow],
    W: BrownianBundle,
    *,
    n: int | None = None,
) -> TrajectoryBundle:
    """Second variation: linear part plus quadratic forms in (y, past integrals of y) and spike forcings."""
    g = _check_grid(spec, W)
    u = _base_control(base, u, W)
    if y.grid != g or y.M != W.M:
        raise ConsistencyError("first variation was computed on a different grid or bundle")
    ue = spike(u, w, g)
    exact, forcing = _variation_masses(spec, g.L, n)
    fr = FrozenCoefficients(spec, base, u, exact)
    M, L = W.M, g.L
    Z = np.zeros((1, M, L + g.N + 1, spec.d_state))
    active = spike_mask(w, g)
    for i in range(g.N):
        coeffs = fr.first(i)
        fd, gd = second_forcing(fr, i, y, ue if active[i] else None, forcing)
        _linear_step(Z, i, L, g.dt, W.dW[:, i], coeffs, forcing["b"], forcing["sigma"], fd[None], gd[None])
        _check(Z[:, :, L + i + 1], i, "second variation")
    label = "z" if n is None else f"z_n{n}"
    return TrajectoryBundle(Z[0], g, label, _provenance(spec, u, W, label, n), control=u)


def simulate_regularized_variations(
    spec: ProblemSpec,
    n: int,
    base: TrajectoryBundle,
    u: ControlPath | None,
    w: SpikeWindow | Iterable[SpikeWindow],
    W: BrownianBundle,
) -> tuple[TrajectoryBundle, TrajectoryBundle]:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("mollification index n must be a positive integer")
    y = simulate_first_variation(spec, base, u, w, W, n=n)
    z = simulate_second_variation(spec, base, y, u, w, W, n=n)
    return y, z


def simulate_linearized_batch(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    s: float,
    H: NDArray,
    W: BrownianBundle,
    *,
    n: int | None = None,
) -> NDArray:
    """Homogeneous linearized flows started at time s from each row of ``H``.

    Returns an array (B, M, L + N + 1, d) that vanishes before s: the initial
    datum is h at s with zero past.
    """
    g = _check_grid(spec, W)
    u = _base_control(base, u, W)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[1] != spec.d_state:
        raise ValueError("initial vectors must have d_state entries")
    i_s = g.index(s)
    exact, forcing = _variation_masses(spec, g.L, n)
    fr = FrozenCoefficients(spec, base, u, exact)
    L = g.L
    Y = np.zeros((H.shape[0], W.M, L + g.N + 1, spec.d_state))
    Y[:, :, L + i_s] = H[:, None, :]
    for i in range(i_s, g.N):
        _linear_step(Y, i, L, g.dt, W.dW[:, i], fr.first(i), forcing["b"], forcing["sigma"])
        _check(Y[:, :, L + i + 1], i, "linearized flow")
    return Y


def simulate_linearized(
    spec: ProblemSpec,
    s: float,
    h,
    u: ControlPath | None,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    n: int | None = None,
) -> TrajectoryBundle:
    Y = simulate_linearized_batch(spec, base, u, s, np.atleast_1d(h)[None], W, n=n)
    label = "linearized"
    u = _base_control(base, u, W)
    prov = {**_provenance(spec, u, W, label, n), "s": float(s)}
    return TrajectoryBundle(Y[0], base.grid, label, prov, control=u)


# ---------------------------------------------------------------------------
# costs and norms


def cost_paths(spec: ProblemSpec, traj: TrajectoryBundle, u: ControlPath | None = None, *, rule: str = "trapezoid") -> NDArray:
    """Pathwise cost: time integral of ell plus terminal h; shape (M,)."""
    u = u if u is not None else traj.control
    if u is None:
        raise ConsistencyError("no control supplied")
    g = traj.grid
    mass = spec_masses(spec, g.L)
    M = traj.M
    if rule == "trapezoid":
        w = np.full(g.N + 1, g.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
    elif rule == "left":
        w = np.full(g.N + 1, g.dt)
        w[-1] = 0.0
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    total = np.zeros(M)
    times = g.times
    for i in range(g.N + 1):
        if w[i] == 0.0:
            continue
        seg = traj.segment(i)
        val = spec.ell.f(times[i], seg[:, -1], past_integrals(seg, mass["ell"]), control_at(u, i, M))
        total += w[i] * np.broadcast_to(np.asarray(val, dtype=float), (M,))
    segT = traj.segment(g.N)
    hv = spec.h.f(g.T, segT[:, -1], past_integrals(segT, mass["h"]), control_at(u, g.N, M))
    return total + np.broadcast_to(np.asarray(hv, dtype=float), (M,))


def cost(spec: ProblemSpec, traj: TrajectoryBundle, u: ControlPath | None = None, *, rule: str = "trapezoid") -> tuple[float, float]:
    """Monte Carlo cost estimate and its standard error."""
    c = cost_paths(spec, traj, u, rule=rule)
    se = float(c.std(ddof=1) / np.sqrt(len(c))) if len(c) > 1 else 0.0
    return float(c.mean()), se


def sup_sq(values: NDArray, grid: TimeGrid) -> NDArray:
    """Pathwise sup over [0, T] of |v(t)|^2 for values on the full grid; shape (M,)."""
    v = values[..., grid.L :, :]
    return np.max(np.sum(v * v, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# export

_MAGIC = b"TRJB"
_HEADER = struct.Struct("<4sIIIIdd")


def _header_lines(meta: Mapping) -> str:
    return "".join(f"# {k}={meta[k]}\n" for k in sorted(meta))


def write_csv(traj: TrajectoryBundle, path, meta: Mapping | None = None, *, stride: int = 1) -> None:
    """Long format ``path,t,component,value`` with ``# key=value`` provenance lines."""
    info = {**traj.provenance, **(meta or {})}
    t = traj.times[::stride]
    vals = traj.values[:, ::stride]
    M, nt, d = vals.shape
    p_idx = np.repeat(np.arange(M), nt * d)
    t_col = np.tile(np.repeat(t, d), M)
    c_idx = np.tile(np.arange(d), M * nt)
    with open(path, "w", newline="") as fh:
        fh.write(_header_lines(info))
        fh.write("path,t,component,value\n")
        rows = zip(p_idx.tolist(), t_col.tolist(), c_idx.tolist(), vals.ravel().tolist())
        fh.writelines(f"{p},{tt!r},{c},{v!r}\n" for p, tt, c, v in rows)


def write_binary(traj: TrajectoryBundle, path) -> None:
    """Little-endian dump: magic, version, M, n_times, d, t_first, dt, then row-major float64 values."""
    M, nt, d = traj.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, M, nt, d, float(traj.times[0]), traj.grid.dt))
        fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())


def read_binary(path) -> tuple[NDArray, float, float]:
    """Returns (values (M, n_times, d), t_first, dt)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, M, nt, d, t0, dt = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a trajectory dump")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(M, nt, d)
    return vals.copy(), t0, dt
