"""First-order adjoint as an anticipated backward equation, solved by regression.

The backward recursion is the exact discrete adjoint of the Euler scheme used
for the state.  With ``pbar_k = E_k[p_{k+1}]`` and
``q_k = E_k[(p_{k+1} - pbar_k) dW_k^T] / dt``::

    p_k = pbar_k + dt * (l_x + b_x^T pbar_k + sigma_x : q_k + A_k)

where ``A_k`` collects the past-integral derivatives of every step i whose
delay window contains t_k, weighted by the node mass at ``t_k - t_i``.  Steps
i > k are anticipated and enter through ``E_k``; the step i = k is current.
Conditional expectations are least-squares projections on polynomials of the
state and its past integrals.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from .model import ControlPath, ProblemSpec
from .paths import BrownianBundle, TimeGrid
from .sdde import (
    ConsistencyError,
    FrozenCoefficients,
    SpikeWindow,
    TrajectoryBundle,
    control_at,
    past_integrals,
    second_forcing,
    spec_masses,
    spike,
    spike_mask,
)

__all__ = [
    "RegressionConfig",
    "RegressionConfigError",
    "ConditioningError",
    "Regressor",
    "AdjointSolution",
    "DualityReport",
    "solve_absde",
    "duality_residual_first",
    "duality_residual_second",
    "delayed_pairing",
]


class RegressionConfigError(ValueError):
    """Feature budget exceeds the path budget."""


class ConditioningError(np.linalg.LinAlgError):
    """Regression design too ill-conditioned even after ridge."""


@dataclass(frozen=True)
class RegressionConfig:
    degree: int = 2
    ridge: float = 1e-8
    min_paths_per_feature: int = 50
    use_past: bool = True
    lags: int = 0
    const_tol: float = 1e-14
    max_condition: float = 1e12

    def __post_init__(self) -> None:
        if self.degree < 0 or self.ridge < 0 or self.min_paths_per_feature < 1:
            raise RegressionConfigError("degree and ridge must be non-negative, min_paths_per_feature positive")


def _poly(z: NDArray, degree: int) -> NDArray:
    M, F = z.shape
    cols = [np.ones(M)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(F), deg):
            c = z[:, combo[0]].copy()
            for j in combo[1:]:
                c *= z[:, j]
            cols.append(c)
    return np.column_stack(cols)


class Regressor:
    """Projection onto polynomial features; one factorization, many targets."""

    def __init__(self, raw: NDArray, cfg: RegressionConfig, step: int | None = None):
        raw = np.asarray(raw, dtype=float).reshape(raw.shape[0], -1)
        M = raw.shape[0]
        self.M = M
        sd = raw.std(axis=0) if M > 1 else np.zeros(raw.shape[1])
        keep = sd > np.sqrt(cfg.const_tol) * np.maximum(1.0, np.abs(raw.mean(axis=0)))
        z = (raw[:, keep] - raw[:, keep].mean(axis=0)) / sd[keep] if keep.any() else np.zeros((M, 0))
        A = _poly(z, cfg.degree) if z.shape[1] else np.ones((M, 1))
        self.n_features = A.shape[1]
        if self.n_features > 1 and self.n_features * cfg.min_paths_per_feature > M:
            raise RegressionConfigError(
                f"{self.n_features} features need at least {self.n_features * cfg.min_paths_per_feature} paths, have {M}"
            )
        self.A = A
        self.cfg = cfg
        self.step = step
        if self.n_features == 1:
            self.condition = 1.0
            return
        P = self.n_features
        pen = np.sqrt(cfg.ridge * M) * np.eye(P)[1:]
        Q, R = np.linalg.qr(np.vstack([A, pen]))
        self.condition = float(np.linalg.cond(R))
        if not np.isfinite(self.condition) or self.condition > cfg.max_condition:
            where = "" if step is None else f" at step {step}"
            raise ConditioningError(f"regression design ill-conditioned{where} (condition {self.condition:.3g})")
        self._Q = Q[:M]
        self._R = R

    def project(self, Y: NDArray) -> tuple[NDArray, float]:
        """Conditional expectation estimate of each target column and the relative residual."""
        Y = np.asarray(Y, dtype=float)
        shape = Y.shape
        Y2 = Y.reshape(shape[0], -1)
        mean = Y2.mean(axis=0)
        out = np.empty_like(Y2)
        var = Y2.var(axis=0)
        const = var <= self.cfg.const_tol * np.maximum(1.0, mean**2)
        out[:, const] = Y2[:, const]
        live = ~const
        if live.any():
            if self.n_features == 1:
                out[:, live] = mean[live]
            else:
                beta = np.linalg.solve(self._R, self._Q.T @ Y2[:, live])
                out[:, live] = self.A @ beta
        # constant targets pass through unchanged so exact cases stay exact
        resid = Y2 - out
        denom = float(np.sqrt(np.mean(Y2**2))) or 1.0
        return out.reshape(shape), float(np.sqrt(np.mean(resid**2))) / denom


def _unique_masses(mass: Mapping[str, NDArray], L: int) -> NDArray:
    rows = [m for key in ("b", "sigma", "ell") for m in mass[key]]
    if not rows:
        return np.zeros((0, L + 1))
    R = np.unique(np.round(np.vstack(rows), 14), axis=0)
    return R[np.any(R != 0, axis=1)]


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """Adjoint pair on [0, T + d], zero on the overhang.

    ``p`` (M, N + L + 1, d), ``q`` (M, N + L + 1, d, m), ``p_bar`` (M, N, d)
    with ``p_bar[:, k] = E_k[p_{k+1}]``.
    """

    p: NDArray
    q: NDArray
    p_bar: NDArray
    grid: TimeGrid
    control: ControlPath
    provenance: Mapping
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> NDArray:
        return self.grid.extended_times

    def diagnostics_json(self) -> dict:
        d = self.diagnostics
        return {
            "step": list(range(self.grid.N)),
            "residual": [float(v) for v in d["residual"]],
            "condition": [float(v) for v in d["condition"]],
            "features": [int(v) for v in d["features"]],
        }


def solve_absde(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    W: BrownianBundle,
    cfg: RegressionConfig | None = None,
) -> AdjointSolution:
    """Backward recursion for (p, q) with terminal value h_x(x(T))."""
    cfg = cfg or RegressionConfig()
    if any(not mu.is_zero for mu in spec.mu_h):
        raise ConsistencyError("the general-measure adjoint needs a terminal cost free of the past")
    g = W.grid
    if base.grid != g or base.M != W.M:
        raise ConsistencyError("base trajectory and Brownian bundle disagree")
    if u is None:
        u = base.control
    if u is None or (base.control is not None and base.control.digest() != u.digest()):
        raise ConsistencyError("control does not match the base trajectory")
    M, N, L, d, m = W.M, g.N, g.L, spec.d_state, spec.m_noise
    dt = g.dt
    mass = spec_masses(spec, L)
    fr = FrozenCoefficients(spec, base, u, mass)
    feat_mass = _unique_masses(mass, L) if cfg.use_past else np.zeros((0, L + 1))
    if cfg.lags and L:
        nodes = np.unique(np.round(np.linspace(0, L, cfg.lags + 2)[:-1]).astype(int))
        lag_rows = np.zeros((len(nodes), L + 1))
        lag_rows[np.arange(len(nodes)), nodes] = 1.0
        feat_mass = np.unique(np.vstack([feat_mass.reshape(-1, L + 1), lag_rows]), axis=0)

    # all anticipated contributions, one row per measure: b blocks, sigma blocks, ell blocks
    nb, ns, nl = len(mass["b"]), len(mass["sigma"]), len(mass["ell"])
    all_mass = np.vstack([mass["b"], mass["sigma"], mass["ell"]]) if nb + ns + nl else np.zeros((0, L + 1))
    ntot = all_mass.shape[0]
    C = np.zeros((M, N, ntot, d))

    p = np.zeros((M, N + L + 1, d))
    q = np.zeros((M, N + L + 1, d, m))
    p_bar = np.zeros((M, N, d))
    resid = np.zeros(N)
    cond = np.ones(N)
    nfeat = np.ones(N, dtype=int)

    tT, xT, IhT, uT = fr.terminal()
    p[:, N] = np.broadcast_to(spec.h.dx(tT, xT, IhT, uT), (M, d))

    for k in range(N - 1, -1, -1):
        seg = base.segment(k)
        feats = np.concatenate([seg[:, -1], past_integrals(seg, feat_mass)], axis=1)
        reg = Regressor(feats, cfg, step=k)
        # anticipated window: steps i = k+1 .. min(k+L, N-1), node j = k - i + L
        hi = min(k + L, N - 1)
        if ntot and hi > k:
            wts = all_mass[:, L - 1 - (hi - k - 1) : L][:, ::-1].T  # (J, ntot), row r <-> i = k+1+r
            A_fut = np.einsum("Mjnd,jn->Md", C[:, k + 1 : hi + 1], wts)
        else:
            A_fut = np.zeros((M, d))
        proj, r1 = reg.project(np.concatenate([p[:, k + 1], A_fut], axis=1))
        pb, Ab = proj[:, :d], proj[:, d:]
        dWk = W.dW[:, k]
        qk, r2 = reg.project(np.einsum("Ma,Ml->Mal", p[:, k + 1] - pb, dWk) / dt)
        bx, by, sx, sy = fr.first(k)
        lx, ly = fr.cost_first(k)
        # current-step anticipated contributions
        blocks = []
        if nb:
            blocks.append(np.einsum("Mak,Ma->Mk", by, pb).reshape(M, nb, d))
        if ns:
            blocks.append(np.einsum("Malk,Mal->Mk", sy, qk).reshape(M, ns, d))
        if nl:
            blocks.append(np.asarray(ly).reshape(M, nl, d))
        if ntot:
            C[:, k] = np.concatenate(blocks, axis=1)
            A_cur = np.einsum("Mnd,n->Md", C[:, k], all_mass[:, L])
        else:
            A_cur = 0.0
        drive = lx + np.einsum("Mab,Ma->Mb", bx, pb) + np.einsum("Malb,Mal->Mb", sx, qk) + A_cur + Ab
        p[:, k] = pb + dt * drive
        p_bar[:, k] = pb
        q[:, k] = qk
        resid[k] = max(r1, r2)
        cond[k] = reg.condition
        nfeat[k] = reg.n_features
    prov = {**base.provenance, "label": "adjoint", "control": u.digest()}
    diag = {"residual": resid, "condition": cond, "features": nfeat}
    return AdjointSolution(p, q, p_bar, g, u, prov, diag)


def delayed_pairing(c: NDArray, y: NDArray, masses: NDArray, L: int, *, shifted: bool) -> float:
    """Sum over steps i and nodes j of m_j c_i y_{i-L+j}, computed directly or after the change of time.

    ``c`` has shape (N, d) on [0, T); ``y`` (L + N + 1, d) on [-d, T] and zero on [-d, 0).
    """
    N = c.shape[0]
    w = masses.sum(axis=0) if masses.ndim == 2 else masses
    if not shifted:
        return float(sum(np.dot(c[i], w @ y[i : i + L + 1]) for i in range(N)))
    total = 0.0
    for k in range(N):
        lo, hi = k, min(k + L, N - 1)
        acc = sum(w[k - i + L] * c[i] for i in range(lo, hi + 1))
        total += float(np.dot(y[L + k], acc))
    return total


# ---------------------------------------------------------------------------
# duality residuals


@dataclass
class DualityReport:
    lhs: float
    rhs: float
    residual: float
    std_error: float
    lhs_se: float
    rhs_se: float
    n_paths: int

    @property
    def within(self) -> float:
        """|residual| in units of the combined standard error."""
        return abs(self.residual) / self.std_error if self.std_error > 0 else (0.0 if self.residual == 0 else np.inf)

    def as_dict(self) -> dict:
        return {k: float(v) if isinstance(v, (float, np.floating)) else v for k, v in self.__dict__.items()}


def _report(lhs_paths: NDArray, rhs_paths: NDArray) -> DualityReport:
    M = len(lhs_paths)

    def se(a):
        return float(a.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0

    diff = lhs_paths - rhs_paths
    return DualityReport(
        float(lhs_paths.mean()), float(rhs_paths.mean()), float(diff.mean()), se(diff), se(lhs_paths), se(rhs_paths), M
    )


def _check_provenance(adj: AdjointSolution, *trajs: TrajectoryBundle) -> None:
    for t in trajs:
        if t.grid != adj.grid:
            raise ConsistencyError(f"{t.label} lives on a different grid than the adjoint")
        for key in ("seed", "spec", "M"):
            if t.provenance.get(key) != adj.provenance.get(key):
                raise ConsistencyError(f"{t.label} and the adjoint disagree on {key}")
        if t.provenance.get("control") != adj.control.digest():
            raise ConsistencyError(f"{t.label} was built around a different control")


def _ell_pairing(fr: FrozenCoefficients, k: int, v: TrajectoryBundle) -> NDArray:
    lx, ly = fr.cost_first(k)
    seg = v.segment(k)
    out = np.einsum("Ma,Ma->M", lx, seg[:, -1])
    Iv = past_integrals(seg, fr.mass["ell"])
    if Iv.shape[1]:
        out += np.einsum("Mk,Mk->M", ly, Iv)
    return out


def duality_residual_first(
    spec: ProblemSpec,
    y: TrajectoryBundle,
    adj: AdjointSolution,
    w: SpikeWindow,
    base: TrajectoryBundle,
) -> DualityReport:
    """E h_x y(T) against E sum dt [q . dsigma 1_E - l_x y - l_y (past integral of y)].

    The running-cost terms enter with a minus sign because the adjoint is
    driven by +l_x.
    """
    _check_provenance(adj, y, base)
    g = adj.grid
    u = adj.control
    mass = spec_masses(spec, g.L)
    fr = FrozenCoefficients(spec, base, u, mass)
    ue = spike(u, w, g)
    active = spike_mask(w, g)
    M = y.M
    tT, xT, IhT, uT = fr.terminal()
    lhs = np.einsum("Ma,Ma->M", np.broadcast_to(spec.h.dx(tT, xT, IhT, uT), (M, spec.d_state)), y.at(g.N))
    rhs = np.zeros(M)
    for k in range(g.N):
        rhs -= g.dt * _ell_pairing(fr, k, y)
        if active[k]:
            t, x, _, Is, _, uk = fr.args(k)
            dsig = spec.sigma.f(t, x, Is, control_at(ue, k, M)) - spec.sigma.f(t, x, Is, uk)
            rhs += g.dt * np.einsum("Mal,Mal->M", adj.q[:, k], dsig)
    return _report(lhs, rhs)


def duality_residual_second(
    spec: ProblemSpec,
    y: TrajectoryBundle,
    z: TrajectoryBundle,
    adj: AdjointSolution,
    w: SpikeWindow,
    base: TrajectoryBundle,
) -> DualityReport:
    """E h_x z(T) against the second-variation forcings paired with (pbar, q), minus the l_x z terms."""
    _check_provenance(adj, y, z, base)
    g = adj.grid
    u = adj.control
    mass = spec_masses(spec, g.L)
    fr = FrozenCoefficients(spec, base, u, mass)
    ue = spike(u, w, g)
    active = spike_mask(w, g)
    M = z.M
    tT, xT, IhT, uT = fr.terminal()
    lhs = np.einsum("Ma,Ma->M", np.broadcast_to(spec.h.dx(tT, xT, IhT, uT), (M, spec.d_state)), z.at(g.N))
    rhs = np.zeros(M)
    for k in range(g.N):
        fd, gd = second_forcing(fr, k, y, ue if active[k] else None, mass)
        rhs += g.dt * (
            np.einsum("Ma,Ma->M", adj.p_bar[:, k], fd)
            + np.einsum("Mal,Mal->M", adj.q[:, k], gd)
            - _ell_pairing(fr, k, z)
        )
    return _report(lhs, rhs)
