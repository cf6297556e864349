"""Hamiltonian, second-order kernel representation, and the maximum-principle checks.

Sign conventions.  The first adjoint ``p`` of ``solve_absde`` has terminal
value +h_x.  The Hamiltonian used by the checks is

    H(t, v) = b(v) . p0 + sum_l sigma_l(v) . q0_l - ell(v),   p0 = -pbar, q0 = -q,

and the kernel in the variational inequality is the operator-adjoint block,
whose terminal value is -h_xx.  The representation here returns the curvature
(terminal value +h_xx), the negative of that block.  For an optimal control

    Delta(t, v) = H(t, v) - H(t, u(t)) + 1/2 sum_l dsigma_l^T P dsigma_l <= 0

for every v, and the cost expansion reads
J(u) - J(u^eps) = E sum over the window of dt * Delta + o(eps).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .absde import AdjointSolution, Regressor, RegressionConfig, _unique_masses, duality_residual_first, duality_residual_second
from .hilbert import _collapse, _reduced
from .kernel import CoverageError, SecondOrderKernel
from .model import ControlPath, ProblemSpec
from .paths import BrownianBundle
from .sdde import (
    ConsistencyError,
    FrozenCoefficients,
    SpikeWindow,
    TrajectoryBundle,
    control_at,
    cost_paths,
    past_integrals,
    simulate_first_variation,
    simulate_linearized_batch,
    simulate_second_variation,
    simulate_state,
    spec_masses,
    spike,
    spike_mask,
)

__all__ = [
    "SecondOrderKernel",
    "SMPReport",
    "ExpansionReport",
    "ConvergenceReport",
    "hamiltonian",
    "representation_values",
    "p00_quadratic_form",
    "p00_matrix",
    "p00_kernel",
    "check_variational_inequality",
    "cost_expansion_check",
    "p00_convergence_study",
    "fit_slope",
]


def _past_tuple(past) -> tuple[NDArray, NDArray, NDArray]:
    if isinstance(past, Mapping):
        return past.get("b"), past.get("sigma"), past.get("ell")
    return tuple(past)


def hamiltonian(spec: ProblemSpec, t: float, x, past, u, p0, q0) -> NDArray:
    """b . p0 + sum_l sigma_l . q0_l - ell, evaluated per row; shape (M,).

    ``past`` is a mapping with keys "b", "sigma", "ell" (or a tuple in that
    order) holding past integrals of the state against each coefficient's measures.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    M = x.shape[0]
    Ib, Is, Il = (np.zeros((M, 0)) if a is None else np.atleast_2d(np.asarray(a, dtype=float)) for a in _past_tuple(past))
    u = np.broadcast_to(np.atleast_2d(np.asarray(u, dtype=float)), (M, spec.k_control))
    p0 = np.broadcast_to(np.atleast_2d(np.asarray(p0, dtype=float)), (M, spec.d_state))
    q0 = np.broadcast_to(np.asarray(q0, dtype=float).reshape(-1, spec.d_state, spec.m_noise), (M, spec.d_state, spec.m_noise))
    b = np.asarray(spec.b.f(t, x, Ib, u), dtype=float)
    s = np.asarray(spec.sigma.f(t, x, Is, u), dtype=float)
    ell = np.broadcast_to(np.asarray(spec.ell.f(t, x, Il, u), dtype=float), (M,))
    return np.einsum("Ma,Ma->M", b, p0) + np.einsum("Mal,Mal->M", s, q0) - ell


# ---------------------------------------------------------------------------
# representation of the second-order kernel


def _check_adjoint(adj: AdjointSolution, base: TrajectoryBundle, W: BrownianBundle) -> None:
    if adj.grid != W.grid or base.grid != W.grid:
        raise ConsistencyError("adjoint, base and bundle live on different grids")
    if adj.provenance.get("seed") != W.seed or adj.provenance.get("M") != W.M:
        raise ConsistencyError("adjoint was solved on a different Brownian bundle")
    if base.provenance.get("seed") != W.seed:
        raise ConsistencyError("base trajectory was simulated on a different Brownian bundle")


def representation_values(
    spec: ProblemSpec,
    s: float,
    H: NDArray,
    adj: AdjointSolution,
    base: TrajectoryBundle,
    W: BrownianBundle,
    *,
    n: int | None = None,
    cache: dict | None = None,
) -> NDArray:
    """Pathwise bilinear values (M, B, B) of the curvature along flows started at s from the rows of H.

    Each entry is h_xx[Y_a(T), Y_b(T)] plus the left-point time sum of the
    Hamiltonian Hessian (running cost, drift weighted by pbar, noise weighted
    by q) applied to the flows and their past integrals.
    """
    _check_adjoint(adj, base, W)
    g = W.grid
    u = adj.control
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Y = simulate_linearized_batch(spec, base, u, s, H, W, n=n)
    exact = spec_masses(spec, g.L)
    forc = exact if n is None else spec_masses(spec, g.L, n)
    fr = FrozenCoefficients(spec, base, u, exact)
    i_s = g.index(s)
    L = g.L
    # terminal curvature, including past integrals against mu_h
    tT, xT, IhT, uT = fr.terminal()
    segT = Y[:, :, g.N : g.N + L + 1]
    YT = segT[:, :, -1]
    V = np.einsum("BMa,Mab,CMb->MBC", YT, spec.h.dxx(tT, xT, IhT, uT), YT)
    if IhT.shape[1]:
        IY = past_integrals(segT, forc["h"])
        cross = np.einsum("BMa,Mak,CMk->MBC", YT, spec.h.dxy(tT, xT, IhT, uT), IY)
        V += cross + np.swapaxes(cross, 1, 2)
        V += np.einsum("BMk,Mkj,CMj->MBC", IY, spec.h.dyy(tT, xT, IhT, uT), IY)
    for i in range(i_s, g.N):
        K = None if cache is None else cache.get(i)
        if K is None:
            K = _hessian_block(spec, fr, adj, i)
            room = 2e7 if cache is None else cache.get("room", 2e7)
            if cache is not None and (K.shape[0] == 1 or room >= K.size):
                cache[i] = K
                cache["room"] = room - (K.size if K.shape[0] > 1 else 0)
        seg = Y[:, :, i : i + L + 1]
        R = np.concatenate(
            [seg[:, :, -1], past_integrals(seg, forc["b"]), past_integrals(seg, forc["sigma"]), past_integrals(seg, forc["ell"])],
            axis=-1,
        )
        V += g.dt * np.einsum("BMr,Mrs,CMs->MBC", R, np.broadcast_to(K, (R.shape[1], *K.shape[1:])), R)
    return 0.5 * (V + np.swapaxes(V, 1, 2))


def _hessian_block(spec: ProblemSpec, fr: FrozenCoefficients, adj: AdjointSolution, i: int) -> NDArray:
    """Hessian of the cost-weighted Hamiltonian in reduced coordinates at step i; (M or 1, nr, nr)."""
    red = _reduced(spec, fr, i)
    K = np.einsum("Ma,Mars->Mrs", adj.p_bar[:, i], red["hb"])
    K = K + np.einsum("Mal,Mlars->Mrs", adj.q[:, i], red["hs"]) + red["hl"]
    return _collapse(K)


def _condition(
    spec: ProblemSpec, V: NDArray, base: TrajectoryBundle, i_s: int, cfg: RegressionConfig | None
) -> NDArray:
    """E[V | F_s] by regression on the state and its past integrals at s; (Mp, B, B)."""
    M = V.shape[0]
    flat = V.reshape(M, -1)
    if i_s == 0 or np.all(np.ptp(flat, axis=0) <= 1e-14 * np.maximum(1.0, np.abs(flat).max(axis=0))):
        return V.mean(axis=0, keepdims=True) if i_s == 0 else V[:1]
    seg = base.segment(i_s)
    fm = _unique_masses(spec_masses(spec, base.grid.L), base.grid.L)
    feats = np.concatenate([seg[:, -1], past_integrals(seg, fm)], axis=1)
    reg = Regressor(feats, cfg or RegressionConfig())
    if reg.n_features == 1:
        return V.mean(axis=0, keepdims=True)
    return reg.project(flat)[0].reshape(V.shape)


def p00_quadratic_form(
    spec: ProblemSpec,
    s: float,
    h,
    adj: AdjointSolution,
    u: ControlPath | None,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    n: int | None = None,
) -> tuple[float, float]:
    """<P00(s) h, h> in the curvature convention, with its Monte Carlo standard error."""
    if u is not None and u.digest() != adj.control.digest():
        raise ConsistencyError("control differs from the one the adjoint was solved for")
    V = representation_values(spec, s, np.atleast_1d(np.asarray(h, dtype=float))[None], adj, base, W, n=n)[:, 0, 0]
    M = len(V)
    return float(V.mean()), float(V.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0


def p00_kernel(
    spec: ProblemSpec,
    times: Iterable[float],
    adj: AdjointSolution,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    n: int | None = None,
    cfg: RegressionConfig | None = None,
) -> SecondOrderKernel:
    """Representation kernel at several times; d flows per time on the shared bundle."""
    g = W.grid
    ts = np.array(sorted({float(t) for t in times}))
    d = spec.d_state
    mats, ses, pw = [], [], []
    cache: dict = {}
    for t in ts:
        V = representation_values(spec, t, np.eye(d), adj, base, W, n=n, cache=cache)
        M = V.shape[0]
        mats.append(V.mean(axis=0))
        ses.append(V.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros((d, d)))
        pw.append(_condition(spec, V, base, g.index(t), cfg))
    Mp = max(p.shape[0] for p in pw)
    pw = np.stack([np.broadcast_to(p, (Mp, d, d)) for p in pw])
    method = "representation" if n is None else f"mollified-{n}"
    return SecondOrderKernel(ts, np.stack(mats), np.stack(ses), method, pathwise=pw, meta={"M": W.M, "seed": W.seed})


def p00_matrix(
    spec: ProblemSpec,
    s: float,
    adj: AdjointSolution,
    u: ControlPath | None,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    n: int | None = None,
) -> SecondOrderKernel:
    if u is not None and u.digest() != adj.control.digest():
        raise ConsistencyError("control differs from the one the adjoint was solved for")
    return p00_kernel(spec, [s], adj, W, base, n=n)


# ---------------------------------------------------------------------------
# variational inequality


@dataclass
class SMPReport:
    scenario: str
    times: NDArray
    controls: NDArray
    delta: NDArray
    delta_se: NDArray
    gap: NDArray
    gap_se: NDArray
    best: list
    ties: list
    violations: list
    worst_gap: float
    worst_gap_se: float
    tolerance: float
    k_se: float
    allowed_fraction: float
    verdict: bool
    grid: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def violation_fraction(self) -> float:
        return len(self.violations) / max(1, len(self.times))

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "grid": self.grid,
            "seed": self.seed,
            "worst_gap": float(self.worst_gap),
            "gap_stderr": float(self.worst_gap_se),
            "tolerance": self.tolerance,
            "k_se": self.k_se,
            "allowed_fraction": self.allowed_fraction,
            "violation_fraction": self.violation_fraction,
            "violations": self.violations,
            "verdict": "pass" if self.verdict else "fail",
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv_rows(self) -> list[tuple]:
        rows = []
        for a, t in enumerate(self.times):
            for b, v in enumerate(self.controls):
                rows.append((float(t), ";".join(repr(float(c)) for c in v), float(self.delta[a, b]), float(self.delta_se[a, b])))
        return rows


def _delta_paths(
    spec: ProblemSpec,
    fr: FrozenCoefficients,
    i: int,
    adj: AdjointSolution,
    P: NDArray | None,
    U: NDArray,
) -> NDArray:
    """Delta(t_i, v) per path for every v in U; shape (M, nU).  ``P`` (Mp, d, d) in the operator convention."""
    t, x, Ib, Is, Il, ui = fr.args(i)
    M = x.shape[0]
    p0 = -adj.p_bar[:, i]
    q0 = -adj.q[:, i]
    b_u = spec.b.f(t, x, Ib, ui)
    s_u = spec.sigma.f(t, x, Is, ui)
    l_u = np.broadcast_to(np.asarray(spec.ell.f(t, x, Il, ui), dtype=float), (M,))
    out = np.empty((M, len(U)))
    for k, v in enumerate(U):
        vv = np.broadcast_to(v, (M, len(v)))
        db = spec.b.f(t, x, Ib, vv) - b_u
        ds = spec.sigma.f(t, x, Is, vv) - s_u
        dl = np.broadcast_to(np.asarray(spec.ell.f(t, x, Il, vv), dtype=float), (M,)) - l_u
        val = np.einsum("Ma,Ma->M", db, p0) + np.einsum("Mal,Mal->M", ds, q0) - dl
        if P is not None:
            val = val + 0.5 * np.einsum("Mal,Mab,Mbl->M", ds, np.broadcast_to(P, (M, *P.shape[1:])), ds)
        out[:, k] = val
    return out


def check_variational_inequality(
    spec: ProblemSpec,
    u: ControlPath | None,
    adj: AdjointSolution,
    P00: SecondOrderKernel | None,
    base: TrajectoryBundle,
    *,
    tol: float = 1e-3,
    k_se: float = 3.0,
    allowed_fraction: float | None = None,
    aggregation: str = "pathwise",
) -> SMPReport:
    """Evaluate Delta(t, v) on the grid and decide whether u satisfies the maximum principle.

    ``aggregation="pathwise"`` takes the worst v per path and averages over
    paths; ``"mean"`` averages Delta over paths first.  A time violates when
    its gap exceeds ``tol + k_se * stderr``; the verdict passes when at most
    ``allowed_fraction`` (default 2 / N) of the times violate.  ``P00=None``
    drops the second-order term (only sound when the noise is control-free).
    """
    g = adj.grid
    u = adj.control if u is None else u
    if u.digest() != adj.control.digest():
        raise ConsistencyError("control differs from the one the adjoint was solved for")
    if aggregation not in ("pathwise", "mean"):
        raise ValueError("aggregation must be 'pathwise' or 'mean'")
    kern = None
    if P00 is not None:
        kern = P00.as_bsde()
        if not kern.covers(g.T - g.dt):
            raise CoverageError("kernel times must cover the whole horizon")
    U = spec.control_set
    mass = spec_masses(spec, g.L)
    fr = FrozenCoefficients(spec, base, u, mass)
    N = g.N
    delta = np.zeros((N, len(U)))
    delta_se = np.zeros((N, len(U)))
    gap = np.zeros(N)
    gap_se = np.zeros(N)
    best, ties, violations = [], [], []
    sqrtM = np.sqrt(base.M)
    for i in range(N):
        t = g.times[i]
        P = None if kern is None else kern.at(min(t, kern.times.max()))
        D = _delta_paths(spec, fr, i, adj, P, U)
        delta[i] = D.mean(axis=0)
        delta_se[i] = D.std(axis=0, ddof=1) / sqrtM if base.M > 1 else 0.0
        if aggregation == "pathwise":
            G = D.max(axis=1)
            gap[i] = G.mean()
            gap_se[i] = G.std(ddof=1) / sqrtM if base.M > 1 else 0.0
            k_best = int(np.argmax(delta[i]))
        else:
            k_best = int(np.argmax(delta[i]))
            gap[i] = delta[i, k_best]
            gap_se[i] = delta_se[i, k_best]
        # best competitor: first occurrence in the user order
        best.append(U[k_best].tolist())
        top = np.flatnonzero(np.abs(delta[i] - delta[i, k_best]) <= 1e-12)
        if len(top) > 1:
            ties.append({"t": float(t), "controls": [U[j].tolist() for j in top]})
        if gap[i] > tol + k_se * gap_se[i]:
            violations.append({"t": float(t), "v": U[k_best].tolist(), "gap": float(gap[i]), "stderr": float(gap_se[i])})
    frac = 2.0 / N if allowed_fraction is None else allowed_fraction
    worst = int(np.argmax(gap)) if N else 0
    verdict = len(violations) <= frac * N + 1e-12
    return SMPReport(
        scenario=spec.name,
        times=g.times[:N],
        controls=U,
        delta=delta,
        delta_se=delta_se,
        gap=gap,
        gap_se=gap_se,
        best=best,
        ties=ties,
        violations=violations,
        worst_gap=float(gap[worst]),
        worst_gap_se=float(gap_se[worst]),
        tolerance=tol,
        k_se=k_se,
        allowed_fraction=frac,
        verdict=bool(verdict),
        grid=g.as_dict(),
        seed=adj.provenance.get("seed"),
    )


# ---------------------------------------------------------------------------
# cost expansion


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log2 |y| against log2 x; nan when some |y| is zero."""
    y = np.abs(np.asarray(y, dtype=float))
    if len(y) < 2 or np.any(y == 0.0):
        return float("nan")
    lx = np.log2(np.asarray(x, dtype=float))
    ly = np.log2(y)
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass
class ExpansionReport:
    eps: NDArray
    lhs: NDArray
    lhs_se: NDArray
    rhs: NDArray
    rhs_first: NDArray
    remainder: NDArray
    remainder_se: NDArray
    remainder_first: NDArray
    remainder_first_se: NDArray
    raw_remainder: NDArray
    raw_remainder_se: NDArray
    slope: float
    slope_first: float
    control_variates: bool

    @property
    def scaled(self) -> NDArray:
        """(LHS - RHS) / eps."""
        return self.remainder / self.eps

    def to_json(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def _nested(spikes: Sequence[SpikeWindow]) -> None:
    for a, b in zip(spikes, spikes[1:]):
        if b.start < a.start - 1e-12 or b.start + b.width > a.start + a.width + 1e-12:
            raise ValueError("spike ladder must be nested: each window inside the previous one")
        if not np.allclose(np.atleast_1d(a.v), np.atleast_1d(b.v)):
            raise ValueError("spike ladder must use one replacement value")


def _window_cvs(W: BrownianBundle, mask: NDArray, x0: NDArray) -> NDArray:
    """Zero-mean Brownian features of the window: dW_E, dW_E dW_E^T - eps I, each times (1, x(t0))."""
    dWE = W.dW[:, mask].sum(axis=1)  # (M, m)
    eps = mask.sum() * W.grid.dt
    m = dWE.shape[1]
    quad = [dWE[:, a] * dWE[:, b] - (eps if a == b else 0.0) for a in range(m) for b in range(a, m)]
    base = [dWE[:, a] for a in range(m)] + quad
    cols = list(base)
    for j in range(x0.shape[1]):
        xc = x0[:, j] - x0[:, j].mean()
        cols += [c * xc for c in base]
    return np.column_stack(cols)


def cost_expansion_check(
    spec: ProblemSpec,
    u: ControlPath | None,
    spikes: Sequence[SpikeWindow],
    adj: AdjointSolution,
    P00: SecondOrderKernel,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    control_variates: bool = True,
) -> ExpansionReport:
    """Compare J(u) - J(u^eps) with the first- and second-order expansion on a nested eps ladder.

    The window cell starting at t_i injects its noise jump into the state at
    t_{i+1}, so the kernel is read at t_i + dt.  With ``control_variates`` the
    pathwise duality residuals (zero mean) and Brownian window features are
    added to the cost difference, which leaves the mean unchanged and removes
    the O(sqrt(eps)) noise; the raw estimate is reported alongside.
    """
    g = adj.grid
    u = adj.control if u is None else u
    if u.digest() != adj.control.digest():
        raise ConsistencyError("control differs from the one the adjoint was solved for")
    _check_adjoint(adj, base, W)
    spikes = list(spikes)
    _nested(spikes)
    kern = P00.as_bsde()
    mass = spec_masses(spec, g.L)
    fr = FrozenCoefficients(spec, base, u, mass)
    c_base = cost_paths(spec, base, u, rule="left")
    M = W.M
    sq = np.sqrt(M)
    rows = {k: [] for k in ("eps", "lhs", "lhs_se", "rhs", "rhs1", "rem", "rem_se", "rem1", "rem1_se", "raw", "raw_se")}
    for w in spikes:
        mask = spike_mask(w, g)
        eps = mask.sum() * g.dt
        ue = spike(u, w, g)
        xe = simulate_state(spec, ue, W, label="spiked")
        lhs = c_base - cost_paths(spec, xe, ue, rule="left")
        rhs = np.zeros(M)
        rhs1 = np.zeros(M)
        U1 = np.atleast_2d(np.asarray(w.value(spec.k_control)))
        for i in np.flatnonzero(mask):
            t_next = min(g.times[i + 1], kern.times.max())
            P = kern.at(t_next)
            d2 = _delta_paths(spec, fr, i, adj, P, U1)[:, 0]
            d1 = _delta_paths(spec, fr, i, adj, None, U1)[:, 0]
            rhs += g.dt * d2
            rhs1 += g.dt * d1
        corr = np.zeros(M)
        if control_variates:
            y = simulate_first_variation(spec, base, u, w, W)
            z = simulate_second_variation(spec, base, y, u, w, W)
            corr = _duality_paths(spec, y, z, adj, w, base, fr)
        rem = lhs + corr - rhs
        rem1 = lhs + corr - rhs1
        if control_variates:
            i0 = int(np.flatnonzero(mask)[0])
            Z = _window_cvs(W, mask, base.at(i0))
            Zc = Z - Z.mean(axis=0)
            beta, *_ = np.linalg.lstsq(Zc, rem - rem.mean(), rcond=None)
            beta1, *_ = np.linalg.lstsq(Zc, rem1 - rem1.mean(), rcond=None)
            rem = rem - Z @ beta
            rem1 = rem1 - Z @ beta1
        rows["eps"].append(eps)
        rows["lhs"].append(lhs.mean())
        rows["lhs_se"].append(lhs.std(ddof=1) / sq)
        rows["rhs"].append(rhs.mean())
        rows["rhs1"].append(rhs1.mean())
        rows["rem"].append(rem.mean())
        rows["rem_se"].append(rem.std(ddof=1) / sq)
        rows["rem1"].append(rem1.mean())
        rows["rem1_se"].append(rem1.std(ddof=1) / sq)
        raw = lhs - rhs
        rows["raw"].append(raw.mean())
        rows["raw_se"].append(raw.std(ddof=1) / sq)
    A = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    return ExpansionReport(
        eps=A["eps"],
        lhs=A["lhs"],
        lhs_se=A["lhs_se"],
        rhs=A["rhs"],
        rhs_first=A["rhs1"],
        remainder=A["rem"],
        remainder_se=A["rem_se"],
        remainder_first=A["rem1"],
        remainder_first_se=A["rem1_se"],
        raw_remainder=A["raw"],
        raw_remainder_se=A["raw_se"],
        slope=fit_slope(A["eps"], A["rem"]),
        slope_first=fit_slope(A["eps"], A["rem1"]),
        control_variates=control_variates,
    )


def _duality_paths(spec, y, z, adj, w, base, fr) -> NDArray:
    """Pathwise first plus second duality residuals (each has zero mean)."""
    from .absde import _ell_pairing
    from .sdde import second_forcing

    g = adj.grid
    u = adj.control
    ue = spike(u, w, g)
    active = spike_mask(w, g)
    M = y.M
    tT, xT, IhT, uT = fr.terminal()
    hx = np.broadcast_to(spec.h.dx(tT, xT, IhT, uT), (M, spec.d_state))
    out = np.einsum("Ma,Ma->M", hx, y.at(g.N) + z.at(g.N))
    for k in range(g.N):
        fd, gd = second_forcing(fr, k, y, ue if active[k] else None, fr.mass)
        if active[k]:
            t, x, _, Is, _, uk = fr.args(k)
            gd = gd + spec.sigma.f(t, x, Is, control_at(ue, k, M)) - spec.sigma.f(t, x, Is, uk)
        out -= g.dt * (
            np.einsum("Ma,Ma->M", adj.p_bar[:, k], fd)
            + np.einsum("Mal,Mal->M", adj.q[:, k], gd)
            - _ell_pairing(fr, k, y)
            - _ell_pairing(fr, k, z)
        )
    return out


# ---------------------------------------------------------------------------
# mollification study


@dataclass
class ConvergenceReport:
    s: float
    h: NDArray
    exact: float
    exact_se: float
    n_list: list
    values: NDArray
    value_se: NDArray
    errors: NDArray
    error_se: NDArray
    decreasing: bool

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def p00_convergence_study(
    spec: ProblemSpec,
    s: float,
    n_list: Sequence[int],
    adj: AdjointSolution,
    u: ControlPath | None,
    W: BrownianBundle,
    base: TrajectoryBundle,
    *,
    h=None,
) -> ConvergenceReport:
    """Mollified-measure representation values against the exact-measure one, on one bundle."""
    if u is not None and u.digest() != adj.control.digest():
        raise ConsistencyError("control differs from the one the adjoint was solved for")
    h = np.ones(spec.d_state) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    V0 = representation_values(spec, s, h[None], adj, base, W)[:, 0, 0]
    M = len(V0)
    sq = np.sqrt(M)
    vals, vse, errs, ese = [], [], [], []
    for n in n_list:
        Vn = representation_values(spec, s, h[None], adj, base, W, n=int(n))[:, 0, 0]
        vals.append(Vn.mean())
        vse.append(Vn.std(ddof=1) / sq if M > 1 else 0.0)
        diff = Vn - V0
        errs.append(abs(diff.mean()))
        ese.append(diff.std(ddof=1) / sq if M > 1 else 0.0)
    errs = np.asarray(errs)
    return ConvergenceReport(
        s=float(s),
        h=h,
        exact=float(V0.mean()),
        exact_se=float(V0.std(ddof=1) / sq) if M > 1 else 0.0,
        n_list=[int(n) for n in n_list],
        values=np.asarray(vals),
        value_se=np.asarray(vse),
        errors=errs,
        error_se=np.asarray(ese),
        decreasing=bool(np.all(np.diff(errs) < 0)),
    )
