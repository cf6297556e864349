"""Grid version of the product space R^d (+) L^2([-d, 0]) and its adjoint equations.

A point is a head (present value, d entries) and a tail sampled at the L + 1
theta-nodes.  Flat vectors have length D = d (L + 2), head first.  The inner
product weights the head by 1 and the tail by trapezoid weights, collected in
``hilbert_weights``.  Covectors (first adjoint) and bilinear matrices (second
adjoint, Hessians) carry these weights already, so a pairing is a plain dot
product and weighted adjoints are plain transposes.

Forward step: X_{i+1} = S X_i + G dx_i, where the one-step shift S fills the
nodes within dt of theta = 0 with the head and G injects into the head only.
The node theta = 0 therefore lags the head by one step; past integrals read
the tail including that node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from numpy.typing import NDArray

from .absde import AdjointSolution, Regressor, RegressionConfig, _unique_masses
from .kernel import SecondOrderKernel
from .measures import AlignmentError, trapezoid_weights
from .model import ControlPath, ProblemSpec
from .paths import BrownianBundle, TimeGrid
from .sdde import ConsistencyError, FrozenCoefficients, TrajectoryBundle, past_integrals, spec_masses

__all__ = [
    "PipelineError",
    "NumericalHealthError",
    "HilbertPoint",
    "OperatorBlock",
    "OperatorSet",
    "hilbert_weights",
    "lift",
    "shift_index",
    "shift_matrix",
    "shift_semigroup",
    "shift_adjoint",
    "assemble_operators",
    "HilbertAdjoint",
    "SecondAdjointH",
    "solve_first_adjoint_h",
    "solve_second_adjoint_h",
    "extract_p00",
]


class PipelineError(ValueError):
    """The density pipeline received a measure with atoms."""


class NumericalHealthError(FloatingPointError):
    """Symmetry drift or memory budget exceeded in the operator recursion."""


def hilbert_weights(span: float, L: int, d: int) -> NDArray:
    w = np.concatenate([[1.0], trapezoid_weights(span, L)])
    return np.repeat(w, d)


@dataclass(frozen=True, eq=False)
class HilbertPoint:
    """head (..., d), tail (..., L + 1, d)."""

    head: NDArray
    tail: NDArray
    span: float

    @property
    def L(self) -> int:
        return self.tail.shape[-2] - 1

    @property
    def d(self) -> int:
        return self.head.shape[-1]

    def vector(self) -> NDArray:
        t = self.tail.reshape(*self.tail.shape[:-2], -1)
        return np.concatenate([self.head, t], axis=-1)

    @classmethod
    def from_vector(cls, v: NDArray, d: int, span: float) -> "HilbertPoint":
        v = np.asarray(v, dtype=float)
        head = v[..., :d]
        tail = v[..., d:].reshape(*v.shape[:-1], -1, d)
        return cls(head, tail, span)

    def inner(self, other: "HilbertPoint") -> NDArray:
        w = trapezoid_weights(self.span, self.L)
        return np.sum(self.head * other.head, axis=-1) + np.einsum("j,...jd,...jd->...", w, self.tail, other.tail)

    def project_head(self) -> NDArray:
        """G*: the head component."""
        return self.head


def lift(x: TrajectoryBundle | NDArray, t: float, grid: TimeGrid) -> HilbertPoint:
    """(x(t), x(t + theta)) on the grid."""
    i = grid.index(t)
    vals = x.values if isinstance(x, TrajectoryBundle) else np.asarray(x, dtype=float)
    seg = vals[..., i : i + grid.L + 1, :]
    return HilbertPoint(seg[..., -1, :].copy(), seg.copy(), grid.d)


def shift_index(k: int, L: int) -> NDArray:
    """Source node for each target: -1 means the head, j means tail node j."""
    if k < 0:
        raise ValueError("shift must be forward in time")
    j = np.arange(L + 1)
    src = j + k
    return np.where(j >= L - k, -1, src)


def _steps(t: float, dt: float) -> int:
    pos = t / dt
    k = int(round(pos))
    if abs(pos - k) > 1e-9 * max(1.0, pos) or k < 0:
        raise AlignmentError(f"shift time {t} is not a non-negative multiple of dt={dt}")
    return k


def shift_matrix(k: int, L: int, d: int) -> NDArray:
    """S_k acting on flat vectors: head kept, nodes within k steps of 0 take the head."""
    D = d * (L + 2)
    S = np.zeros((D, D))
    S[:d, :d] = np.eye(d)
    src = shift_index(k, L)
    for j, s in enumerate(src):
        col = 0 if s < 0 else d * (1 + s)
        S[d * (1 + j) : d * (2 + j), col : col + d] = np.eye(d)
    return S


def shift_semigroup(t: float, p: HilbertPoint, dt: float) -> HilbertPoint:
    """Exact grid shift: tail(theta) = head on [-t, 0], old tail(theta + t) before."""
    k = _steps(t, dt)
    src = shift_index(k, p.L)
    tail = np.where(
        (src < 0)[:, None],
        p.head[..., None, :],
        p.tail[..., np.clip(src, 0, p.L), :],
    )
    return HilbertPoint(p.head.copy(), tail, p.span)


def shift_adjoint(t: float, p: HilbertPoint, dt: float) -> HilbertPoint:
    """Adjoint of the shift for the weighted inner product."""
    k = _steps(t, dt)
    L, d = p.L, p.d
    w = hilbert_weights(p.span, L, d)
    v = p.vector() * w
    S = shift_matrix(k, L, d)
    out = v @ S
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(w > 0, out / np.where(w > 0, w, 1.0), 0.0)
    return HilbertPoint.from_vector(out, d, p.span)


@dataclass(frozen=True, eq=False)
class OperatorBlock:
    """Symmetric bilinear matrix on the flat space, weights included."""

    matrix: NDArray
    d: int

    @property
    def p00(self) -> NDArray:
        return self.matrix[..., : self.d, : self.d]

    @property
    def p01(self) -> NDArray:
        return self.matrix[..., : self.d, self.d :]

    @property
    def p10(self) -> NDArray:
        return self.matrix[..., self.d :, : self.d]

    @property
    def p11(self) -> NDArray:
        return self.matrix[..., self.d :, self.d :]

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.matrix - np.swapaxes(self.matrix, -1, -2)), initial=0.0))

    def value(self, h: NDArray, k: NDArray) -> NDArray:
        return np.einsum("...a,...ab,...b->...", h, self.matrix, k)


# ---------------------------------------------------------------------------
# operator assembly
#
# Reduced coordinates r = (x, I_b, I_sigma, I_ell) of size nr.  J (nr, D) maps a
# flat point to them: the head gives x, node masses applied to the tail give the
# past integrals.  Every operator is a small per-path matrix composed with J.


def _density_only(spec: ProblemSpec) -> None:
    for name in ("mu_b", "mu_sigma", "mu_ell", "mu_h"):
        for mu in getattr(spec, name):
            if mu.has_atoms:
                raise PipelineError(
                    f"{name} has atoms; the operator pipeline needs densities, mollify the measure first"
                )


def _J(masses: list[NDArray], d: int, L: int) -> NDArray:
    """Rows: x then one block of d per measure in ``masses``."""
    D = d * (L + 2)
    blocks = [np.hstack([np.eye(d), np.zeros((d, D - d))])]
    for m in masses:
        for row in m:
            Jm = np.zeros((d, D))
            Jm[:, d:] = np.kron(row[None, :], np.eye(d))
            blocks.append(Jm)
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Operators at one time in reduced form; ``dense_*`` expand them on the flat space.

    ``cb`` (Mp, d, nr) drift row map, ``cs`` (Mp, m, d, nr) diffusion row maps,
    ``cl`` (Mp, nr) running-cost gradient, ``K`` (Mp, nr, nr) Hessian of the
    Hamiltonian when adjoint values were supplied, ``J`` (nr, D).
    """

    J: NDArray
    cb: NDArray
    cs: NDArray
    cl: NDArray
    K: NDArray | None
    hess_b: NDArray
    hess_s: NDArray
    hess_l: NDArray

    def B_X(self) -> NDArray:
        return self.cb @ self.J

    def Sigma_X(self) -> NDArray:
        return self.cs @ self.J

    def L_X(self) -> NDArray:
        return self.cl @ self.J

    def B_XX(self) -> NDArray:
        """(Mp, d, D, D), one bilinear block per drift component."""
        return np.einsum("ri,Mars,sj->Maij", self.J, self.hess_b, self.J)

    def Sigma_XX(self) -> NDArray:
        return np.einsum("ri,Mlars,sj->Mlaij", self.J, self.hess_s, self.J)

    def L_XX(self) -> NDArray:
        return np.einsum("ri,Mrs,sj->Mij", self.J, self.hess_l, self.J)

    def H_XX(self) -> NDArray:
        if self.K is None:
            raise ValueError("operator set was assembled without adjoint values")
        return np.einsum("ri,Mrs,sj->Mij", self.J, self.K, self.J)


def _layout(spec: ProblemSpec) -> tuple[int, int, int, int]:
    d = spec.d_state
    return d, len(spec.mu_b) * d, len(spec.mu_sigma) * d, len(spec.mu_ell) * d


def _reduced(spec: ProblemSpec, fr: FrozenCoefficients, i: int, pbar=None, q=None) -> dict:
    """Per-path reduced operators at step i (before composing with J)."""
    s = spec
    d, nyb, nys, nyl = _layout(spec)
    m = spec.m_noise
    nr = d + nyb + nys + nyl
    ob, os_, ol = d, d + nyb, d + nyb + nys
    t, x, Ib, Is, Il, ui = fr.args(i)
    M = x.shape[0]
    cb = np.zeros((M, d, nr))
    cb[:, :, :d] = s.b.dx(t, x, Ib, ui)
    cb[:, :, ob:os_] = s.b.dy(t, x, Ib, ui)
    cs = np.zeros((M, m, d, nr))
    cs[..., :d] = np.moveaxis(s.sigma.dx(t, x, Is, ui), 2, 1)
    cs[..., os_:ol] = np.moveaxis(s.sigma.dy(t, x, Is, ui), 2, 1)
    cl = np.zeros((M, nr))
    cl[:, :d] = s.ell.dx(t, x, Il, ui)
    cl[:, ol:] = s.ell.dy(t, x, Il, ui)
    hb = np.zeros((M, d, nr, nr))
    hb[:, :, :d, :d] = s.b.dxx(t, x, Ib, ui)
    bxy = s.b.dxy(t, x, Ib, ui)
    hb[:, :, :d, ob:os_] = bxy
    hb[:, :, ob:os_, :d] = np.swapaxes(bxy, -1, -2)
    hb[:, :, ob:os_, ob:os_] = s.b.dyy(t, x, Ib, ui)
    hs = np.zeros((M, m, d, nr, nr))
    sxx = np.moveaxis(s.sigma.dxx(t, x, Is, ui), 2, 1)
    sxy = np.moveaxis(s.sigma.dxy(t, x, Is, ui), 2, 1)
    syy = np.moveaxis(s.sigma.dyy(t, x, Is, ui), 2, 1)
    hs[..., :d, :d] = sxx
    hs[..., :d, os_:ol] = sxy
    hs[..., os_:ol, :d] = np.swapaxes(sxy, -1, -2)
    hs[..., os_:ol, os_:ol] = syy
    hl = np.zeros((M, nr, nr))
    hl[:, :d, :d] = s.ell.dxx(t, x, Il, ui)
    lxy = s.ell.dxy(t, x, Il, ui)
    hl[:, :d, ol:] = lxy
    hl[:, ol:, :d] = np.swapaxes(lxy, -1, -2)
    hl[:, ol:, ol:] = s.ell.dyy(t, x, Il, ui)
    out = {"cb": cb, "cs": cs, "cl": cl, "hb": hb, "hs": hs, "hl": hl, "K": None}
    if pbar is not None:
        K = np.einsum("Ma,Mars->Mrs", pbar, hb) - hl
        if q is not None:
            K = K + np.einsum("Mal,Mlars->Mrs", q, hs)
        out["K"] = 0.5 * (K + np.swapaxes(K, -1, -2))
    return out


def _lead(*arrs: NDArray) -> list[NDArray]:
    """Broadcast the leading (path) axis of every array to the largest one."""
    Mx = max(a.shape[0] for a in arrs)
    return [a if a.shape[0] == Mx else np.broadcast_to(a, (Mx, *a.shape[1:])) for a in arrs]


def _collapse(a: NDArray, tol: float = 1e-13) -> NDArray:
    """Drop the path axis when every path carries the same values."""
    if a.shape[0] <= 1:
        return a
    ref = a[:1]
    scale = max(1.0, float(np.max(np.abs(ref), initial=0.0)))
    if np.max(np.abs(a - ref), initial=0.0) <= tol * scale:
        return ref
    return a


def assemble_operators(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    t: float,
    *,
    p0: NDArray | None = None,
    q0: NDArray | None = None,
    n: int | None = None,
) -> OperatorSet:
    """Operator coefficients along the base pair at time t.

    ``p0``, ``q0`` are head values of the operator adjoint (terminal value
    -h_x); with them the Hamiltonian Hessian ``K`` is filled in.
    """
    if n is None:
        _density_only(spec)
    g = base.grid
    u = u if u is not None else base.control
    exact = spec_masses(spec, g.L)
    fr = FrozenCoefficients(spec, base, u, exact)
    i = g.index(t)
    red = _reduced(spec, fr, i, p0, q0)
    op = spec_masses(spec, g.L, n) if n is not None else exact
    J = _J([op["b"], op["sigma"], op["ell"]], spec.d_state, g.L)
    return OperatorSet(J, red["cb"], red["cs"], red["cl"], red["K"], red["hb"], red["hs"], red["hl"])


def _terminal_ops(spec: ProblemSpec, fr: FrozenCoefficients, mass_h: NDArray, L: int):
    """-H_X (Mp, D) and -H_XX (Mp, D, D) at T."""
    d = spec.d_state
    tT, xT, IhT, uT = fr.terminal()
    M = xT.shape[0]
    nyh = IhT.shape[1]
    J = _J([mass_h], d, L)
    g = np.zeros((M, d + nyh))
    g[:, :d] = spec.h.dx(tT, xT, IhT, uT)
    H = np.zeros((M, d + nyh, d + nyh))
    H[:, :d, :d] = spec.h.dxx(tT, xT, IhT, uT)
    if nyh:
        g[:, d:] = spec.h.dy(tT, xT, IhT, uT)
        hxy = spec.h.dxy(tT, xT, IhT, uT)
        H[:, :d, d:] = hxy
        H[:, d:, :d] = np.swapaxes(hxy, -1, -2)
        H[:, d:, d:] = spec.h.dyy(tT, xT, IhT, uT)
    H = _collapse(H)
    if H.shape[0] > 1 and M * J.shape[1] ** 2 > 4e7:
        raise NumericalHealthError("path-dependent terminal curvature exceeds the memory budget")
    return -(g @ J), -np.einsum("ri,Mrs,sj->Mij", J, H, J)


def _St_rows(P: NDArray, src: NDArray, d: int) -> NDArray:
    """S^T applied along the second-to-last axis: (S^T P)[a] = sum over c with source a of P[c]."""
    out = np.zeros_like(P)
    out[..., :d, :] += P[..., :d, :]
    L1 = len(src)
    for j in range(L1):
        s = src[j]
        tgt = slice(0, d) if s < 0 else slice(d * (1 + s), d * (2 + s))
        out[..., tgt, :] += P[..., d * (1 + j) : d * (2 + j), :]
    return out


def _St_cov(p: NDArray, src: NDArray, d: int) -> NDArray:
    return _St_rows(p[..., None], src, d)[..., 0]


def _StPS(P: NDArray, src: NDArray, d: int) -> NDArray:
    A = _St_rows(P, src, d)
    return np.swapaxes(_St_rows(np.swapaxes(A, -1, -2), src, d), -1, -2)


# ---------------------------------------------------------------------------
# first adjoint


@dataclass(frozen=True, eq=False)
class HilbertAdjoint:
    """Operator first adjoint: heads on the grid, full covectors at stored times.

    ``p_head`` (Mp, N + 1, d), ``p_bar_head`` (Mp, N, d), ``q_head`` (Mp, N, d, m).
    Full covectors ``full[i]`` have shape (Mp, D) with weights included.
    """

    p_head: NDArray
    p_bar_head: NDArray
    q_head: NDArray
    full: Mapping[int, NDArray]
    grid: TimeGrid
    control: ControlPath
    diagnostics: dict = field(default_factory=dict)


def _regress(reg: Regressor | None, Y: NDArray) -> NDArray:
    if reg is None or Y.shape[0] == 1:
        return Y.mean(axis=0, keepdims=True)
    return reg.project(Y)[0]


def _features(base: TrajectoryBundle, i: int, feat_mass: NDArray) -> NDArray:
    seg = base.segment(i)
    return np.concatenate([seg[:, -1], past_integrals(seg, feat_mass)], axis=1)


def _feature_masses(spec: ProblemSpec, L: int) -> NDArray:
    return _unique_masses(spec_masses(spec, L), L)


def solve_first_adjoint_h(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    W: BrownianBundle,
    cfg: RegressionConfig | None = None,
    *,
    store: Iterable[float] = (),
) -> HilbertAdjoint:
    """Backward recursion p_i = S^T pbar + dt (B_X^T pbar_head + Sigma_X^T q_head) - dt L_X, p_N = -H_X."""
    _density_only(spec)
    cfg = cfg or RegressionConfig()
    g = W.grid
    u = u if u is not None else base.control
    if base.grid != g or base.M != W.M:
        raise ConsistencyError("base trajectory and Brownian bundle disagree")
    d, m, L, N = spec.d_state, spec.m_noise, g.L, g.N
    dt = g.dt
    mass = spec_masses(spec, L)
    fr = FrozenCoefficients(spec, base, u, mass)
    J = _J([mass["b"], mass["sigma"], mass["ell"]], d, L)
    src = shift_index(1, L)
    feat_mass = _feature_masses(spec, L)
    store_idx = {g.index(t) for t in store}
    pN, _ = _terminal_ops(spec, fr, mass["h"], L)
    p = _collapse(pN)
    M = W.M
    p_head = np.zeros((M, N + 1, d))
    p_bar = np.zeros((M, N, d))
    q_head = np.zeros((M, N, d, m))
    p_head[:, N] = p[:, :d]
    full = {N: p.copy()} if N in store_idx else {}
    deterministic = np.zeros(N, dtype=bool)
    for i in range(N - 1, -1, -1):
        red = _reduced(spec, fr, i)
        cb, cs, cl = (_collapse(red[k]) for k in ("cb", "cs", "cl"))
        if p.shape[0] == 1:
            pb = p
            qh = np.zeros((1, d, m))
        else:
            reg = Regressor(_features(base, i, feat_mass), cfg, step=i)
            pb = _regress(reg, p)
            pb = _collapse(pb)
            centered = np.einsum("Ma,Ml->Mal", p[:, :d] - pb[:, :d], W.dW[:, i]) / dt
            qh = _collapse(_regress(reg, centered))
        pb, qh, cb, cs, cl = _lead(pb, qh, cb, cs, cl)
        drive = np.einsum("Ma,Mar->Mr", pb[:, :d], cb) + np.einsum("Mal,Mlar->Mr", qh, cs) - cl
        p = _St_cov(pb, src, d) + dt * (drive @ J)
        p = _collapse(p)
        deterministic[i] = p.shape[0] == 1
        p_head[:, i] = p[:, :d]
        p_bar[:, i] = pb[:, :d]
        q_head[:, i] = qh
        if i in store_idx:
            full[i] = p.copy()
    if deterministic.all():
        p_head, p_bar, q_head = p_head[:1], p_bar[:1], q_head[:1]
    return HilbertAdjoint(p_head, p_bar, q_head, full, g, u, {"deterministic_steps": int(deterministic.sum())})


# ---------------------------------------------------------------------------
# second adjoint


@dataclass(frozen=True, eq=False)
class SecondAdjointH:
    """Top-left block at every grid time and full matrices at stored times.

    ``P00`` (Mp, N + 1, d, d); ``full[i]`` (Mp, D, D).
    """

    P00: NDArray
    full: Mapping[int, NDArray]
    grid: TimeGrid
    method: str
    diagnostics: dict = field(default_factory=dict)

    def block(self, i: int) -> OperatorBlock:
        return OperatorBlock(self.full[i], self.P00.shape[-1])


def _adjoint_heads(first, N: int):
    """(pbar_head, q_head) in the operator convention from either first-adjoint solver."""
    if isinstance(first, HilbertAdjoint):
        return first.p_bar_head, first.q_head
    if isinstance(first, AdjointSolution):
        return -first.p_bar, -first.q[:, :N]
    raise TypeError("first adjoint must come from solve_first_adjoint_h or solve_absde")


def solve_second_adjoint_h(
    spec: ProblemSpec,
    base: TrajectoryBundle,
    u: ControlPath | None,
    first,
    W: BrownianBundle,
    cfg: RegressionConfig | None = None,
    *,
    n: int | None = None,
    store: Iterable[float] = (),
    budget: float = 4e7,
    sym_tol: float = 1e-6,
) -> SecondAdjointH:
    """Backward recursion for the symmetric operator adjoint, terminal value -H_XX.

    P_i = A0^T Pbar A0 + dt sum_l [(G S^l)^T Pbar (G S^l) + A0^T Q^l S^l + (A0^T Q^l S^l)^T] + dt H_XX
    with A0 = S + dt G B_X and Q^l = E_i[P_{i+1} G dW^l] / dt.  With ``n`` the
    measures inside the operators are mollified (coefficients stay on the exact
    trajectory), which gives the approximating sequence for point delays.
    """
    if n is None:
        _density_only(spec)
    cfg = cfg or RegressionConfig()
    g = W.grid
    u = u if u is not None else base.control
    d, m, L, N = spec.d_state, spec.m_noise, g.L, g.N
    D = d * (L + 2)
    dt = g.dt
    exact = spec_masses(spec, L)
    op = spec_masses(spec, L, n) if n is not None else exact
    fr = FrozenCoefficients(spec, base, u, exact)
    J = _J([op["b"], op["sigma"], op["ell"]], d, L)
    src = shift_index(1, L)
    feat_mass = _feature_masses(spec, L)
    pbar_h, q_h = _adjoint_heads(first, N)
    store_idx = {g.index(t) for t in store}
    _, PN = _terminal_ops(spec, fr, op["h"], L)
    P = _collapse(PN)
    M = W.M
    P00 = np.zeros((M, N + 1, d, d))
    P00[:, N] = P[:, :d, :d]
    full = {N: P.copy()} if N in store_idx else {}
    drift = 0.0
    qnorm = np.zeros(N)
    stochastic_steps = 0
    for i in range(N - 1, -1, -1):
        pb_i = pbar_h[:, i] if pbar_h.shape[0] > 1 else pbar_h[:1, i]
        q_i = q_h[:, i] if q_h.shape[0] > 1 else q_h[:1, i]
        red = _reduced(spec, fr, i)
        Mi = max(pb_i.shape[0], red["hb"].shape[0])
        K = np.einsum("Ma,Mars->Mrs", np.broadcast_to(pb_i, (Mi, d)), red["hb"]) - red["hl"]
        K = K + np.einsum("Mal,Mlars->Mrs", np.broadcast_to(q_i, (Mi, d, m)), red["hs"])
        K = _collapse(0.5 * (K + np.swapaxes(K, -1, -2)))
        cb, cs = _collapse(red["cb"]), _collapse(red["cs"])
        if P.shape[0] == 1:
            Pb = P
            Qh = None
        else:
            if P.shape[0] * D * D > budget:
                raise NumericalHealthError(f"path-dependent operator adjoint needs {P.shape[0] * D * D:.3g} entries")
            stochastic_steps += 1
            reg = Regressor(_features(base, i, feat_mass), cfg, step=i)
            Pb = _collapse(_regress(reg, P.reshape(P.shape[0], -1)).reshape(P.shape))
            cen = np.einsum("Mab,Ml->Mlab", P[:, :, :d] - Pb[:, :, :d], W.dW[:, i]) / dt
            Qh = _collapse(_regress(reg, cen.reshape(cen.shape[0], -1)).reshape(cen.shape))
            qnorm[i] = float(np.sqrt(np.mean(Qh**2)))
        BX = cb @ J  # (Mp, d, D)
        SX = cs @ J  # (Mp, m, d, D)
        if Qh is None:
            Pb, BX, SX, K = _lead(Pb, BX, SX, K)
        else:
            Pb, BX, SX, K, Qh = _lead(Pb, BX, SX, K, Qh)
        # A0^T Pb A0 with A0 = S + dt G BX
        SPS = _StPS(Pb, src, d)
        StPG = _St_rows(Pb[..., :, :d], src, d)  # S^T Pb G, (Mp, D, d)
        cross = dt * np.einsum("Mia,Maj->Mij", StPG, BX)
        new = SPS + cross + np.swapaxes(cross, -1, -2)
        new = new + dt**2 * np.einsum("Mai,Mab,Mbj->Mij", BX, Pb[..., :d, :d], BX)
        new = new + dt * np.einsum("Mlai,Mab,Mlbj->Mij", SX, Pb[..., :d, :d], SX)
        if Qh is not None:
            # A0^T Q^l S^l: rows through S^T and dt BX^T G^T
            A0tQ = _St_rows(Qh, src, d) + dt * np.einsum("Mai,Mlab->Mlib", BX, Qh[:, :, :d, :])
            qc = dt * np.einsum("Mlia,Mlaj->Mij", A0tQ, SX)
            new = new + qc + np.swapaxes(qc, -1, -2)
        new = new + dt * np.einsum("ri,Mrs,sj->Mij", J, K, J)
        drift = max(drift, float(np.max(np.abs(new - np.swapaxes(new, -1, -2)), initial=0.0)))
        if drift > sym_tol * max(1.0, float(np.max(np.abs(new)))):
            raise NumericalHealthError(f"symmetry drift {drift:.3g} at step {i}")
        P = _collapse(0.5 * (new + np.swapaxes(new, -1, -2)))
        P00[:, i] = P[:, :d, :d]
        if i in store_idx:
            full[i] = P.copy()
    if stochastic_steps == 0 and np.all(np.ptp(P00, axis=0) == 0):
        P00 = P00[:1]
    method = "matrix-bsde" if n is None else f"matrix-bsde-n{n}"
    diag = {"symmetry_drift": drift, "q_norm": qnorm, "stochastic_steps": stochastic_steps}
    return SecondAdjointH(P00, full, g, method, diag)


def extract_p00(P: SecondAdjointH | OperatorBlock, times: Iterable[float] | None = None) -> SecondOrderKernel | NDArray:
    """Top-left d x d block; a SecondOrderKernel for a solved process, a matrix for a single block."""
    if isinstance(P, OperatorBlock):
        return P.p00
    g = P.grid
    ts = g.times if times is None else np.asarray(list(times), dtype=float)
    idx = [g.index(t) for t in ts]
    vals = P.P00[:, idx]  # (Mp, nt, d, d)
    mats = vals.mean(axis=0)
    Mp = vals.shape[0]
    se = vals.std(axis=0, ddof=1) / np.sqrt(Mp) if Mp > 1 else np.zeros_like(mats)
    return SecondOrderKernel(
        times=ts,
        matrices=0.5 * (mats + np.swapaxes(mats, -1, -2)),
        std_errors=se,
        method="matrix-bsde",
        pathwise=np.swapaxes(vals, 0, 1),
        meta={"operator_method": P.method},
    )
