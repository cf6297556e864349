"""Finite signed measures on the delay window [-d, 0].

A measure is a finite list of atoms plus an optional density sampled on the
uniform theta-grid with L + 1 nodes.  Every computation goes through the
node-mass representation: atoms sit on grid nodes and the density contributes
``f(theta_j) * w_j`` with trapezoid weights ``w_j``.  Past integrals are then a
plain weighted sum over the nodes of a path segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "AlignmentError",
    "ShapeError",
    "DelayMeasure",
    "PastSegment",
    "dirac",
    "uniform",
    "exponential",
    "theta_grid",
    "trapezoid_weights",
    "node_masses",
    "total_variation",
    "past_integral",
    "mollify",
]

_ALIGN_TOL = 1e-9


class AlignmentError(ValueError):
    """An atom or a time point does not sit on the grid."""


class ShapeError(ValueError):
    """Segment length or span does not match the measure."""


def theta_grid(span: float, L: int) -> NDArray:
    if L == 0:
        return np.zeros(1)
    return -span + span * np.arange(L + 1) / L


def trapezoid_weights(span: float, L: int) -> NDArray:
    if L == 0:
        return np.zeros(1)
    w = np.full(L + 1, span / L)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True, eq=False)
class DelayMeasure:
    """Atoms ``(theta, weight)`` plus an optional density on [-span, 0].

    The density is given either as samples on the theta-grid of resolution
    ``grid_resolution`` or as a callable that can be resampled on any grid.
    """

    span: float
    atoms: tuple[tuple[float, float], ...] = ()
    density_samples: NDArray | None = None
    grid_resolution: int | None = None
    density_fn: Callable[[NDArray], NDArray] | None = None
    interpolate: bool = False
    label: str = ""

    def __post_init__(self) -> None:
        if self.span < 0:
            raise ValueError("span must be non-negative")
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        for a, _ in atoms:
            if a < -self.span - _ALIGN_TOL or a > _ALIGN_TOL:
                raise ValueError(f"atom at {a} outside [-{self.span}, 0]")
        object.__setattr__(self, "atoms", atoms)
        if self.density_samples is not None:
            f = np.asarray(self.density_samples, dtype=float)
            if self.grid_resolution is None:
                object.__setattr__(self, "grid_resolution", len(f) - 1)
            if len(f) != self.grid_resolution + 1:
                raise ShapeError("density samples must have L + 1 entries")
            object.__setattr__(self, "density_samples", f)

    @property
    def has_atoms(self) -> bool:
        return any(w != 0.0 for _, w in self.atoms)

    @property
    def has_density(self) -> bool:
        return self.density_samples is not None or self.density_fn is not None

    @property
    def is_zero(self) -> bool:
        if self.has_atoms:
            return False
        if self.density_samples is not None:
            return not np.any(self.density_samples)
        return self.density_fn is None

    def at_resolution(self, L: int) -> "DelayMeasure":
        """Return the same measure with its density sampled on an L-grid."""
        if self.grid_resolution == L and (self.density_fn is None or self.density_samples is not None):
            return self
        if self.density_fn is not None:
            f = np.asarray(self.density_fn(theta_grid(self.span, L)), dtype=float)
            f = np.broadcast_to(f, (L + 1,)).copy()
            return replace(self, density_samples=f, grid_resolution=L)
        if self.density_samples is not None:
            raise ShapeError(
                f"density sampled at L={self.grid_resolution} cannot be used at L={L}"
            )
        return replace(self, grid_resolution=L)

    def scaled(self, c: float) -> "DelayMeasure":
        atoms = tuple((a, c * w) for a, w in self.atoms)
        f = None if self.density_samples is None else c * self.density_samples
        fn = None
        if self.density_fn is not None:
            g = self.density_fn
            fn = lambda th: c * np.asarray(g(th), dtype=float)  # noqa: E731
        return replace(self, atoms=atoms, density_samples=f, density_fn=fn)


@dataclass(frozen=True, eq=False)
class PastSegment:
    """Values of a path on {t - d, ..., t}; ``values`` has shape (..., L + 1, dim)."""

    values: NDArray
    dt: float
    span: float = field(default=0.0)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", v)
        L = v.shape[-2] - 1
        if self.span == 0.0 and L > 0:
            object.__setattr__(self, "span", L * self.dt)
        if abs(L * self.dt - self.span) > _ALIGN_TOL * max(1.0, self.span):
            raise ShapeError("segment length does not match span / dt")

    @property
    def L(self) -> int:
        return self.values.shape[-2] - 1


def dirac(theta: float, span: float, weight: float = 1.0, L: int | None = None) -> DelayMeasure:
    return DelayMeasure(span=span, atoms=((theta, weight),), grid_resolution=L, label=f"dirac({theta})")


def uniform(span: float, mass: float = 1.0, L: int | None = None) -> DelayMeasure:
    """Constant density with total mass ``mass``."""
    c = mass / span
    mu = DelayMeasure(span=span, density_fn=lambda th: np.full(np.shape(th), c), label="uniform")
    return mu if L is None else mu.at_resolution(L)


def exponential(span: float, rate: float, mass: float = 1.0, L: int | None = None) -> DelayMeasure:
    """Density proportional to exp(rate * theta), normalized to ``mass``."""
    if rate == 0:
        return uniform(span, mass, L)
    z = (1.0 - np.exp(-rate * span)) / rate
    mu = DelayMeasure(
        span=span,
        density_fn=lambda th: mass * np.exp(rate * np.asarray(th)) / z,
        label=f"exp({rate})",
    )
    return mu if L is None else mu.at_resolution(L)


def _resolve_L(mu: DelayMeasure, L: int | None) -> DelayMeasure:
    if L is None:
        if mu.grid_resolution is None:
            raise ShapeError("grid resolution unknown; pass L")
        L = mu.grid_resolution
    return mu.at_resolution(L)


def node_masses(mu: DelayMeasure, L: int | None = None) -> NDArray:
    """Masses carried by each of the L + 1 theta-nodes."""
    mu = _resolve_L(mu, L)
    L = mu.grid_resolution
    m = np.zeros(L + 1)
    for theta, w in mu.atoms:
        if L == 0:
            m[0] += w
            continue
        pos = (theta + mu.span) * L / mu.span
        j = int(round(pos))
        if abs(pos - j) <= _ALIGN_TOL * max(1.0, L):
            m[j] += w
        elif mu.interpolate:
            lo = int(np.floor(pos))
            frac = pos - lo
            m[lo] += (1.0 - frac) * w
            m[lo + 1] += frac * w
        else:
            raise AlignmentError(
                f"atom at theta={theta} is off the theta-grid (step {mu.span / L}); "
                "set interpolate=True to split it between neighbours"
            )
    if mu.density_samples is not None:
        m += mu.density_samples * trapezoid_weights(mu.span, L)
    return m


def total_variation(mu: DelayMeasure) -> float:
    tv = float(sum(abs(w) for _, w in mu.atoms))
    if mu.has_density:
        mu = _resolve_L(mu, None)
        tv += float(np.sum(np.abs(mu.density_samples) * trapezoid_weights(mu.span, mu.grid_resolution)))
    return tv


def past_integral(seg: PastSegment | NDArray, mu: DelayMeasure, dt: float | None = None) -> NDArray:
    """Sum of atom evaluations plus trapezoid quadrature of f * seg.

    ``seg`` is a PastSegment or a raw array of shape (..., L + 1, dim); the
    result has shape (..., dim).
    """
    if isinstance(seg, PastSegment):
        vals, L = seg.values, seg.L
        span = seg.span
    else:
        vals = np.asarray(seg, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        L = vals.shape[-2] - 1
        span = mu.span if dt is None else L * dt
    if abs(span - mu.span) > _ALIGN_TOL * max(1.0, mu.span):
        raise ShapeError(f"segment span {span} does not match measure span {mu.span}")
    w = node_masses(mu, L)
    return np.einsum("j,...jd->...d", w, vals)


def _hat_spread(L: int, halfwidth_nodes: float) -> NDArray:
    """Matrix K[j, i]: fraction of node j's mass moved to node i."""
    K = np.zeros((L + 1, L + 1))
    if halfwidth_nodes <= 1.0:
        np.fill_diagonal(K, 1.0)
        return K
    r = int(np.ceil(halfwidth_nodes))
    offs = np.arange(-r, r + 1)
    c = np.clip(1.0 - np.abs(offs) / halfwidth_nodes, 0.0, None)
    for j in range(L + 1):
        idx = j + offs
        # reflect into [0, L]; repeat in case the kernel is wider than the window
        for _ in range(4):
            idx = np.where(idx < 0, -idx, idx)
            idx = np.where(idx > L, 2 * L - idx, idx)
        row = np.zeros(L + 1)
        np.add.at(row, idx, c)
        K[j] = row / row.sum()
    return K


def mollify(mu: DelayMeasure, n: int, L: int | None = None) -> DelayMeasure:
    """Atom-free approximation: node masses spread by a hat kernel of half-width span/n.

    Mass leaving [-span, 0] is reflected back, so positive measures keep their
    total mass exactly.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("mollification index n must be a positive integer")
    mu = _resolve_L(mu, L)
    L = mu.grid_resolution
    if L == 0 or mu.span == 0:
        raise ValueError("cannot mollify on a zero-width delay window")
    m = node_masses(mu, L)
    K = _hat_spread(L, L / n)
    spread = m @ K
    f = spread / trapezoid_weights(mu.span, L)
    return DelayMeasure(span=mu.span, density_samples=f, grid_resolution=L, label=f"{mu.label}~n{n}")


def stack_masses(measures: Sequence[DelayMeasure], L: int) -> NDArray:
    """(n_measures, L + 1) node-mass matrix."""
    if not measures:
        return np.zeros((0, L + 1))
    return np.vstack([node_masses(mu, L) for mu in measures])
