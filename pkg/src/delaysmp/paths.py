"""Time grids commensurate with the delay, and reproducible Brownian increments.

Increments are drawn from counter-based Philox streams: path ``k`` of seed
``s`` always reads the stream with key ``s`` and counter block ``k``, so any
range of paths can be generated by any worker and the result does not depend
on how the work was split.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .measures import AlignmentError

__all__ = ["GridError", "TimeGrid", "BrownianBundle", "make_grid", "sample_brownian", "coarsen"]

_TOL = 1e-9


class GridError(ValueError):
    """Delay not commensurate with the time step."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int
    d: float
    L: int

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> NDArray:
        """Grid on [0, T], N + 1 nodes."""
        return self.T * np.arange(self.N + 1) / self.N

    @property
    def full_times(self) -> NDArray:
        """Grid on [-d, T]; index L corresponds to t = 0."""
        return self.dt * (np.arange(self.N + self.L + 1) - self.L)

    @property
    def extended_times(self) -> NDArray:
        """Grid on [0, T + d] used by anticipated adjoints."""
        return self.dt * np.arange(self.N + self.L + 1)

    def index(self, t: float) -> int:
        """Grid index of time t in [0, T]; raises if t is off-grid."""
        pos = t / self.dt
        i = int(round(pos))
        if abs(pos - i) > _TOL * max(1.0, abs(pos)) or i < 0 or i > self.N:
            raise AlignmentError(f"time {t} is not a grid node of step {self.dt}")
        return i

    def steps(self, width: float) -> int:
        pos = width / self.dt
        k = int(round(pos))
        if abs(pos - k) > _TOL * max(1.0, abs(pos)):
            raise AlignmentError(f"width {width} is not a multiple of dt={self.dt}")
        return k

    def as_dict(self) -> dict:
        return {"T": self.T, "N": self.N, "d": self.d, "L": self.L, "dt": self.dt}


def _commensurate(T: float, N: int, d: float) -> bool:
    pos = d * N / T
    return abs(pos - round(pos)) <= _TOL * max(1.0, pos)


def make_grid(T: float, N: int, d: float) -> TimeGrid:
    if N < 1:
        raise ValueError("N must be at least 1")
    if T <= 0 or d < 0:
        raise ValueError("need T > 0 and d >= 0")
    if not _commensurate(T, N, d):
        best = None
        for k in range(1, 100_000):
            for cand in (N - k, N + k):
                if cand >= 1 and _commensurate(T, cand, d):
                    best = cand
                    break
            if best is not None:
                break
        hint = f"; nearest admissible N is {best}" if best else ""
        raise GridError(f"delay d={d} is not a multiple of dt={T / N}{hint}")
    return TimeGrid(T=float(T), N=int(N), d=float(d), L=int(round(d * N / T)))


@dataclass(frozen=True, eq=False)
class BrownianBundle:
    """Increments ``dW`` of shape (M, N, m), i.i.d. N(0, dt)."""

    grid: TimeGrid
    dW: NDArray
    seed: int
    antithetic: bool = False

    @property
    def M(self) -> int:
        return self.dW.shape[0]

    @property
    def m(self) -> int:
        return self.dW.shape[2]

    def paths(self) -> NDArray:
        """Brownian paths on [0, T], shape (M, N + 1, m)."""
        W = np.zeros((self.M, self.grid.N + 1, self.m))
        np.cumsum(self.dW, axis=1, out=W[:, 1:])
        return W

    def as_dict(self) -> dict:
        return {"M": self.M, "m": self.m, "seed": self.seed, "antithetic": self.antithetic}


def _path_normals(seed: int, first: int, count: int, n: int) -> NDArray:
    out = np.empty((count, n))
    key = seed & 0xFFFFFFFFFFFFFFFF
    for k in range(count):
        bitgen = np.random.Philox(key=key, counter=[0, 0, first + k, 0])
        out[k] = np.random.Generator(bitgen).standard_normal(n)
    return out


def sample_brownian(
    grid: TimeGrid,
    M: int,
    seed: int,
    m: int = 1,
    *,
    workers: int = 1,
    antithetic: bool = False,
    chunk: int = 4096,
) -> BrownianBundle:
    """Increments keyed by (seed, path); step and component index the stream position.

    With ``antithetic`` the second half of the paths are the negated first half.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    n = grid.N * m
    base = (M + 1) // 2 if antithetic else M
    ranges = [(a, min(chunk, base - a)) for a in range(0, base, chunk)]
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda r: _path_normals(seed, r[0], r[1], n), ranges))
    else:
        blocks = [_path_normals(seed, a, c, n) for a, c in ranges]
    Z = np.concatenate(blocks, axis=0)
    if antithetic:
        Z = np.concatenate([Z, -Z], axis=0)[:M]
    dW = Z.reshape(M, grid.N, m) * np.sqrt(grid.dt)
    return BrownianBundle(grid=grid, dW=dW, seed=int(seed), antithetic=antithetic)


def coarsen(W: BrownianBundle, factor: int) -> BrownianBundle:
    """Same Brownian paths on a grid with ``factor`` times fewer steps."""
    g = W.grid
    if g.N % factor or g.L % factor:
        raise GridError("coarsening factor must divide both N and L")
    grid = TimeGrid(T=g.T, N=g.N // factor, d=g.d, L=g.L // factor)
    dW = W.dW.reshape(W.M, grid.N, factor, W.m).sum(axis=2)
    return BrownianBundle(grid=grid, dW=dW, seed=W.seed, antithetic=W.antithetic)
