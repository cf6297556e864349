"""Second-order kernel P00 as a time-indexed family of symmetric matrices."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

__all__ = ["SecondOrderKernel", "CoverageError", "CURVATURE_METHODS", "BSDE_METHODS"]

CURVATURE_METHODS = ("representation",)
BSDE_METHODS = ("matrix-bsde",)


class CoverageError(ValueError):
    """Kernel times do not cover the requested interval."""


@dataclass(frozen=True, eq=False)
class SecondOrderKernel:
    """P00 at a set of times.

    ``matrices`` (nt, d, d) are path means, ``std_errors`` their Monte Carlo
    errors, ``pathwise`` (nt, Mp, d, d) optional per-path (conditioned)
    values.  Kernels tagged ``representation`` or ``mollified-<n>`` hold the
    curvature of the cost along linearized flows; ``matrix-bsde`` kernels hold
    the top-left block of the operator adjoint, which is its negative.
    """

    times: NDArray
    matrices: NDArray
    std_errors: NDArray
    method: str
    pathwise: NDArray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "matrices", np.asarray(self.matrices, dtype=float))
        object.__setattr__(self, "std_errors", np.asarray(self.std_errors, dtype=float))

    @property
    def d(self) -> int:
        return self.matrices.shape[-1]

    @property
    def is_curvature(self) -> bool:
        return self.method != "matrix-bsde"

    def as_curvature(self) -> "SecondOrderKernel":
        """Same kernel in the curvature sign convention."""
        if self.is_curvature:
            return self
        pw = None if self.pathwise is None else -self.pathwise
        return replace(self, matrices=-self.matrices, pathwise=pw, method="matrix-bsde(curvature)")

    def as_bsde(self) -> "SecondOrderKernel":
        """Same kernel in the operator-adjoint sign convention (terminal value -h_xx)."""
        if not self.is_curvature:
            return self
        pw = None if self.pathwise is None else -self.pathwise
        return replace(self, matrices=-self.matrices, pathwise=pw, method=f"{self.method}(bsde)")

    def symmetry_gap(self) -> NDArray:
        """|P - P^T| in units of the entrywise standard error (inf where the error is zero and the gap is not)."""
        gap = np.abs(self.matrices - np.swapaxes(self.matrices, -1, -2))
        se = self.std_errors + np.swapaxes(self.std_errors, -1, -2)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(gap <= 1e-12, 0.0, gap / se)

    def covers(self, T: float, tol: float = 1e-9) -> bool:
        return self.times.min() <= tol and self.times.max() >= T - tol

    def at(self, t: float, *, pathwise: bool = True) -> NDArray:
        """Matrix at time t by linear interpolation; shape (Mp, d, d)."""
        if t < self.times.min() - 1e-9 or t > self.times.max() + 1e-9:
            raise CoverageError(f"time {t} outside kernel range [{self.times.min()}, {self.times.max()}]")
        src = self.pathwise if (pathwise and self.pathwise is not None) else self.matrices[:, None]
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 1)
        if k == len(self.times) - 1 or abs(t - self.times[k]) <= 1e-12:
            return src[k]
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1 - lam) * src[k] + lam * src[k + 1]

    def to_rows(self) -> list[tuple[float, int, int, float, float]]:
        """(t, i, j, value, stderr) rows for CSV export."""
        rows = []
        for a, t in enumerate(self.times):
            for i in range(self.d):
                for j in range(self.d):
                    rows.append((float(t), i, j, float(self.matrices[a, i, j]), float(self.std_errors[a, i, j])))
        return rows
