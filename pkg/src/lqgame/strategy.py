"""Closed-loop strategies built from a regular Riccati solution.

The saddle feedback is ``u = ΘX + v`` with ``Θ = −R̂†N`` and ``v = −R̂†w``,
``w = Bᵀη + Dᵀζ + DᵀPσ + ρ``. The free parameters of the general
representation are set to zero, which selects the minimal-norm pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import AdjointSolution, _affine_terms, _check_same_grid
from .errors import InvalidInputError, RegularityError
from .matrix import DEFAULT_RANGE_TOL, DEFAULT_SIGN_TOL
from .problem import StackedProblem
from .riccati import RegularityReport, RiccatiSolution, check_regularity


@dataclass(frozen=True, eq=False)
class ClosedLoopStrategy:
    """Feedback ``u(s) = Θ(s)X(s) + v(s)`` on a grid, player 1 rows first."""

    grid: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    m1: int
    m2: int
    source: str = "saddle"

    @property
    def n(self) -> int:
        return self.theta.shape[2]

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def theta1(self) -> np.ndarray:
        return self.theta[:, : self.m1]

    @property
    def theta2(self) -> np.ndarray:
        return self.theta[:, self.m1 :]

    @property
    def v1(self) -> np.ndarray:
        return self.v[:, : self.m1]

    @property
    def v2(self) -> np.ndarray:
        return self.v[:, self.m1 :]

    def on_grid(self, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(Θ, v)`` on ``grid``; linear interpolation unless the grids coincide."""
        grid = np.asarray(grid, dtype=float)
        if grid.shape == self.grid.shape and np.array_equal(grid, self.grid):
            return self.theta, self.v
        t0, T = self.grid[0], self.grid[-1]
        slack = 1e-12 * max(1.0, T - t0)
        if grid.min() < t0 - slack or grid.max() > T + slack:
            raise InvalidInputError("strategy is not defined on the whole simulation grid")
        s = np.clip(grid, t0, T)
        k = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self.grid.size - 2)
        w = (s - self.grid[k]) / (self.grid[k + 1] - self.grid[k])
        th = (1 - w)[:, None, None] * self.theta[k] + w[:, None, None] * self.theta[k + 1]
        v = (1 - w)[:, None] * self.v[k] + w[:, None] * self.v[k + 1]
        return th, v

    def with_v(self, v: np.ndarray, source: str | None = None) -> "ClosedLoopStrategy":
        v = np.asarray(v, dtype=float)
        if v.shape != self.v.shape:
            raise InvalidInputError(f"v must have shape {self.v.shape}")
        return ClosedLoopStrategy(self.grid, self.theta, v, self.m1, self.m2, source or self.source)

    @classmethod
    def zero(cls, sp: StackedProblem, grid) -> "ClosedLoopStrategy":
        grid = np.asarray(grid, dtype=float)
        K = grid.size
        return cls(grid, np.zeros((K, sp.m, sp.n)), np.zeros((K, sp.m)), sp.m1, sp.m2, "zero")

    def summary(self) -> dict:
        return {
            "source": self.source,
            "nodes": int(self.grid.size),
            "theta_start": self.theta[0].tolist(),
            "theta_end": self.theta[-1].tolist(),
            "theta_max_abs": float(np.max(np.abs(self.theta))) if self.theta.size else 0.0,
            "v_start": self.v[0].tolist(),
            "v_end": self.v[-1].tolist(),
            "v_max_abs": float(np.max(np.abs(self.v))) if self.v.size else 0.0,
        }


def _gains(sp: StackedProblem, P: RiccatiSolution, adj: AdjointSolution):
    c = sp.coefficients(P.grid)
    with np.errstate(all="ignore"):
        ft, w, v = _affine_terms(c, P.values, adj.eta, adj.zeta)
    return ft, w, v


def build_saddle(
    sp: StackedProblem,
    P: RiccatiSolution,
    adj: AdjointSolution,
    report: RegularityReport | None = None,
    tol_range: float = DEFAULT_RANGE_TOL,
    tol_sign: float = DEFAULT_SIGN_TOL,
) -> ClosedLoopStrategy:
    """Closed-loop saddle ``(Θ*, v*)`` at every node of ``P``.

    Raises
    ------
    RegularityError
        If ``P`` (with ``adj``) is not regular; the error lists the failed
        conditions and carries the report.
    """
    _check_same_grid(P, adj)
    if report is None:
        report = check_regularity(P, sp, adj, tol_range=tol_range, tol_sign=tol_sign)
    if not report.regular:
        raise RegularityError(list(report.failed), report)
    ft, _, v = _gains(sp, P, adj)
    return ClosedLoopStrategy(P.grid.copy(), ft.Theta, v, sp.m1, sp.m2, "saddle")


def build_slq_optimal(
    sp: StackedProblem,
    P: RiccatiSolution,
    adj: AdjointSolution,
    report: RegularityReport | None = None,
    tol_range: float = DEFAULT_RANGE_TOL,
    tol_sign: float = DEFAULT_SIGN_TOL,
) -> ClosedLoopStrategy:
    """Optimal feedback of a one-player problem (``m2 = 0``).

    Uses the same formulas as ``build_saddle``; the player-2 sign condition
    is vacuous and the player-1 one is ``R + DᵀPD ⪰ 0``.
    """
    if sp.m2 != 0:
        raise InvalidInputError("build_slq_optimal needs a problem without player 2 (m2 = 0)")
    out = build_saddle(sp, P, adj, report, tol_range, tol_sign)
    return ClosedLoopStrategy(out.grid, out.theta, out.v, out.m1, 0, "slq")


def consistency_residuals(
    sp: StackedProblem, P: RiccatiSolution, adj: AdjointSolution, strategy: ClosedLoopStrategy
) -> tuple[float, float]:
    """Max-norms of ``R̂Θ + N`` and ``R̂v + w`` over the nodes."""
    ft, w, _ = _gains(sp, P, adj)
    th, v = strategy.on_grid(P.grid)
    r1 = ft.Rhat @ th + ft.N
    r2 = np.einsum("kij,kj->ki", ft.Rhat, v) + w
    return float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))


@dataclass(frozen=True, eq=False)
class AdjointPath:
    """``Y = PX + η`` and ``Z = P(C + DΘ)X + PDv + Pσ + ζ`` along simulated paths.

    Arrays have shape ``(..., nodes, n)`` matching the state paths supplied.
    """

    grid: np.ndarray
    X: np.ndarray
    u: np.ndarray
    Y: np.ndarray
    Z: np.ndarray


def adjoint_along_path(
    sp: StackedProblem,
    P: RiccatiSolution,
    adj: AdjointSolution,
    path,
    strategy: ClosedLoopStrategy,
) -> AdjointPath:
    """Reconstruct ``(Y, Z)`` along a ``StatePath`` or a stored ``PathBundle``.

    Raises
    ------
    InvalidInputError
        If the path, strategy and solutions do not share one grid, or the
        path carries no stored trajectory.
    """
    _check_same_grid(P, adj)
    grid = np.asarray(path.grid, dtype=float)
    for name, g in (("Riccati solution", P.grid), ("strategy", strategy.grid)):
        if g.shape != grid.shape or not np.array_equal(g, grid):
            raise InvalidInputError(f"path grid differs from the {name} grid")
    if path.X is None or path.u is None:
        raise InvalidInputError("path has no stored trajectory")
    X = np.asarray(path.X, dtype=float)
    c = sp.coefficients(grid)
    Pv = P.values
    Y = np.einsum("kij,...kj->...ki", Pv, X) + adj.eta
    F = c.C + c.D @ strategy.theta
    PF = Pv @ F
    PD = Pv @ c.D
    Z = (
        np.einsum("kij,...kj->...ki", PF, X)
        + np.einsum("kij,kj->ki", PD, strategy.v)
        + np.einsum("kij,kj->ki", Pv, c.sigma)
        + adj.zeta
    )
    return AdjointPath(grid=grid, X=X, u=np.asarray(path.u, dtype=float), Y=Y, Z=Z)


def strategy_to_csv(strategy: ClosedLoopStrategy, path: str | Path) -> None:
    """Columns ``s``, ``Theta_ij`` (row-major) and ``v_i``."""
    K, m, n = strategy.theta.shape
    header = ["s"] + [f"Theta_{i + 1}{j + 1}" for i in range(m) for j in range(n)] + [f"v_{i + 1}" for i in range(m)]
    data = np.column_stack([strategy.grid, strategy.theta.reshape(K, m * n), strategy.v])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
