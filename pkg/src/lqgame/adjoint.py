"""Backward adjoint equation for the affine part of the feedback, and the value function.

With deterministic inhomogeneous data the adjoint pair reduces to ``(η, ζ)``
with ``ζ ≡ 0`` and ``η`` solving the linear backward ODE

    dη/ds = −{[Aᵀ − KBᵀ]η + [Cᵀ − KDᵀ](ζ + Pσ) − Kρ + Pb + q},   η(T) = g,

where ``K = (PB + CᵀPD + Sᵀ)R̂† = −Θᵀ``. ``ζ`` is carried explicitly so the
formulas keep all of their terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import InvalidInputError, NumericOverflowError
from .matrix import DEFAULT_RANGE_TOL, range_inclusion_batch, sym_pinv_apply_batch
from .problem import Coefficients, StackedProblem
from .riccati import L2Verdict, RiccatiSolution, feedback_terms, l2_ladder


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """``η(s_k)`` and ``ζ(s_k) = 0`` on the Riccati grid."""

    grid: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray

    @property
    def n(self) -> int:
        return self.eta.shape[1]

    def evaluate_many(self, s) -> tuple[np.ndarray, np.ndarray]:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t0, T = self.grid[0], self.grid[-1]
        slack = 1e-12 * max(1.0, T - t0)
        if s.size and (s.min() < t0 - slack or s.max() > T + slack):
            raise InvalidInputError(f"time outside adjoint range [{t0}, {T}]")
        s = np.clip(s, t0, T)
        k = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self.grid.size - 2)
        w = ((s - self.grid[k]) / (self.grid[k + 1] - self.grid[k]))[:, None]
        eta = (1.0 - w) * self.eta[k] + w * self.eta[k + 1]
        zeta = (1.0 - w) * self.zeta[k] + w * self.zeta[k + 1]
        return eta, zeta


def _interleave(grid: np.ndarray) -> np.ndarray:
    fine = np.empty(2 * grid.size - 1)
    fine[::2] = grid
    fine[1::2] = 0.5 * (grid[:-1] + grid[1:])
    return fine


def _linear_form(c: Coefficients, P: np.ndarray):
    """``(M, r)`` with ``dη/ds = Mη + r`` at each time of ``c`` (ζ = 0)."""
    Theta = feedback_terms(c, P).Theta
    F = c.A + c.B @ Theta
    Gm = c.C + c.D @ Theta
    M = -np.swapaxes(F, 1, 2)
    Psig = np.einsum("kij,kj->ki", P, c.sigma)
    r = -(
        np.einsum("kji,kj->ki", Gm, Psig)
        + np.einsum("kji,kj->ki", Theta, c.rho)
        + np.einsum("kij,kj->ki", P, c.b)
        + c.q
    )
    return M, r


def solve_eta(sp: StackedProblem, P: RiccatiSolution) -> AdjointSolution:
    """Backward RK4 for ``η`` on the grid of ``P`` with ``η(T) = g``.

    Raises
    ------
    InvalidInputError
        If ``P`` does not cover the horizon.
    NumericOverflowError
        If ``η`` becomes non-finite.
    """
    if not P.complete:
        raise InvalidInputError(f"Riccati solution stops at s={P.blowup}; it must cover the horizon")
    grid = P.grid
    fine = _interleave(grid)
    Pf = np.empty((fine.size, P.n, P.n))
    Pf[::2] = P.values
    Pf[1::2] = P.midpoint_values()
    with np.errstate(all="ignore"):
        M, r = _linear_form(sp.coefficients(fine), Pf)
    K = grid.size - 1
    eta = np.empty((K + 1, sp.n))
    y = np.array(sp.g, dtype=float)
    eta[K] = y
    dot = np.dot
    with np.errstate(all="ignore"):
        for k in range(K - 1, -1, -1):
            h = grid[k + 1] - grid[k]
            j = 2 * k
            k1 = dot(M[j + 2], y) + r[j + 2]
            k2 = dot(M[j + 1], y - 0.5 * h * k1) + r[j + 1]
            k3 = dot(M[j + 1], y - 0.5 * h * k2) + r[j + 1]
            k4 = dot(M[j], y - h * k3) + r[j]
            y = y - (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.isfinite(y).all():
                raise NumericOverflowError("adjoint equation produced non-finite values", time=float(grid[k]))
            eta[k] = y
    return AdjointSolution(grid=grid.copy(), eta=eta, zeta=np.zeros_like(eta))


def _affine_terms(c: Coefficients, P: np.ndarray, eta: np.ndarray, zeta: np.ndarray):
    """``(R̂, w, v)`` with ``w = Bᵀη + Dᵀζ + DᵀPσ + ρ`` and ``v = −R̂†w``."""
    ft = feedback_terms(c, P)
    Dt = np.swapaxes(c.D, 1, 2)
    Psig = np.einsum("kij,kj->ki", P, c.sigma)
    w = (
        np.einsum("kji,kj->ki", c.B, eta)
        + np.einsum("kij,kj->ki", Dt, zeta + Psig)
        + c.rho
    )
    v = -sym_pinv_apply_batch(ft.Rhat, w[..., None])[..., 0]
    return ft, w, v


def _check_same_grid(P: RiccatiSolution, adj: AdjointSolution):
    if P.grid.shape != adj.grid.shape or not np.array_equal(P.grid, adj.grid):
        raise InvalidInputError("adjoint solution and Riccati solution use different grids")


def check_eta_conditions(
    sp: StackedProblem,
    P: RiccatiSolution,
    adj: AdjointSolution,
    tol_range: float = DEFAULT_RANGE_TOL,
    detail: bool = False,
):
    """Range inclusion of ``w`` in ``range(R̂)`` at every node, and the L² test of ``R̂†w``.

    Returns ``(eta_range_ok, v_l2_ok)``; with ``detail=True`` the second item
    is the full ``L2Verdict``.
    """
    _check_same_grid(P, adj)
    c = sp.coefficients(P.grid)
    with np.errstate(all="ignore"):
        ft, w, _ = _affine_terms(c, P.values, adj.eta, adj.zeta)
    range_ok = bool(np.all(range_inclusion_batch(w[..., None], ft.Rhat, tol_range)))

    def v_sq(times):
        cc = sp.coefficients(times)
        eta, zeta = adj.evaluate_many(times)
        with np.errstate(all="ignore"):
            _, _, v = _affine_terms(cc, P.evaluate_many(times), eta, zeta)
        return np.sum(v * v, axis=1)

    verdict: L2Verdict = l2_ladder(P.grid, ft.sigma_nonzero, ft.rank, v_sq)
    return (range_ok, verdict) if detail else (range_ok, verdict.ok)


def value_integrand(sp: StackedProblem, P: RiccatiSolution, adj: AdjointSolution, times) -> np.ndarray:
    """``⟨Pσ,σ⟩ + 2⟨η,b⟩ + 2⟨ζ,σ⟩ − ⟨R̂†w, w⟩`` at ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    c = sp.coefficients(times)
    Pv = P.evaluate_many(times)
    eta, zeta = adj.evaluate_many(times)
    with np.errstate(all="ignore"):
        _, w, v = _affine_terms(c, Pv, eta, zeta)
    Psig = np.einsum("kij,kj->ki", Pv, c.sigma)
    return (
        np.sum(Psig * c.sigma, axis=1)
        + 2 * np.sum(eta * c.b, axis=1)
        + 2 * np.sum(zeta * c.sigma, axis=1)
        + np.sum(v * w, axis=1)
    )


def value_at(sp: StackedProblem, P: RiccatiSolution, adj: AdjointSolution, t: float, x) -> float:
    """Value ``V(t, x)`` via the Riccati/adjoint representation.

    The time integral uses the composite trapezoid rule on the solution grid
    (plus ``t`` itself when it falls between nodes).
    """
    _check_same_grid(P, adj)
    grid = P.grid
    t = float(t)
    if not math.isfinite(t) or t < grid[0] or t > grid[-1]:
        raise InvalidInputError(f"t={t} is outside the horizon [{grid[0]}, {grid[-1]}]")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (sp.n,):
        raise InvalidInputError(f"x must have length {sp.n}")
    Pt = P.evaluate(t)
    eta_t = adj.evaluate_many([t])[0][0]
    nodes = np.concatenate([[t], grid[grid > t]])
    integral = float(trapezoid(value_integrand(sp, P, adj, nodes), nodes)) if nodes.size > 1 else 0.0
    return 0.5 * (float(x @ Pt @ x) + 2.0 * float(eta_t @ x) + integral)


def eta_to_csv(adj: AdjointSolution, path: str | Path) -> None:
    """Columns ``s, eta_1, ..., eta_n``."""
    header = ",".join(["s"] + [f"eta_{i + 1}" for i in range(adj.n)])
    np.savetxt(path, np.column_stack([adj.grid, adj.eta]), delimiter=",", header=header, comments="", fmt="%.17g")
