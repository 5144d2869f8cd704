"""Game Riccati equation: integration, residual audit and regularity checks.

With the stacked blocks of a ``StackedProblem`` and ``R̂ = R + DᵀPD``,
``N = BᵀP + DᵀPC + S`` the equation reads

    Ṗ + PA + AᵀP + CᵀPC + Q − Nᵀ R̂† N = 0,    P(T) = G,

and the feedback gain is ``Θ = −R̂† N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import lapack

from .errors import InvalidInputError, NumericOverflowError
from .matrix import (
    DEFAULT_RANGE_TOL,
    DEFAULT_SIGN_TOL,
    EPS,
    definiteness_batch,
    range_inclusion_batch,
    sym_pinv_apply_batch,
    sym_pinv_batch,
)
from .problem import Coefficients, MatrixFunction, StackedProblem

log = logging.getLogger(__name__)

BLOWUP_CAP = 1e12
TRUST_TOL = 1e-6
ROUNDOFF = 16 * EPS

LADDER_SIGMA = 1e-6
LADDER_LEVELS = 12
LADDER_TAIL_START = 9
LADDER_MAX_INTEGRAL = 1e8
LADDER_GL_NODES = 16
LADDER_GROWTH_RATIO = 0.99


# --------------------------------------------------------------------------
# pointwise algebra
# --------------------------------------------------------------------------


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _pinv_apply(Rh, N):
    """``Rh^+ N`` for a small symmetric ``Rh``; LU when ``Rh`` has full rank."""
    m = Rh.shape[0]
    if m == 1:
        r = Rh[0, 0]
        return N / r if r != 0.0 else N * 0.0
    w, V, info = lapack.dsyev(Rh)
    if info != 0:
        raise np.linalg.LinAlgError("symmetric eigendecomposition failed")
    wl = w.tolist()
    cut = m * EPS * max(abs(x) for x in wl)
    if all(abs(x) > cut for x in wl):
        _, _, X, info = lapack.dgesv(Rh, N)
        if info == 0:
            return X
    keep = np.abs(w) > cut
    Vk = V[:, keep]
    return np.dot(Vk / w[keep], np.dot(Vk.T, N))


def _rhs_kernel(P, A, B, C, D, Q, S, R, flags=(True, True, True, True)):
    """``dP/ds``; ``flags`` say which of A, C, Q, S are nonzero (skips dead terms)."""
    has_a, has_c, has_q, has_s = flags
    dot = np.dot
    PD = dot(P, D)
    N = dot(B.T, P)
    if has_c:
        N = N + dot(PD.T, C)
    if has_s:
        N = N + S
    X = _pinv_apply(R + dot(D.T, PD), N)
    out = -dot(N.T, X)
    if has_a:
        PA = dot(P, A)
        out = out + PA + PA.T
    if has_c:
        out = out + dot(C.T, dot(P, C))
    if has_q:
        out = out + Q
    return -0.5 * (out + out.T)


def riccati_rhs(s: float, P, sp: StackedProblem) -> np.ndarray:
    """``dP/ds`` at time ``s`` (symmetrized).

    Raises
    ------
    NumericOverflowError
        If any intermediate is not finite.
    """
    P = np.asarray(P, dtype=float).reshape(sp.n, sp.n)
    c = sp.coefficients([s])
    with np.errstate(all="ignore"):
        try:
            out = _rhs_kernel(_sym(P), c.A[0], c.B[0], c.C[0], c.D[0], c.Q[0], c.S[0], _sym(c.R[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericOverflowError(f"Riccati right-hand side failed: {exc}", time=s) from None
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite Riccati right-hand side", time=s)
    return out


@dataclass(frozen=True)
class FeedbackTerms:
    """Batched ``R̂``, ``N`` and ``Θ`` along a time grid."""

    Rhat: np.ndarray
    N: np.ndarray
    Theta: np.ndarray
    rank: np.ndarray
    sigma_nonzero: np.ndarray


def feedback_terms(c: Coefficients, P: np.ndarray) -> FeedbackTerms:
    PD = P @ c.D
    N = np.swapaxes(c.B, 1, 2) @ P + np.swapaxes(PD, 1, 2) @ c.C + c.S
    Rh = _sym(c.R + np.swapaxes(c.D, 1, 2) @ PD)
    _, rank, nonzero, _ = sym_pinv_batch(Rh)
    Theta = -sym_pinv_apply_batch(Rh, N)
    return FeedbackTerms(Rh, N, Theta, rank, nonzero)


def riccati_residual_terms(c: Coefficients, P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """``Ṗ + PA + AᵀP + CᵀPC + Q − NᵀR̂†N`` at each node."""
    ft = feedback_terms(c, P)
    PA = P @ c.A
    CT = np.swapaxes(c.C, 1, 2)
    return dP + PA + np.swapaxes(PA, 1, 2) + CT @ P @ c.C + c.Q + np.swapaxes(ft.N, 1, 2) @ ft.Theta


# --------------------------------------------------------------------------
# solutions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Trajectory ``P(s_k)`` on an increasing grid.

    ``source`` is ``"integrated"`` or ``"supplied"``. A supplied closed form
    keeps its ``function`` and is evaluated exactly between nodes; otherwise
    evaluation interpolates linearly. ``blowup`` is the time at which backward
    integration was aborted (the grid then covers only ``[blowup, T]``).

    ``untrusted_below`` marks where the estimated error amplification of the
    backward integration exceeds ``trust_tol``; nodes at or below it should not
    be relied on. ``log_amplification[k]`` is the integrated logarithmic norm
    of the linearized backward flow from ``T`` down to ``s_k`` and
    ``log_amplification_open`` the same quantity with the gain set to zero.
    """

    grid: np.ndarray
    values: np.ndarray
    source: str
    blowup: float | None = None
    function: MatrixFunction | None = None
    derivatives: np.ndarray | None = None
    steps: int | None = None
    trust_tol: float = TRUST_TOL
    untrusted_below: float | None = None
    log_amplification: np.ndarray | None = None
    log_amplification_open: np.ndarray | None = None
    error_estimate: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def complete(self) -> bool:
        return self.blowup is None

    @property
    def trusted(self) -> bool:
        return self.untrusted_below is None

    def _check_times(self, s: np.ndarray):
        slack = 1e-12 * max(1.0, self.T - self.t0)
        if s.size and (s.min() < self.t0 - slack or s.max() > self.T + slack):
            raise InvalidInputError(f"time outside solution range [{self.t0}, {self.T}]")

    def evaluate_many(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_times(s)
        if self.function is not None:
            return _sym(self.function.evaluate_many(s))
        s = np.clip(s, self.t0, self.T)
        k = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self.grid.size - 2)
        w = ((s - self.grid[k]) / (self.grid[k + 1] - self.grid[k]))[:, None, None]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def evaluate(self, s: float) -> np.ndarray:
        return self.evaluate_many([s])[0]

    def midpoint_values(self) -> np.ndarray:
        """``P`` at interval midpoints.

        Exact for closed forms; cubic Hermite from stored nodal derivatives
        for integrated solutions (keeps fourth-order accuracy for consumers
        running their own RK4 on this grid); linear otherwise.
        """
        mid = 0.5 * (self.grid[:-1] + self.grid[1:])
        if self.function is not None:
            return self.evaluate_many(mid)
        if self.derivatives is not None:
            h = np.diff(self.grid)[:, None, None]
            return 0.5 * (self.values[:-1] + self.values[1:]) + h / 8 * (self.derivatives[:-1] - self.derivatives[1:])
        return 0.5 * (self.values[:-1] + self.values[1:])

    def derivative_many(self, s) -> np.ndarray | None:
        if self.function is None:
            return None
        d = self.function.derivative()
        if d is None:
            return None
        s = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_times(s)
        return _sym(d.evaluate_many(s))

    def symmetry_error(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.abs(self.values - np.swapaxes(self.values, 1, 2))))

    def diagnostics(self) -> dict:
        return {
            "source": self.source,
            "nodes": int(self.grid.size),
            "steps": self.steps,
            "t_start": self.t0,
            "t_end": self.T,
            "blowup": self.blowup,
            "symmetry_error": self.symmetry_error(),
            "trusted": self.trusted,
            "untrusted_below": self.untrusted_below,
            "max_log_amplification": None if self.log_amplification is None else float(np.max(self.log_amplification)),
            "P_start": self.values[0].tolist(),
            "P_end": self.values[-1].tolist(),
        }


def uniform_grid(t0: float, T: float, steps: int) -> np.ndarray:
    g = t0 + (T - t0) * np.arange(steps + 1) / steps
    g[-1] = T
    return g


def integrate_riccati(
    sp: StackedProblem,
    steps: int,
    cap: float = BLOWUP_CAP,
    trust_tol: float = TRUST_TOL,
) -> RiccatiSolution:
    """Classical RK4 backward from ``P(T) = G`` on a uniform grid.

    Stops and records ``blowup`` when ``‖P‖_max`` exceeds ``cap`` or the
    right-hand side fails; the returned values then cover ``[blowup, T]``.
    Also computes the trust diagnostics described on ``RiccatiSolution``.
    """
    if not isinstance(steps, (int, np.integer)) or steps < 2:
        raise InvalidInputError("steps must be an integer >= 2")
    if not cap > 0:
        raise InvalidInputError("cap must be positive")
    K = int(steps)
    n = sp.n
    h = (sp.T - sp.t0) / K
    fine = uniform_grid(sp.t0, sp.T, 2 * K)
    c = sp.coefficients(fine)
    A, B, C, D, Q, S, R = c.A, c.B, c.C, c.D, c.Q, c.S, c.R
    grid = fine[::2]

    values = np.empty((K + 1, n, n))
    derivs = np.empty((K + 1, n, n))
    P = _sym(np.array(sp.G, dtype=float))
    values[K] = P
    blowup = None
    first = K

    flags = tuple(bool(np.any(x != 0)) for x in (A, C, Q, S))
    Rs = _sym(R)
    cols = [list(x) for x in (A, B, C, D, Q, S, Rs)]
    nodes = list(zip(*cols))

    def f(j, X):
        return _rhs_kernel(X, *nodes[j], flags)

    h2, h6 = 0.5 * h, h / 6.0
    with np.errstate(all="ignore"):
        try:
            k1 = f(2 * K, P)
            derivs[K] = k1
            for k in range(K - 1, -1, -1):
                j = 2 * k
                k2 = f(j + 1, P - h2 * k1)
                k3 = f(j + 1, P - h2 * k2)
                k4 = f(j, P - h * k3)
                # stages are exactly symmetric, so Pn is too
                Pn = P - h6 * (k1 + 2.0 * (k2 + k3) + k4)
                if not np.abs(Pn).max() <= cap:
                    blowup = float(grid[k])
                    break
                k1 = f(j, Pn)
                if not np.isfinite(k1).all():
                    blowup = float(grid[k])
                    break
                P = Pn
                values[k] = P
                derivs[k] = k1
                first = k
        except np.linalg.LinAlgError:
            blowup = float(grid[first - 1]) if first > 0 else float(grid[0])
    if blowup is not None:
        log.warning("Riccati integration stopped at s=%.6g (|P| above %.3g or non-finite)", blowup, cap)
    grid, values, derivs = grid[first:], values[first:], derivs[first:]
    trust = _trust_diagnostics(c, 2 * first, grid, values, trust_tol)
    return RiccatiSolution(
        grid=grid, values=values, source="integrated", blowup=blowup, derivatives=derivs,
        steps=K, trust_tol=trust_tol, **trust,
    )


def _log_norm_rate(F: np.ndarray, Gm: np.ndarray) -> np.ndarray:
    """Logarithmic 2-norm of ``δ ↦ δF + Fᵀδ + GᵀδG`` at each node."""
    k, n, _ = F.shape
    eye = np.broadcast_to(np.eye(n), (k, n, n))
    Ft = np.swapaxes(F, 1, 2)
    Gt = np.swapaxes(Gm, 1, 2)

    def kron(X, Y):
        return np.einsum("aij,akl->aikjl", X, Y).reshape(k, n * n, n * n)

    M = kron(Ft, eye) + kron(eye, Ft) + kron(Gt, Gt)
    return np.linalg.eigvalsh(_sym(M))[:, -1]


def _cumulative_from_end(grid: np.ndarray, rate: np.ndarray) -> np.ndarray:
    seg = 0.5 * (rate[1:] + rate[:-1]) * np.diff(grid)
    out = np.zeros(grid.size)
    out[:-1] = np.cumsum(seg[::-1])[::-1]
    return out


def _trust_diagnostics(c: Coefficients, offset: int, grid, values, trust_tol) -> dict:
    if grid.size < 2:
        return {"untrusted_below": float(grid[0]) if grid.size else None}
    idx = slice(offset, None, 2)
    cn = Coefficients(
        times=c.times[idx], A=c.A[idx], B=c.B[idx], C=c.C[idx], D=c.D[idx], b=c.b[idx],
        sigma=c.sigma[idx], Q=c.Q[idx], S=c.S[idx], R=c.R[idx], q=c.q[idx], rho=c.rho[idx],
    )
    with np.errstate(all="ignore"):
        Theta = feedback_terms(cn, values).Theta
        F = cn.A + cn.B @ Theta
        Gm = cn.C + cn.D @ Theta
        L = _cumulative_from_end(grid, _log_norm_rate(F, Gm))
        L0 = _cumulative_from_end(grid, _log_norm_rate(cn.A, cn.C))
    scale = np.log(np.maximum(1.0, np.abs(values).max(axis=(1, 2))))
    # error injected at node j, amplified to node k <= j: eps * |P_j| * exp(L_k - L_j)
    inj = np.maximum.accumulate((scale - L)[::-1])[::-1]
    log_err = math.log(ROUNDOFF) + L + inj
    bad = log_err > np.log(trust_tol) + scale
    untrusted_below = float(grid[np.nonzero(bad)[0].max()]) if bad.any() else None
    return {
        "untrusted_below": untrusted_below,
        "log_amplification": L,
        "log_amplification_open": L0,
        "error_estimate": np.exp(log_err),
    }


def supplied_solution(P: MatrixFunction | Callable | np.ndarray, grid, n: int | None = None) -> RiccatiSolution:
    """Wrap a candidate ``P`` (closed form or samples on ``grid``) as a solution."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or not np.all(np.diff(grid) > 0):
        raise InvalidInputError("grid must be strictly increasing with at least 2 nodes")
    if isinstance(P, MatrixFunction):
        if P.shape[0] != P.shape[1]:
            raise InvalidInputError(f"candidate P must be square, got {P.shape}")
        span = P.span
        if span is not None and (span[0] > grid[0] or span[1] < grid[-1]):
            raise InvalidInputError("candidate samples do not cover the grid")
        vals = _sym(P.evaluate_many(grid))
        return RiccatiSolution(grid=grid, values=vals, source="supplied", function=P)
    vals = np.asarray(P, dtype=float)
    if vals.ndim != 3 or vals.shape[0] != grid.size:
        raise InvalidInputError("sampled candidate must have shape (len(grid), n, n)")
    return RiccatiSolution(grid=grid, values=_sym(vals), source="supplied")


# --------------------------------------------------------------------------
# residual audit
# --------------------------------------------------------------------------


def _fd_derivative(grid: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Finite-difference derivative: five-point stencils on uniform grids
    with at least five nodes, second order otherwise."""
    K = grid.size
    d = np.empty_like(vals)
    h = np.diff(grid)
    if K >= 5 and np.allclose(h, h[0], rtol=1e-9, atol=0):
        hh = h[0]
        d[2:-2] = (vals[:-4] - 8 * vals[1:-3] + 8 * vals[3:-1] - vals[4:]) / (12 * hh)
        f0, f1, f2, f3, f4 = (vals[i] for i in range(5))
        d[0] = (-25 * f0 + 48 * f1 - 36 * f2 + 16 * f3 - 3 * f4) / (12 * hh)
        d[1] = (-3 * f0 - 10 * f1 + 18 * f2 - 6 * f3 + f4) / (12 * hh)
        g0, g1, g2, g3, g4 = (vals[K - 1 - i] for i in range(5))
        d[-1] = (25 * g0 - 48 * g1 + 36 * g2 - 16 * g3 + 3 * g4) / (12 * hh)
        d[-2] = (3 * g0 + 10 * g1 - 18 * g2 + 6 * g3 - g4) / (12 * hh)
        return d
    if K < 3:
        d[:] = (vals[-1] - vals[0]) / (grid[-1] - grid[0])
        return d
    d[1:-1] = np.gradient(vals, grid, axis=0, edge_order=2)[1:-1]
    d[0] = np.gradient(vals[:3], grid[:3], axis=0, edge_order=2)[0]
    d[-1] = np.gradient(vals[-3:], grid[-3:], axis=0, edge_order=2)[-1]
    return d


def residual_verify(P: RiccatiSolution | MatrixFunction, sp: StackedProblem, grid=None) -> float:
    """Max-norm Riccati residual over ``grid``.

    ``Ṗ`` is exact for rational closed forms and comes from finite differences
    on ``grid`` otherwise (central in the interior, one-sided at the ends).
    ``grid`` defaults to the solution's own grid.
    """
    if isinstance(P, MatrixFunction):
        if grid is None:
            raise InvalidInputError("a grid is required for a closed-form candidate")
        P = supplied_solution(P, grid)
    grid = P.grid if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or not np.all(np.diff(grid) > 0):
        raise InvalidInputError("grid must be strictly increasing with at least 2 nodes")
    vals = P.evaluate_many(grid)
    dP = P.derivative_many(grid)
    if dP is None:
        dP = _fd_derivative(grid, vals)
    with np.errstate(all="ignore"):
        res = riccati_residual_terms(sp.coefficients(grid), vals, dP)
    if not np.all(np.isfinite(res)):
        return math.inf
    return float(np.max(np.abs(res)))


# --------------------------------------------------------------------------
# L² ladder
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class L2Verdict:
    """Outcome of the square-integrability test.

    ``status`` is ``"square_integrable"`` or ``"divergent"``; ``method`` says
    which rule decided (``ladder``, ``bound`` or ``trust``).
    """

    status: str
    integral: float
    location: float | None = None
    growth: dict | None = None
    method: str = "ladder"

    @property
    def ok(self) -> bool:
        return self.status == "square_integrable"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "integral": _finite_or_none(self.integral),
            "location": self.location,
            "growth": self.growth,
            "method": self.method,
        }


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _gauss_legendre(a: float, b: float, nodes: int = LADDER_GL_NODES):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def l2_ladder(
    grid: np.ndarray,
    sigma_nonzero: np.ndarray,
    rank: np.ndarray,
    sq_norm: Callable[[np.ndarray], np.ndarray],
    sigma_threshold: float = LADDER_SIGMA,
    levels: int = LADDER_LEVELS,
    max_integral: float = LADDER_MAX_INTEGRAL,
) -> L2Verdict:
    """Decide whether ``∫ sq_norm`` over ``[grid[0], grid[-1]]`` is finite.

    Near-singular points are nodes where the smallest nonzero singular value
    falls below ``sigma_threshold`` or where the rank drops below a neighbour's.
    The integral is computed outside neighbourhoods of radius
    ``ε_j = 2^{-j} ε₀`` of those points, ``j = 0..levels``. The verdict is
    divergent if the integral exceeds ``max_integral`` or, for some point, the
    last shell increment is at least the first increment of the tail
    (after 8 halvings), up to a 1% tolerance so logarithmic divergence counts.
    """
    t0, T = float(grid[0]), float(grid[-1])
    K = grid.size
    low = sigma_nonzero < sigma_threshold
    drop = np.zeros(K, dtype=bool)
    drop[1:] |= rank[1:] < rank[:-1]
    drop[:-1] |= rank[:-1] < rank[1:]
    cand = low | drop
    reps: list[float] = []
    k = 0
    while k < K:
        if not cand[k]:
            k += 1
            continue
        j = k
        while j + 1 < K and cand[j + 1]:
            j += 1
        idx = np.arange(k, j + 1)
        drops = idx[drop[idx]]
        if drops.size:
            r = drops[np.argmin(rank[drops])]
        else:
            r = idx[np.argmin(sigma_nonzero[idx])]
        reps.append(float(grid[r]))
        k = j + 1

    if not reps:
        vals = sq_norm(grid)
        total = float(trapezoid(vals, grid)) if np.all(np.isfinite(vals)) else math.inf
        if total > max_integral:
            return L2Verdict("divergent", total, float(grid[int(np.nanargmax(vals))]), {"rule": "bound"}, "bound")
        return L2Verdict("square_integrable", total)

    span = T - t0
    eps0 = 0.05 * span
    if len(reps) > 1:
        eps0 = min(eps0, 0.5 * float(np.min(np.diff(reps))))
    eps0 = max(eps0, 4 * EPS * max(1.0, abs(T), abs(t0)))
    excl = [(c - eps0, c + eps0) for c in reps]

    pts = np.concatenate([grid, [c - eps0 for c in reps], [c + eps0 for c in reps]])
    pts = np.unique(np.clip(pts, t0, T))
    inside = np.zeros(pts.size, dtype=bool)
    for a, b in excl:
        inside |= (pts > a) & (pts < b)
    pts = pts[~inside]
    vals = sq_norm(pts)
    mids = 0.5 * (pts[1:] + pts[:-1])
    keep = np.ones(mids.size, dtype=bool)
    for a, b in excl:
        keep &= ~((mids > a) & (mids < b))
    seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(pts)
    base = float(np.sum(seg[keep]))
    if not math.isfinite(base):
        return L2Verdict("divergent", math.inf, reps[0], {"rule": "non-finite"}, "bound")

    total = base
    worst = None
    for c in reps:
        incs = []
        for j in range(1, levels + 1):
            e_out, e_in = eps0 * 2.0 ** -(j - 1), eps0 * 2.0 ** -j
            shell = 0.0
            for a, b in ((c + e_in, c + e_out), (c - e_out, c - e_in)):
                a, b = max(a, t0), min(b, T)
                if b > a:
                    x, w = _gauss_legendre(a, b)
                    shell += float(np.dot(w, sq_norm(x)))
            incs.append(shell)
        total += sum(incs)
        first, last = incs[LADDER_TAIL_START - 1], incs[-1]
        ratio = (last / first) ** (1.0 / (levels - LADDER_TAIL_START)) if first > 0 else 0.0
        growth = {
            "increment_ratio": ratio,
            "exponent": 0.5 * (math.log2(ratio) + 1.0) if ratio > 0 else None,
            "last_increment": last,
        }
        grows = first > 0 and last >= LADDER_GROWTH_RATIO * first
        if grows and (worst is None or ratio > worst[1]["increment_ratio"]):
            worst = (c, growth)
    if not math.isfinite(total) or total > max_integral:
        loc = worst[0] if worst else reps[0]
        return L2Verdict("divergent", total, loc, worst[1] if worst else {"rule": "bound"}, "bound")
    if worst is not None:
        return L2Verdict("divergent", total, worst[0], worst[1], "ladder")
    return L2Verdict("square_integrable", total)


# --------------------------------------------------------------------------
# regularity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularityReport:
    """Verdicts for the conditions that make a Riccati solution regular.

    ``eta_range_ok`` and ``v_l2_ok`` are ``None`` when no adjoint solution was
    supplied; ``regular`` is then the conjunction of the remaining verdicts.
    ``trusted`` is false when the backward integration lost accuracy.
    """

    range_nodes: np.ndarray
    range_ok: bool
    theta_l2: L2Verdict
    sign_player1: bool
    sign_player2: bool
    eta_range_ok: bool | None
    v_l2: L2Verdict | None
    complete: bool
    trusted: bool
    untrusted_below: float | None
    failed: tuple[str, ...]
    warnings: tuple[str, ...] = ()

    @property
    def v_l2_ok(self) -> bool | None:
        return None if self.v_l2 is None else self.v_l2.ok

    @property
    def regular(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        bad = np.nonzero(~self.range_nodes)[0]
        return {
            "regular": self.regular,
            "failed": list(self.failed),
            "range_ok": self.range_ok,
            "range_failures": int(bad.size),
            "theta_l2": self.theta_l2.to_dict(),
            "sign_player1": self.sign_player1,
            "sign_player2": self.sign_player2,
            "eta_range_ok": self.eta_range_ok,
            "v_l2_ok": self.v_l2_ok,
            "v_l2": None if self.v_l2 is None else self.v_l2.to_dict(),
            "complete": self.complete,
            "trusted": self.trusted,
            "untrusted_below": self.untrusted_below,
            "warnings": list(self.warnings),
        }


def check_regularity(
    P: RiccatiSolution,
    sp: StackedProblem,
    adj=None,
    tol_range: float = DEFAULT_RANGE_TOL,
    tol_sign: float = DEFAULT_SIGN_TOL,
) -> RegularityReport:
    """Audit range inclusion, square-integrability of ``Θ`` and the sign conditions.

    Integrated solutions that lost trust (see ``RiccatiSolution``) are
    reported with ``theta_l2`` divergent at the trust boundary when the gain
    accounts for most of the amplification, because the amplification of the
    backward flow is controlled by ``∫‖Θ‖²``.
    """
    grid = P.grid
    c = sp.coefficients(grid)
    with np.errstate(all="ignore"):
        ft = feedback_terms(c, P.values)
    range_nodes = range_inclusion_batch(ft.N, ft.Rhat, tol_range)
    s1, s2 = sp.player_slices()
    sign1 = bool(np.all(definiteness_batch(ft.Rhat[:, s1, s1], "psd", tol_sign)))
    sign2 = bool(np.all(definiteness_batch(ft.Rhat[:, s2, s2], "nsd", tol_sign)))

    def theta_sq(times):
        cc = sp.coefficients(times)
        with np.errstate(all="ignore"):
            th = feedback_terms(cc, P.evaluate_many(times)).Theta
        return np.sum(th * th, axis=(1, 2))

    warnings: list[str] = []
    if P.complete:
        theta = l2_ladder(grid, ft.sigma_nonzero, ft.rank, theta_sq)
    else:
        theta = L2Verdict("divergent", math.inf, P.blowup, {"rule": "blowup"}, "bound")
    trusted = P.trusted
    if not trusted and theta.ok:
        k = int(np.searchsorted(grid, P.untrusted_below))
        L = float(P.log_amplification[k])
        L0 = float(P.log_amplification_open[k])
        if L - L0 > 0.5 * L:
            theta = L2Verdict(
                "divergent", theta.integral, P.untrusted_below,
                {"log_amplification": L, "log_amplification_open": L0}, "trust",
            )
        warnings.append(f"backward integration untrusted below s={P.untrusted_below:.6g}")

    eta_range_ok = None
    v_l2 = None
    if adj is None:
        msg = "no adjoint solution supplied; eta range and v square-integrability not checked"
        log.warning(msg)
        warnings.append(msg)
    else:
        from .adjoint import check_eta_conditions

        eta_range_ok, v_l2 = check_eta_conditions(sp, P, adj, tol_range=tol_range, detail=True)

    failed = []
    if not P.complete:
        failed.append("complete")
    if not bool(np.all(range_nodes)):
        failed.append("range")
    if not theta.ok:
        failed.append("theta_l2")
    if not sign1:
        failed.append("sign_player1")
    if not sign2:
        failed.append("sign_player2")
    if eta_range_ok is False:
        failed.append("eta_range")
    if v_l2 is not None and not v_l2.ok:
        failed.append("v_l2")
    if not trusted:
        failed.append("trusted")
    return RegularityReport(
        range_nodes=range_nodes, range_ok=bool(np.all(range_nodes)), theta_l2=theta,
        sign_player1=sign1, sign_player2=sign2, eta_range_ok=eta_range_ok, v_l2=v_l2,
        complete=P.complete, trusted=trusted, untrusted_below=P.untrusted_below,
        failed=tuple(failed), warnings=tuple(warnings),
    )


def compare_regular_solutions(
    Pa: RiccatiSolution,
    Pb: RiccatiSolution,
    sp: StackedProblem,
    reports: tuple[RegularityReport, RegularityReport] | None = None,
) -> float:
    """Max deviation of two regular solutions over the coarser grid.

    Raises
    ------
    InvalidInputError
        Unless both solutions are regular for ``sp``.
    """
    ra, rb = reports if reports is not None else (check_regularity(Pa, sp), check_regularity(Pb, sp))
    if not (ra.regular and rb.regular):
        which = [name for name, r in (("first", ra), ("second", rb)) if not r.regular]
        raise InvalidInputError(f"both solutions must be regular; not regular: {', '.join(which)}")
    grid = Pa.grid if Pa.grid.size <= Pb.grid.size else Pb.grid
    return float(np.max(np.abs(Pa.evaluate_many(grid) - Pb.evaluate_many(grid))))


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def upper_triangle_header(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(n) for j in range(i, n)]


def riccati_to_csv(sol: RiccatiSolution, path: str | Path) -> None:
    """Columns ``s, P_11, P_12, ..., P_nn`` (upper triangle, row-major)."""
    n = sol.n
    iu = np.triu_indices(n)
    data = np.column_stack([sol.grid, sol.values[:, iu[0], iu[1]]])
    header = ",".join(["s"] + upper_triangle_header("P", n))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def riccati_from_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a file written by ``riccati_to_csv``; returns ``(grid, values)``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    tri = data.shape[1] - 1
    n = int(round((math.sqrt(8 * tri + 1) - 1) / 2))
    if n * (n + 1) // 2 != tri:
        raise InvalidInputError(f"{path}: {tri} value columns do not form an upper triangle")
    vals = np.zeros((data.shape[0], n, n))
    iu = np.triu_indices(n)
    vals[:, iu[0], iu[1]] = data[:, 1:]
    vals[:, iu[1], iu[0]] = data[:, 1:]
    return data[:, 0], vals
