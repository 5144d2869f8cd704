"""Euler–Maruyama simulation and Monte Carlo checks of saddle and stationarity properties.

Every path draws its Brownian increments from its own counter-based stream
(Philox keyed by ``SeedSequence(master_seed, spawn_key=(path_index,))``), so
results do not depend on chunking or on the number of worker threads. Paths
are processed in chunks; per-path payoffs are kept in index order and
aggregated with ``math.fsum``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adjoint import AdjointSolution
from .errors import InvalidInputError, NumericOverflowError, RegularityError
from .problem import MatrixFunction, StackedProblem, assemble, split
from .riccati import RiccatiSolution, check_regularity
from .strategy import ClosedLoopStrategy, adjoint_along_path

SEED_ENV = "LQGAME_SEED"
DEFAULT_PATHS = 10_000
DEFAULT_STEPS = 1_000
CHUNK = 2_048
Z_RULE = 3.0
# relative size below which a mean is treated as rounding noise
ROUNDING_FLOOR = 1e-9


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise InvalidInputError(f"{SEED_ENV}={raw!r} is not an integer") from None


# --------------------------------------------------------------------------
# randomness
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BrownianBatch:
    """Brownian increments for ``n_paths`` paths on ``grid``, generated on demand."""

    master_seed: int
    n_paths: int
    grid: np.ndarray

    def __post_init__(self):
        if not isinstance(self.n_paths, (int, np.integer)) or self.n_paths < 1:
            raise InvalidInputError("n_paths must be a positive integer")
        if not isinstance(self.master_seed, (int, np.integer)) or self.master_seed < 0 or self.master_seed >= 2**64:
            raise InvalidInputError("master_seed must be an integer in [0, 2**64)")
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or not np.all(np.diff(g) > 0):
            raise InvalidInputError("grid must be strictly increasing with at least 2 nodes")
        object.__setattr__(self, "grid", g)

    @classmethod
    def uniform(cls, master_seed: int, n_paths: int, t0: float, T: float, steps: int) -> "BrownianBatch":
        g = t0 + (T - t0) * np.arange(steps + 1) / steps
        g[-1] = T
        return cls(int(master_seed), int(n_paths), g)

    @property
    def steps(self) -> int:
        return self.grid.size - 1

    def path_generator(self, i: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(i),))
        return np.random.Generator(np.random.Philox(ss))

    def increments(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Increments for paths ``start..stop-1``, shape ``(paths, steps)``."""
        stop = self.n_paths if stop is None else stop
        if not 0 <= start <= stop <= self.n_paths:
            raise InvalidInputError("path range out of bounds")
        sd = np.sqrt(np.diff(self.grid))
        out = np.empty((stop - start, self.steps))
        for r, i in enumerate(range(start, stop)):
            out[r] = self.path_generator(i).standard_normal(self.steps)
        out *= sd
        return out

    def describe(self) -> dict:
        return {
            "master_seed": int(self.master_seed),
            "n_paths": int(self.n_paths),
            "t0": float(self.grid[0]),
            "T": float(self.grid[-1]),
            "steps": int(self.steps),
            "stream": "Philox per path, SeedSequence(master_seed, spawn_key=(path,))",
        }


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with standard error ``sd / sqrt(n_paths)`` (``sd`` uses ``n - 1``)."""

    mean: float
    stderr: float
    n_paths: int

    @classmethod
    def from_samples(cls, x) -> "MCEstimate":
        x = np.asarray(x, dtype=float).reshape(-1)
        n = x.size
        if n == 0:
            raise InvalidInputError("no samples")
        mean = math.fsum(x.tolist()) / n
        if n == 1:
            return cls(mean, 0.0, 1)
        var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1)
        return cls(mean, math.sqrt(var / n), n)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths}


@dataclass(frozen=True, eq=False)
class StatePath:
    """One simulated path: states, realized controls and the path index."""

    grid: np.ndarray
    X: np.ndarray
    u: np.ndarray
    path_index: int


@dataclass(frozen=True, eq=False)
class PathBundle:
    """A batch of simulated paths.

    Terminal states and per-path payoffs are always kept; full trajectories
    ``X`` (paths, nodes, n) and ``u`` (paths, nodes, m) only when requested.
    """

    grid: np.ndarray
    X_T: np.ndarray
    payoff: np.ndarray
    X: np.ndarray | None = None
    u: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X_T.shape[0]

    def __getitem__(self, i: int) -> StatePath:
        if self.X is None:
            raise InvalidInputError("trajectories were not stored; simulate with store=True")
        return StatePath(self.grid, self.X[i], self.u[i], int(i))

    def paths(self) -> list[StatePath]:
        return [self[i] for i in range(len(self))]


# --------------------------------------------------------------------------
# Euler–Maruyama engine
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Plan:
    """Closed-loop data on the simulation grid.

    Under ``u = ΘX + v`` the state obeys ``dX = (FX + f)ds + (GX + e)dW`` with
    ``F = A + BΘ``, ``f = Bv + b``, ``G = C + DΘ``, ``e = Dv + σ``, and the
    running cost is ``XᵀMX + 2Xᵀl + c``.
    """

    grid: np.ndarray
    h: np.ndarray
    step: np.ndarray
    f: np.ndarray
    G: np.ndarray
    e: np.ndarray
    M: np.ndarray
    l: np.ndarray
    c: np.ndarray
    GT: np.ndarray
    gT: np.ndarray
    theta: np.ndarray
    v: np.ndarray


def _mv(M, x):
    return np.einsum("kij,kj->ki", M, x)


def _plan(sp: StackedProblem, grid: np.ndarray, theta: np.ndarray, v: np.ndarray) -> _Plan:
    c = sp.coefficients(grid)
    h = np.diff(grid)
    Tt = np.swapaxes(theta, 1, 2)
    F = c.A + c.B @ theta
    n = sp.n
    step = np.swapaxes(np.eye(n) + h[:, None, None] * F[:-1], 1, 2)
    M = c.Q + np.swapaxes(c.S, 1, 2) @ theta + Tt @ c.S + Tt @ c.R @ theta
    l = _mv(np.swapaxes(c.S, 1, 2), v) + _mv(Tt @ c.R, v) + c.q + _mv(Tt, c.rho)
    cc = np.einsum("ki,kij,kj->k", v, c.R, v) + 2.0 * np.sum(c.rho * v, axis=1)
    return _Plan(
        grid=grid, h=h, step=np.ascontiguousarray(step),
        f=np.ascontiguousarray((_mv(c.B, v) + c.b)[:-1] * h[:, None]),
        G=np.ascontiguousarray(np.swapaxes(c.C + c.D @ theta, 1, 2)),
        e=np.ascontiguousarray(_mv(c.D, v) + c.sigma),
        M=_sym3(M), l=l, c=cc,
        GT=np.asarray(sp.G, float), gT=np.asarray(sp.g, float), theta=theta, v=v,
    )


def _sym3(M):
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def _quadratic_cost(M, l, c, h, Xs):
    """Trapezoid integral of ``XᵀMX + 2Xᵀl + c`` along stored paths."""
    L = np.einsum("pkj,pkj->pk", np.einsum("pki,kij->pkj", Xs, M), Xs) + 2.0 * np.einsum("pki,ki->pk", Xs, l) + c
    return 0.5 * ((L[:, 1:] + L[:, :-1]) @ h)


def _terminal_cost(GT, gT, X):
    return np.einsum("pi,ij,pj->p", X, GT, X) + 2.0 * (X @ gT)


def _run_chunk(pl: _Plan, x0: np.ndarray, dW: np.ndarray, store: bool, offset: int):
    npaths, K = dW.shape
    n = x0.size
    Xs = np.empty((npaths, K + 1, n))
    X = np.broadcast_to(x0, (npaths, n)).copy()
    Xs[:, 0] = X
    step, f, G, e = pl.step, pl.f, pl.G, pl.e
    with np.errstate(all="ignore"):
        for k in range(K):
            X = X @ step[k] + f[k] + (X @ G[k] + e[k]) * dW[:, k : k + 1]
            Xs[:, k + 1] = X
        if not np.isfinite(X).all():
            bad_paths = ~np.isfinite(Xs).all(axis=2)
            p = int(np.nonzero(bad_paths.any(axis=1))[0][0])
            k = int(np.nonzero(bad_paths[p])[0][0])
            raise NumericOverflowError("state became non-finite", time=float(pl.grid[k]), path_index=offset + p)
        J = 0.5 * (_terminal_cost(pl.GT, pl.gT, X) + _quadratic_cost(pl.M, pl.l, pl.c, pl.h, Xs))
        if not np.isfinite(J).all():
            p = int(np.nonzero(~np.isfinite(J))[0][0])
            raise NumericOverflowError("payoff became non-finite", time=float(pl.grid[-1]), path_index=offset + p)
    if not store:
        return X, J, None, None
    U = np.einsum("kij,pkj->pki", pl.theta, Xs) + pl.v
    return X, J, Xs, U


def _chunks(n_paths: int, chunk: int):
    return [(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]


def _map_chunks(fn, n_paths: int, threads: int, chunk: int):
    ranges = _chunks(n_paths, max(1, chunk))
    if threads <= 1 or len(ranges) == 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda r: fn(*r), ranges))


def _simulate_plans(
    plans: Sequence[_Plan], x0: np.ndarray, batch: BrownianBatch, store: bool, threads: int, chunk: int
) -> list[PathBundle]:
    """Simulate several plans on the same increments (common random numbers)."""

    if not store:
        # bound the per-chunk state buffer to about 32 MB
        chunk = max(64, min(chunk, (1 << 22) // (batch.grid.size * x0.size)))

    def work(a, b):
        dW = batch.increments(a, b)
        return [_run_chunk(pl, x0, dW, store, a) for pl in plans]

    parts = _map_chunks(work, batch.n_paths, threads, chunk)
    out = []
    for j in range(len(plans)):
        X_T = np.concatenate([p[j][0] for p in parts])
        J = np.concatenate([p[j][1] for p in parts])
        Xs = np.concatenate([p[j][2] for p in parts]) if store else None
        Us = np.concatenate([p[j][3] for p in parts]) if store else None
        out.append(PathBundle(batch.grid, X_T, J, Xs, Us))
    return out


def _check_x0(sp: StackedProblem, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sp.n,) or not np.all(np.isfinite(x0)):
        raise InvalidInputError(f"x0 must be a finite vector of length {sp.n}")
    return x0


def _check_batch(sp: StackedProblem, batch: BrownianBatch):
    span = max(1.0, sp.T - sp.t0)
    if abs(batch.grid[0] - sp.t0) > 1e-12 * span or abs(batch.grid[-1] - sp.T) > 1e-12 * span:
        raise InvalidInputError("batch grid must span the problem horizon")


def _control_values(u, grid: np.ndarray, m: int) -> np.ndarray:
    """Deterministic control ``u`` (callable, ``MatrixFunction`` or array) on ``grid``."""
    if isinstance(u, MatrixFunction):
        vals = u.evaluate_many(grid).reshape(grid.size, -1)
    elif callable(u):
        vals = np.asarray(u(grid), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None] if m == 1 and vals.size == grid.size else np.broadcast_to(vals, (grid.size, vals.size))
        elif vals.ndim == 0:
            vals = np.full((grid.size, m), float(vals))
    else:
        vals = np.asarray(u, dtype=float)
        if vals.ndim == 1 and vals.size == m:
            vals = np.broadcast_to(vals, (grid.size, m))
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (grid.size, m):
        raise InvalidInputError(f"control must evaluate to shape {(grid.size, m)}, got {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("control has non-finite values")
    return np.ascontiguousarray(vals)


def simulate_closed_loop(
    sp: StackedProblem,
    strategy: ClosedLoopStrategy,
    x0,
    batch: BrownianBatch,
    store: bool = False,
    threads: int = 1,
    chunk: int = CHUNK,
) -> PathBundle:
    """Euler–Maruyama under ``u = ΘX + v``; realized controls are recorded.

    Raises
    ------
    NumericOverflowError
        If a state becomes non-finite (carries path index and time).
    """
    x0 = _check_x0(sp, x0)
    _check_batch(sp, batch)
    if strategy.m != sp.m or strategy.n != sp.n:
        raise InvalidInputError("strategy dimensions do not match the problem")
    theta, v = strategy.on_grid(batch.grid)
    return _simulate_plans([_plan(sp, batch.grid, theta, v)], x0, batch, store, threads, chunk)[0]


def simulate_open_loop(
    sp: StackedProblem,
    u,
    x0,
    batch: BrownianBatch,
    store: bool = False,
    threads: int = 1,
    chunk: int = CHUNK,
) -> PathBundle:
    """Euler–Maruyama under a deterministic control ``u(s)`` (both players stacked)."""
    x0 = _check_x0(sp, x0)
    _check_batch(sp, batch)
    vals = _control_values(u, batch.grid, sp.m)
    theta = np.zeros((batch.grid.size, sp.m, sp.n))
    return _simulate_plans([_plan(sp, batch.grid, theta, vals)], x0, batch, store, threads, chunk)[0]


def path_payoffs(sp: StackedProblem, paths: PathBundle) -> np.ndarray:
    """Per-path payoff, recomputed from stored trajectories when available.

    ``½{⟨GX(T),X(T)⟩ + 2⟨g,X(T)⟩ + ∫⟨QX,X⟩ + 2⟨SX,u⟩ + ⟨Ru,u⟩ + 2⟨q,X⟩ + 2⟨ρ,u⟩}``
    with the trapezoid rule in time.
    """
    if paths.X is None:
        return paths.payoff
    c = sp.coefficients(paths.grid)
    X, u = paths.X, paths.u
    L = (
        np.einsum("pki,kij,pkj->pk", X, c.Q, X)
        + 2.0 * np.einsum("pki,kij,pkj->pk", u, c.S, X)
        + np.einsum("pki,kij,pkj->pk", u, c.R, u)
        + 2.0 * np.einsum("pki,ki->pk", X, c.q)
        + 2.0 * np.einsum("pki,ki->pk", u, c.rho)
    )
    run = 0.5 * ((L[:, 1:] + L[:, :-1]) @ np.diff(paths.grid))
    return 0.5 * (_terminal_cost(np.asarray(sp.G, float), np.asarray(sp.g, float), X[:, -1]) + run)


def estimate_J(sp: StackedProblem, paths: PathBundle) -> MCEstimate:
    """Monte Carlo estimate of the payoff ``J`` over ``paths``."""
    return MCEstimate.from_samples(path_payoffs(sp, paths))


# --------------------------------------------------------------------------
# saddle test
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """Deterministic shift ``delta(s)`` of player ``player``'s affine term ``v``."""

    player: int
    delta: Callable[[np.ndarray], np.ndarray]
    label: str

    @classmethod
    def constant(cls, player: int, value: float, label: str | None = None) -> "Perturbation":
        return cls(player, lambda s, c=float(value): np.full(np.shape(s), c), label or f"const({value:g})")


def _delta_values(pert: Perturbation, grid: np.ndarray, mi: int) -> np.ndarray:
    vals = np.asarray(pert.delta(grid), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    vals = np.broadcast_to(vals, (grid.size, mi))
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError(f"perturbation {pert.label} has non-finite values")
    return vals


@dataclass(frozen=True)
class PerturbationResult:
    player: int
    label: str
    gap: MCEstimate
    predicted: float
    inequality_ok: bool
    prediction_ok: bool

    def to_dict(self) -> dict:
        return {
            "player": self.player,
            "label": self.label,
            "gap": self.gap.to_dict(),
            "predicted": self.predicted,
            "inequality_ok": self.inequality_ok,
            "prediction_ok": self.prediction_ok,
        }


@dataclass(frozen=True)
class SaddleTestReport:
    baseline: MCEstimate
    results: tuple[PerturbationResult, ...]

    @property
    def inequalities_ok(self) -> bool:
        return all(r.inequality_ok for r in self.results)

    @property
    def predictions_ok(self) -> bool:
        return all(r.prediction_ok for r in self.results)

    @property
    def passed(self) -> bool:
        return self.inequalities_ok and self.predictions_ok

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "perturbations": [r.to_dict() for r in self.results],
            "inequalities_ok": self.inequalities_ok,
            "predictions_ok": self.predictions_ok,
            "passed": self.passed,
        }


def saddle_test(
    sp: StackedProblem,
    P: RiccatiSolution,
    adj: AdjointSolution,
    strategy: ClosedLoopStrategy,
    perturbations: Sequence[Perturbation],
    batch: BrownianBatch,
    x0=None,
    threads: int = 1,
    chunk: int = CHUNK,
    regularity=None,
) -> tuple[SaddleTestReport, PathBundle]:
    """Check the saddle inequalities by perturbing ``v`` of one player at a time.

    The other player keeps the saddle feedback. Completion of squares
    predicts the mean gap ``½∫⟨(R_ii + D_iᵀPD_i)δ, δ⟩ds`` (nonnegative for
    player 1, nonpositive for player 2). All runs share the increments of
    ``batch``. Returns the report and the baseline paths.
    """
    rep = regularity if regularity is not None else check_regularity(P, sp, adj)
    if not rep.regular:
        raise RegularityError(list(rep.failed), rep)
    x0 = np.ones(sp.n) if x0 is None else x0
    x0 = _check_x0(sp, x0)
    _check_batch(sp, batch)
    grid = batch.grid
    theta, v = strategy.on_grid(grid)
    Pg = P.evaluate_many(grid)
    c = sp.coefficients(grid)
    Rhat = c.R + np.swapaxes(c.D, 1, 2) @ Pg @ c.D
    s1, s2 = sp.player_slices()
    plans = [_plan(sp, grid, theta, v)]
    predicted = []
    for pert in perturbations:
        if pert.player not in (1, 2) or (pert.player == 2 and sp.m2 == 0):
            raise InvalidInputError(f"perturbation {pert.label}: invalid player {pert.player}")
        sl = s1 if pert.player == 1 else s2
        d = _delta_values(pert, grid, sl.stop - sl.start)
        vv = v.copy()
        vv[:, sl] += d
        plans.append(_plan(sp, grid, theta, vv))
        block = Rhat[:, sl, sl]
        integrand = np.einsum("ki,kij,kj->k", d, block, d)
        predicted.append(0.5 * float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(grid))))
    bundles = _simulate_plans(plans, x0, batch, False, threads, chunk)
    base = bundles[0]
    results = []
    base_est = MCEstimate.from_samples(base.payoff)
    for pert, bundle, pred in zip(perturbations, bundles[1:], predicted):
        gap = MCEstimate.from_samples(bundle.payoff - base.payoff)
        slack = max(Z_RULE * gap.stderr, ROUNDING_FLOOR * max(1.0, abs(base_est.mean), abs(pred)))
        ineq = gap.mean >= -slack if pert.player == 1 else gap.mean <= slack
        match = abs(gap.mean - pred) <= slack
        results.append(PerturbationResult(pert.player, pert.label, gap, pred, bool(ineq), bool(match)))
    return SaddleTestReport(base_est, tuple(results)), base


# --------------------------------------------------------------------------
# stationarity, convexity and divergence probes
# --------------------------------------------------------------------------


def stationarity_terms(sp: StackedProblem, P, adj, strategy, paths: PathBundle) -> np.ndarray:
    """``BᵀY + DᵀZ + SX + Ru + ρ`` along stored paths, shape ``(paths, nodes, m)``."""
    ap = adjoint_along_path(sp, P, adj, paths, strategy)
    c = sp.coefficients(ap.grid)
    return (
        np.einsum("kji,pkj->pki", c.B, ap.Y)
        + np.einsum("kji,pkj->pki", c.D, ap.Z)
        + np.einsum("kij,pkj->pki", c.S, ap.X)
        + np.einsum("kij,pkj->pki", c.R, ap.u)
        + c.rho
    )


def stationarity_residual(sp: StackedProblem, P, adj, strategy, paths: PathBundle) -> float:
    """Max over nodes of the path-mean Euclidean norm of the stationarity expression."""
    r = stationarity_terms(sp, P, adj, strategy, paths)
    return float(np.max(np.mean(np.linalg.norm(r, axis=2), axis=0)))


def stationarity_probe(
    sp: StackedProblem,
    P,
    adj,
    strategy: ClosedLoopStrategy,
    x0,
    batch: BrownianBatch,
    threads: int = 1,
    chunk: int = 256,
) -> float:
    """``stationarity_residual`` for paths simulated under ``strategy``,
    streamed in chunks so full trajectories are never held for the whole batch."""
    x0 = _check_x0(sp, x0)
    _check_batch(sp, batch)
    theta, v = strategy.on_grid(batch.grid)
    strat = ClosedLoopStrategy(batch.grid, theta, v, strategy.m1, strategy.m2, strategy.source)
    pl = _plan(sp, batch.grid, theta, v)

    def work(a, b):
        X_T, J, Xs, Us = _run_chunk(pl, x0, batch.increments(a, b), True, a)
        r = stationarity_terms(sp, P, adj, strat, PathBundle(batch.grid, X_T, J, Xs, Us))
        return np.linalg.norm(r, axis=2)

    parts = _map_chunks(work, batch.n_paths, threads, chunk)
    norms = np.concatenate(parts)
    mean = np.array([math.fsum(col) for col in norms.T.tolist()]) / norms.shape[0]
    return float(np.max(mean))


def homogeneous(sp: StackedProblem) -> StackedProblem:
    """Same game with ``b, σ, q, ρ, g`` set to zero."""
    p = split(sp)
    zero = {k: MatrixFunction.zeros(*getattr(p, k).shape) for k in ("b", "sigma", "q", "rho1", "rho2")}
    return assemble(replace(p, g=np.zeros(p.n), **zero))


@dataclass(frozen=True)
class ConvexityResult:
    """``value`` carries the ½ of the payoff; ``value_raw`` omits it."""

    label: str
    value: MCEstimate
    value_raw: MCEstimate
    violated: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "value": self.value.to_dict(),
            "value_raw": self.value_raw.to_dict(),
            "violated": self.violated,
        }


def convexity_probe(
    sp: StackedProblem,
    player: int,
    sample_controls: Sequence[tuple[str, Callable]],
    batch: BrownianBatch,
    threads: int = 1,
    chunk: int = CHUNK,
) -> list[ConvexityResult]:
    """Sign of the quadratic form along the variational system of one player.

    For each control ``u_i`` the state starts at 0 with zero ``b`` and ``σ``
    and the other player idle. ``value_raw`` estimates
    ``(−1)^{i−1} E{⟨GX(T),X(T)⟩ + ∫⟨QX,X⟩ + 2⟨S_iX,u_i⟩ + ⟨R_ii u_i,u_i⟩}``
    and ``value`` is half of it (the payoff normalization). A control is a
    violation when the estimate is below ``−3`` standard errors and below
    ``−ROUNDING_FLOOR`` times the payoff scale.
    """
    if player not in (1, 2) or (player == 2 and sp.m2 == 0):
        raise InvalidInputError(f"invalid player {player}")
    hs = homogeneous(sp)
    _check_batch(sp, batch)
    grid = batch.grid
    sl = hs.player_slices()[player - 1]
    mi = sl.stop - sl.start
    theta = np.zeros((grid.size, hs.m, hs.n))
    plans = []
    for _, u in sample_controls:
        vals = np.zeros((grid.size, hs.m))
        vals[:, sl] = _control_values(u, grid, mi)
        plans.append(_plan(hs, grid, theta, vals))
    bundles = _simulate_plans(plans, np.zeros(hs.n), batch, False, threads, chunk)
    sign = 1.0 if player == 1 else -1.0
    out = []
    for (label, _), b in zip(sample_controls, bundles):
        half = MCEstimate.from_samples(sign * b.payoff)
        raw = MCEstimate(2 * half.mean, 2 * half.stderr, half.n_paths)
        floor = ROUNDING_FLOOR * max(1.0, float(np.mean(np.abs(b.payoff))))
        out.append(ConvexityResult(label, half, raw, bool(half.mean < -max(Z_RULE * half.stderr, floor))))
    return out


@dataclass(frozen=True)
class QuadraticFit:
    """``J(λ) ≈ aλ² + bλ + c`` with per-coefficient standard errors."""

    a: MCEstimate
    b: MCEstimate
    c: MCEstimate
    lambdas: tuple[float, ...]
    J: tuple[MCEstimate, ...]

    @property
    def verdict(self) -> str:
        # rounding floor so an exactly flat payoff is not read as curvature
        lam2 = max(1.0, max(l * l for l in self.lambdas))
        floor = ROUNDING_FLOOR * max(1.0, max(abs(j.mean) for j in self.J)) / lam2
        slack = max(Z_RULE * self.a.stderr, floor)
        if self.a.mean > slack:
            return "+inf"
        if self.a.mean < -slack:
            return "-inf"
        return "bounded"

    def to_dict(self) -> dict:
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "c": self.c.to_dict(),
            "lambdas": list(self.lambdas),
            "J": [j.to_dict() for j in self.J],
            "verdict": self.verdict,
        }


def divergence_probe(
    sp: StackedProblem,
    family: Callable[[float], Callable],
    lambdas: Sequence[float],
    x0,
    batch: BrownianBatch,
    threads: int = 1,
    chunk: int = CHUNK,
) -> QuadraticFit:
    """Least-squares quadratic fit of ``J`` along an open-loop control family.

    ``family(λ)`` returns a deterministic stacked control. All ``λ`` share
    the increments of ``batch``; fitting is done per path so each coefficient
    has its own standard error. ``verdict`` is ``+inf`` when the leading
    coefficient is positive beyond 3 standard errors and the rounding floor.
    """
    lam = np.asarray(list(lambdas), dtype=float)
    if lam.ndim != 1 or np.unique(lam).size < 3:
        raise InvalidInputError("need at least 3 distinct lambda values for a quadratic fit")
    x0 = _check_x0(sp, x0)
    _check_batch(sp, batch)
    grid = batch.grid
    theta = np.zeros((grid.size, sp.m, sp.n))
    plans = [_plan(sp, grid, theta, _control_values(family(float(l)), grid, sp.m)) for l in lam]
    bundles = _simulate_plans(plans, x0, batch, False, threads, chunk)
    Jm = np.stack([b.payoff for b in bundles], axis=1)
    V = np.stack([lam**2, lam, np.ones_like(lam)], axis=1)
    coef = Jm @ np.linalg.pinv(V).T
    return QuadraticFit(
        a=MCEstimate.from_samples(coef[:, 0]),
        b=MCEstimate.from_samples(coef[:, 1]),
        c=MCEstimate.from_samples(coef[:, 2]),
        lambdas=tuple(float(l) for l in lam),
        J=tuple(MCEstimate.from_samples(b.payoff) for b in bundles),
    )


def paths_to_csv(paths: PathBundle, path: str | Path) -> None:
    """Per-path terminal state and payoff: ``path, X_T_1..X_T_n, J``."""
    n = paths.X_T.shape[1]
    header = ",".join(["path"] + [f"X_T_{i + 1}" for i in range(n)] + ["J"])
    idx = np.arange(len(paths))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in idx:
            row = [str(int(i))] + [repr(float(x)) for x in paths.X_T[i]] + [repr(float(paths.payoff[i]))]
            fh.write(",".join(row) + "\n")
