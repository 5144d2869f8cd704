"""Game data model: time-dependent coefficients, validation and block stacking.

Coefficients are deterministic functions of time. Each matrix entry is either
a rational function of ``s`` (``ScalarExpr``) or the whole matrix is sampled on
a time grid and linearly interpolated. Player-1 blocks always come before
player-2 blocks in stacked objects.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from .errors import InvalidInputError, ParseError, ValidationError

log = logging.getLogger(__name__)

ROOT_SAMPLES = 10_001
CHECK_SAMPLES = 201
BOUND_CAP = 1e12
SYM_TOL = 1e-10


def _trim(c) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(c, dtype=float))
    if arr.size == 0:
        return (0.0,)
    nz = np.nonzero(arr)[0]
    if nz.size == 0:
        return (0.0,)
    return tuple(float(v) for v in arr[: nz[-1] + 1])


# --------------------------------------------------------------------------
# scalar rational functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarExpr:
    """Rational function ``num(s) / den(s)``; coefficients in ascending degree."""

    num: tuple[float, ...] = (0.0,)
    den: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        num, den = _trim(self.num), _trim(self.den)
        if not all(math.isfinite(v) for v in num + den):
            raise InvalidInputError("polynomial coefficients must be finite")
        if den == (0.0,):
            raise InvalidInputError("denominator is the zero polynomial")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def const(cls, c: float) -> "ScalarExpr":
        return cls((float(c),), (1.0,))

    @classmethod
    def poly(cls, coeffs: Sequence[float]) -> "ScalarExpr":
        return cls(tuple(coeffs), (1.0,))

    @staticmethod
    def _lift(other) -> "ScalarExpr":
        if isinstance(other, ScalarExpr):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return ScalarExpr.const(float(other))
        return NotImplemented

    @property
    def is_constant(self) -> bool:
        return len(self.num) == 1 and len(self.den) == 1

    @property
    def is_polynomial(self) -> bool:
        return len(self.den) == 1

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_constant:
            return np.full(s.shape, self.num[0] / self.den[0]) if s.ndim else self.num[0] / self.den[0]
        return npoly.polyval(s, self.num) / npoly.polyval(s, self.den)

    def __add__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        if self.den == o.den:
            return ScalarExpr(npoly.polyadd(self.num, o.num), self.den)
        return ScalarExpr(
            npoly.polyadd(npoly.polymul(self.num, o.den), npoly.polymul(o.num, self.den)),
            npoly.polymul(self.den, o.den),
        )

    __radd__ = __add__

    def __neg__(self):
        return ScalarExpr(tuple(-v for v in self.num), self.den)

    def __sub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return self + (-o)

    def __rsub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return o + (-self)

    def __mul__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return ScalarExpr(npoly.polymul(self.num, o.num), npoly.polymul(self.den, o.den))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        if o.num == (0.0,):
            raise InvalidInputError("division by the zero function")
        return ScalarExpr(npoly.polymul(self.num, o.den), npoly.polymul(self.den, o.num))

    def __rtruediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return o / self

    def derivative(self) -> "ScalarExpr":
        dn = npoly.polyder(self.num) if len(self.num) > 1 else [0.0]
        if self.is_polynomial:
            return ScalarExpr(tuple(np.asarray(dn) / self.den[0]), (1.0,))
        dd = npoly.polyder(self.den)
        top = npoly.polysub(npoly.polymul(dn, self.den), npoly.polymul(self.num, dd))
        return ScalarExpr(top, npoly.polymul(self.den, self.den))

    def denominator_roots(self, t0: float, T: float, samples: int = ROOT_SAMPLES) -> list[float]:
        """Locations in ``[t0, T]`` where the denominator vanishes.

        Dense sampling finds sign changes, each refined by bisection; roots of
        even multiplicity are caught from the polynomial's own roots.
        """
        if len(self.den) == 1:
            return []
        s = np.linspace(t0, T, samples)
        d = npoly.polyval(s, self.den)
        found: list[float] = []
        scale = float(np.max(np.abs(d)))
        for k in np.nonzero(d == 0.0)[0]:
            found.append(float(s[k]))
        for k in np.nonzero(d[:-1] * d[1:] < 0)[0]:
            found.append(float(brentq(lambda x: npoly.polyval(x, self.den), s[k], s[k + 1])))
        for r in np.roots(self.den[::-1]):
            if abs(r.imag) <= 1e-9 * (1 + abs(r.real)) and t0 <= r.real <= T:
                if abs(npoly.polyval(r.real, self.den)) <= 1e-9 * max(scale, 1.0):
                    found.append(float(r.real))
        found.sort()
        merged: list[float] = []
        for r in found:
            if not merged or abs(r - merged[-1]) > 1e-9 * max(1.0, abs(T - t0)):
                merged.append(r)
        return merged

    def to_json(self) -> dict:
        return {"num": list(self.num), "den": list(self.den)}


# --------------------------------------------------------------------------
# matrix-valued functions of time
# --------------------------------------------------------------------------


class MatrixFunction:
    """Matrix-valued function of time.

    Three representations share one interface:

    * ``rational``: a rows x cols grid of ``ScalarExpr``;
    * ``grid``: samples on increasing times with linear interpolation;
    * ``blocks``: a block matrix of other ``MatrixFunction`` objects, used for
      stacked player blocks so that splitting returns the originals.
    """

    __slots__ = ("kind", "shape", "entries", "times", "values", "parts")

    def __init__(self, kind, shape, entries=None, times=None, values=None, parts=None):
        self.kind = kind
        self.shape = (int(shape[0]), int(shape[1]))
        self.entries = entries
        self.times = times
        self.values = values
        self.parts = parts

    # constructors ---------------------------------------------------------

    @classmethod
    def rational(cls, entries) -> "MatrixFunction":
        rows = [tuple(e if isinstance(e, ScalarExpr) else ScalarExpr.const(e) for e in row) for row in entries]
        if rows and len({len(r) for r in rows}) != 1:
            raise InvalidInputError("ragged matrix")
        shape = (len(rows), len(rows[0]) if rows else 0)
        return cls("rational", shape, entries=tuple(rows))

    @classmethod
    def const(cls, M) -> "MatrixFunction":
        A = np.asarray(M, dtype=float)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        if A.ndim != 2:
            raise InvalidInputError(f"constant matrix must be 2-D, got shape {A.shape}")
        if A.size == 0:
            return cls.zeros(*A.shape)
        return cls.rational([[ScalarExpr.const(v) for v in row] for row in A])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatrixFunction":
        if rows == 0 or cols == 0:
            return cls("rational", (rows, cols), entries=tuple(() for _ in range(rows)))
        return cls.const(np.zeros((rows, cols)))

    @classmethod
    def scalar(cls, e: ScalarExpr | float) -> "MatrixFunction":
        return cls.rational([[e]])

    @classmethod
    def sampled(cls, times, values) -> "MatrixFunction":
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidInputError("sampled function needs at least 2 times")
        if not np.all(np.diff(t) > 0):
            raise InvalidInputError("sample times must be strictly increasing")
        if v.ndim != 3 or v.shape[0] != t.size:
            raise InvalidInputError(f"values must have shape (len(times), rows, cols), got {v.shape}")
        t.setflags(write=False)
        v = v.copy()
        v.setflags(write=False)
        return cls("grid", v.shape[1:], times=t, values=v)

    @classmethod
    def block(cls, parts) -> "MatrixFunction":
        parts = tuple(tuple(row) for row in parts)
        heights = [row[0].shape[0] for row in parts]
        widths = [p.shape[1] for p in parts[0]]
        for i, row in enumerate(parts):
            if len(row) != len(widths):
                raise InvalidInputError("ragged block structure")
            for j, p in enumerate(row):
                if p.shape != (heights[i], widths[j]):
                    raise InvalidInputError("block shapes do not conform")
        return cls("blocks", (sum(heights), sum(widths)), parts=parts)

    # evaluation -----------------------------------------------------------

    @property
    def is_constant(self) -> bool:
        if self.kind == "rational":
            return all(e.is_constant for row in self.entries for e in row)
        if self.kind == "blocks":
            return all(p.is_constant for row in self.parts for p in row)
        return False

    @property
    def span(self) -> tuple[float, float] | None:
        if self.kind == "grid":
            return float(self.times[0]), float(self.times[-1])
        return None

    def evaluate_many(self, s) -> np.ndarray:
        """Values at each time in ``s``; returns shape ``(len(s), rows, cols)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        r, c = self.shape
        if self.kind == "rational":
            out = np.empty((s.size, r, c))
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    out[:, i, j] = e(s)
            return out
        if self.kind == "grid":
            t0, t1 = self.times[0], self.times[-1]
            slack = 1e-12 * max(1.0, t1 - t0)
            if s.size and (s.min() < t0 - slack or s.max() > t1 + slack):
                raise InvalidInputError(f"time outside sampled range [{t0}, {t1}]")
            sc = np.clip(s, t0, t1)
            k = np.clip(np.searchsorted(self.times, sc, side="right") - 1, 0, self.times.size - 2)
            w = ((sc - self.times[k]) / (self.times[k + 1] - self.times[k]))[:, None, None]
            return (1.0 - w) * self.values[k] + w * self.values[k + 1]
        out = np.empty((s.size, r, c))
        i0 = 0
        for row in self.parts:
            j0 = 0
            h = row[0].shape[0]
            for p in row:
                w = p.shape[1]
                if h and w:
                    out[:, i0 : i0 + h, j0 : j0 + w] = p.evaluate_many(s)
                j0 += w
            i0 += h
        return out

    def evaluate(self, s: float) -> np.ndarray:
        return self.evaluate_many([s])[0]

    __call__ = evaluate

    def derivative(self) -> "MatrixFunction | None":
        """Exact derivative for rational and block forms, ``None`` for sampled data."""
        if self.kind == "rational":
            return MatrixFunction("rational", self.shape, entries=tuple(tuple(e.derivative() for e in row) for row in self.entries))
        if self.kind == "blocks":
            parts = [[p.derivative() for p in row] for row in self.parts]
            if any(p is None for row in parts for p in row):
                return None
            return MatrixFunction.block(parts)
        return None

    def scalar_exprs(self):
        if self.kind == "rational":
            yield from (e for row in self.entries for e in row)
        elif self.kind == "blocks":
            for row in self.parts:
                for p in row:
                    yield from p.scalar_exprs()

    def transpose(self) -> "MatrixFunction":
        if self.kind == "rational":
            r, c = self.shape
            return MatrixFunction("rational", (c, r), entries=tuple(tuple(self.entries[i][j] for i in range(r)) for j in range(c)))
        if self.kind == "grid":
            return MatrixFunction.sampled(self.times, np.swapaxes(self.values, 1, 2))
        nr, nc = len(self.parts), len(self.parts[0])
        return MatrixFunction.block([[self.parts[i][j].transpose() for i in range(nr)] for j in range(nc)])

    # comparison -----------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, MatrixFunction):
            return NotImplemented
        if self.kind != other.kind or self.shape != other.shape:
            return False
        if self.kind == "rational":
            return self.entries == other.entries
        if self.kind == "grid":
            return np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values)
        return self.parts == other.parts

    __hash__ = None

    def __repr__(self):
        return f"MatrixFunction(kind={self.kind!r}, shape={self.shape})"

    def to_json(self) -> dict:
        if self.kind == "rational":
            if self.is_constant:
                return {"const": self.evaluate(0.0).tolist()}
            return {"rational": [[e.to_json() for e in row] for row in self.entries]}
        if self.kind == "grid":
            return {"grid": {"times": self.times.tolist(), "values": self.values.tolist()}}
        raise InvalidInputError("block functions are not serialized directly")


# --------------------------------------------------------------------------
# the game
# --------------------------------------------------------------------------

def coefficient_shapes(n: int, m1: int, m2: int) -> dict[str, tuple[int, int]]:
    return {
        "A": (n, n), "B1": (n, m1), "B2": (n, m2), "C": (n, n), "D1": (n, m1), "D2": (n, m2),
        "b": (n, 1), "sigma": (n, 1), "Q": (n, n), "S1": (m1, n), "S2": (m2, n),
        "R11": (m1, m1), "R12": (m1, m2), "R21": (m2, m1), "R22": (m2, m2),
        "q": (n, 1), "rho1": (m1, 1), "rho2": (m2, 1),
    }


DYNAMICS = ("A", "B1", "B2", "C", "D1", "D2")
INHOMOGENEOUS = ("b", "sigma", "q", "rho1", "rho2")
WEIGHTS = ("Q", "S1", "S2", "R11", "R12", "R21", "R22")
COEFFICIENTS = DYNAMICS + ("b", "sigma") + WEIGHTS + ("q", "rho1", "rho2")


@dataclass(frozen=True, eq=False)
class GameProblem:
    """Coefficients and weights of an LQ zero-sum game on ``[t0, T]``.

    Player 1 (control dimension ``m1``) minimizes, player 2 (``m2``, possibly
    zero) maximizes. ``G`` and ``g`` are the terminal weights.
    """

    t0: float
    T: float
    n: int
    m1: int
    m2: int
    A: MatrixFunction
    B1: MatrixFunction
    B2: MatrixFunction
    C: MatrixFunction
    D1: MatrixFunction
    D2: MatrixFunction
    b: MatrixFunction
    sigma: MatrixFunction
    Q: MatrixFunction
    S1: MatrixFunction
    S2: MatrixFunction
    R11: MatrixFunction
    R12: MatrixFunction
    R21: MatrixFunction
    R22: MatrixFunction
    q: MatrixFunction
    rho1: MatrixFunction
    rho2: MatrixFunction
    G: np.ndarray
    g: np.ndarray
    name: str = "problem"

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    def expected_shapes(self) -> dict[str, tuple[int, int]]:
        return coefficient_shapes(self.n, self.m1, self.m2)

    def __eq__(self, other):
        if not isinstance(other, GameProblem):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None

    @property
    def is_homogeneous(self) -> bool:
        """True when b, sigma, q, rho and g all vanish identically."""
        if np.any(self.g != 0):
            return False
        for name in INHOMOGENEOUS:
            f = getattr(self, name)
            if f.shape[0] == 0:
                continue
            if f.kind == "rational":
                if any(e.num != (0.0,) for e in f.scalar_exprs()):
                    return False
            elif np.any(f.evaluate_many(np.linspace(self.t0, self.T, 5)) != 0) or (f.kind == "grid" and np.any(f.values != 0)):
                return False
        return True


def make_problem(
    t0: float,
    T: float,
    n: int,
    m1: int,
    m2: int = 0,
    *,
    G,
    g=None,
    name: str = "problem",
    **coeffs,
) -> GameProblem:
    """Build a ``GameProblem``; omitted coefficients are zero of the right shape.

    Coefficients may be ``MatrixFunction`` objects, constant arrays or scalars.
    """
    unknown = set(coeffs) - set(COEFFICIENTS)
    if unknown:
        raise InvalidInputError(f"unknown coefficient(s): {sorted(unknown)}")
    shapes = coefficient_shapes(n, m1, m2)
    kwargs: dict[str, Any] = {}
    for key in COEFFICIENTS:
        v = coeffs.get(key)
        if v is None:
            kwargs[key] = MatrixFunction.zeros(*shapes[key])
        elif isinstance(v, MatrixFunction):
            kwargs[key] = v
        elif isinstance(v, ScalarExpr):
            kwargs[key] = MatrixFunction.scalar(v)
        else:
            kwargs[key] = MatrixFunction.const(np.asarray(v, dtype=float).reshape(shapes[key]) if np.ndim(v) == 0 else v)
    Gm = np.array(G, dtype=float).reshape(n, n) if np.ndim(G) == 0 else np.array(G, dtype=float)
    gv = np.zeros(n) if g is None else np.array(g, dtype=float).reshape(-1)
    Gm.setflags(write=False)
    gv.setflags(write=False)
    return GameProblem(float(t0), float(T), int(n), int(m1), int(m2), G=Gm, g=gv, name=name, **kwargs)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(p: GameProblem, samples: int = CHECK_SAMPLES, bound: float = BOUND_CAP) -> ValidationReport:
    """Collect every violation of the structural and regularity hypotheses.

    Checks dimensions, shapes, sampled-grid coverage, denominator roots,
    finiteness, symmetry of Q, R11, R22 and G, ``R12^T = R21`` and a size
    bound on D and R samples.
    """
    out: list[Violation] = []
    if not (math.isfinite(p.t0) and math.isfinite(p.T)) or not p.t0 < p.T:
        out.append(Violation("horizon", f"need finite t0 < T, got [{p.t0}, {p.T}]"))
        return ValidationReport(tuple(out))
    if p.n < 1 or p.m1 < 1 or p.m2 < 0:
        out.append(Violation("dims", f"need n >= 1, m1 >= 1, m2 >= 0; got ({p.n}, {p.m1}, {p.m2})"))
        return ValidationReport(tuple(out))

    shapes = p.expected_shapes()
    shape_ok = True
    for key, want in shapes.items():
        f = getattr(p, key)
        if not isinstance(f, MatrixFunction):
            out.append(Violation(key, "not a matrix function"))
            shape_ok = False
        elif f.shape != want:
            out.append(Violation(key, f"shape {f.shape}, expected {want}"))
            shape_ok = False
    if p.G.shape != (p.n, p.n):
        out.append(Violation("G", f"shape {p.G.shape}, expected {(p.n, p.n)}"))
        shape_ok = False
    if p.g.shape != (p.n,):
        out.append(Violation("g", f"shape {p.g.shape}, expected {(p.n,)}"))
        shape_ok = False
    if not shape_ok:
        return ValidationReport(tuple(out))

    span = p.T - p.t0
    grid = np.linspace(p.t0, p.T, samples)
    sample_times = [grid]
    for key in COEFFICIENTS:
        f = getattr(p, key)
        for e in f.scalar_exprs():
            roots = e.denominator_roots(p.t0, p.T)
            if roots:
                out.append(Violation(key, f"denominator vanishes at s={roots[0]:.12g}"))
                break
        for sub in _grid_parts(f):
            a, b = sub.span
            if abs(a - p.t0) > 1e-12 * max(1, span) or abs(b - p.T) > 1e-12 * max(1, span):
                out.append(Violation(key, f"sampled grid spans [{a}, {b}], expected [{p.t0}, {p.T}]"))
            else:
                sample_times.append(sub.times)
    if out:
        return ValidationReport(tuple(out))

    s = np.unique(np.concatenate(sample_times))
    vals = {key: getattr(p, key).evaluate_many(s) for key in COEFFICIENTS}
    for key, v in vals.items():
        if not np.all(np.isfinite(v)):
            k = int(np.argwhere(~np.isfinite(v))[0][0])
            out.append(Violation(key, f"non-finite value at s={s[k]:.12g}"))
    for key in ("D1", "D2", "R11", "R12", "R21", "R22"):
        v = vals[key]
        if v.size and np.all(np.isfinite(v)) and np.max(np.abs(v)) > bound:
            out.append(Violation(key, f"magnitude {np.max(np.abs(v)):.3g} exceeds bound {bound:.3g}"))
    for key in ("Q", "R11", "R22"):
        v = vals[key]
        if v.size and np.all(np.isfinite(v)):
            asym = np.max(np.abs(v - np.swapaxes(v, 1, 2)))
            if asym > SYM_TOL * max(1.0, np.max(np.abs(v))):
                out.append(Violation(key, f"not symmetric (asymmetry {asym:.3g})"))
    r12, r21 = vals["R12"], vals["R21"]
    if r12.size and np.all(np.isfinite(r12)) and np.all(np.isfinite(r21)):
        gap = np.max(np.abs(np.swapaxes(r12, 1, 2) - r21))
        if gap > SYM_TOL * max(1.0, np.max(np.abs(r12))):
            out.append(Violation("R21", f"R12 transpose differs from R21 by {gap:.3g}"))
    if not np.all(np.isfinite(p.G)):
        out.append(Violation("G", "non-finite entries"))
    elif np.max(np.abs(p.G - p.G.T)) > SYM_TOL * max(1.0, np.max(np.abs(p.G))):
        out.append(Violation("G", "not symmetric"))
    if not np.all(np.isfinite(p.g)):
        out.append(Violation("g", "non-finite entries"))
    return ValidationReport(tuple(out))


def _grid_parts(f: MatrixFunction):
    if f.kind == "grid":
        yield f
    elif f.kind == "blocks":
        for row in f.parts:
            for p in row:
                yield from _grid_parts(p)


def require_valid(p: GameProblem) -> None:
    rep = validate(p)
    if not rep.ok:
        raise ValidationError(rep.violations)


# --------------------------------------------------------------------------
# stacked form
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    """All coefficients sampled at ``times``; arrays have a leading time axis."""

    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    rho: np.ndarray

    def at(self, k: int) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name)[k] for f in fields(self) if f.name != "times"}


@dataclass(frozen=True, eq=False)
class StackedProblem:
    """Player blocks concatenated: ``B = (B1 B2)``, ``D = (D1 D2)``,
    ``S = (S1; S2)``, ``R = [[R11, R12], [R21, R22]]``, ``rho = (rho1; rho2)``."""

    problem: GameProblem
    B: MatrixFunction
    D: MatrixFunction
    S: MatrixFunction
    R: MatrixFunction
    rho: MatrixFunction

    @property
    def t0(self) -> float:
        return self.problem.t0

    @property
    def T(self) -> float:
        return self.problem.T

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def m1(self) -> int:
        return self.problem.m1

    @property
    def m2(self) -> int:
        return self.problem.m2

    @property
    def m(self) -> int:
        return self.problem.m

    @property
    def A(self) -> MatrixFunction:
        return self.problem.A

    @property
    def C(self) -> MatrixFunction:
        return self.problem.C

    @property
    def Q(self) -> MatrixFunction:
        return self.problem.Q

    @property
    def b(self) -> MatrixFunction:
        return self.problem.b

    @property
    def sigma(self) -> MatrixFunction:
        return self.problem.sigma

    @property
    def q(self) -> MatrixFunction:
        return self.problem.q

    @property
    def G(self) -> np.ndarray:
        return self.problem.G

    @property
    def g(self) -> np.ndarray:
        return self.problem.g

    @property
    def name(self) -> str:
        return self.problem.name

    def coefficients(self, times) -> Coefficients:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        p = self.problem
        return Coefficients(
            times=t,
            A=p.A.evaluate_many(t), B=self.B.evaluate_many(t), C=p.C.evaluate_many(t), D=self.D.evaluate_many(t),
            b=p.b.evaluate_many(t)[..., 0], sigma=p.sigma.evaluate_many(t)[..., 0],
            Q=p.Q.evaluate_many(t), S=self.S.evaluate_many(t), R=self.R.evaluate_many(t),
            q=p.q.evaluate_many(t)[..., 0], rho=self.rho.evaluate_many(t)[..., 0],
        )

    def player_slices(self) -> tuple[slice, slice]:
        return slice(0, self.m1), slice(self.m1, self.m)

    def __eq__(self, other):
        if not isinstance(other, StackedProblem):
            return NotImplemented
        return (self.problem == other.problem and self.B == other.B and self.D == other.D
                and self.S == other.S and self.R == other.R and self.rho == other.rho)

    __hash__ = None


def assemble(p: GameProblem) -> StackedProblem:
    """Stack player blocks (player 1 first). Raises ``ValidationError`` if ``p`` is invalid."""
    require_valid(p)
    return StackedProblem(
        problem=p,
        B=MatrixFunction.block([[p.B1, p.B2]]),
        D=MatrixFunction.block([[p.D1, p.D2]]),
        S=MatrixFunction.block([[p.S1], [p.S2]]),
        R=MatrixFunction.block([[p.R11, p.R12], [p.R21, p.R22]]),
        rho=MatrixFunction.block([[p.rho1], [p.rho2]]),
    )


def split(sp: StackedProblem) -> GameProblem:
    """Recover the per-player blocks from a stacked problem."""
    (B1, B2), = sp.B.parts
    (D1, D2), = sp.D.parts
    (S1,), (S2,) = sp.S.parts
    (R11, R12), (R21, R22) = sp.R.parts
    (rho1,), (rho2,) = sp.rho.parts
    return replace(sp.problem, B1=B1, B2=B2, D1=D1, D2=D2, S1=S1, S2=S2,
                   R11=R11, R12=R12, R21=R21, R22=R22, rho1=rho1, rho2=rho2)


# --------------------------------------------------------------------------
# built-in problems
# --------------------------------------------------------------------------


def _example_61() -> GameProblem:
    s = ScalarExpr.poly([0.0, 1.0])
    R = 0.5 * s * s * s - s * s
    return make_problem(0.0, 1.0, 1, 1, 0, A=0.0, B1=1.0, C=0.0, D1=1.0,
                        R11=MatrixFunction.scalar(R), G=1.0, name="example-6.1")


def _example_62() -> GameProblem:
    R = ScalarExpr.poly([3.0, -3.0, 1.0])
    A = (1 - 2 * R) / (2 * R * R)
    B = (R - 1) / R
    Q = -1 / R
    return make_problem(0.0, 1.0, 1, 1, 0, A=MatrixFunction.scalar(A), B1=MatrixFunction.scalar(B), C=0.0,
                        D1=1.0, Q=MatrixFunction.scalar(Q), R11=MatrixFunction.scalar(R), G=-1.0,
                        name="example-6.2")


def _example_63() -> GameProblem:
    return make_problem(0.0, 1.0, 1, 1, 1, A=0.0, B1=1.0, B2=-1.0, C=0.0, D1=1.0, D2=-1.0,
                        R11=1.0, R22=-1.0, G=1.0, name="example-6.3")


BUILTINS = {
    "example-6.1": _example_61,
    "example-6.2": _example_62,
    "example-6.3": _example_63,
}


def builtin_problem(name: str) -> GameProblem:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown built-in problem {name!r}; choose from {sorted(BUILTINS)}") from None


# --------------------------------------------------------------------------
# problem documents
# --------------------------------------------------------------------------

REQUIRED = ("A", "B1", "C", "D1", "R11", "G")
REQUIRED_PLAYER2 = ("B2", "D2", "R22")


def _num(x, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ParseError(path, f"expected a number, got {type(x).__name__}")
    if not math.isfinite(x):
        raise ParseError(path, "number must be finite")
    return float(x)


def _int(x, path: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ParseError(path, f"expected an integer, got {type(x).__name__}")
    return x


def _matrix(x, path: str, shape: tuple[int, int]) -> np.ndarray:
    if not isinstance(x, list):
        raise ParseError(path, "expected a list of rows")
    if len(x) != shape[0]:
        raise ParseError(path, f"expected {shape[0]} rows, got {len(x)}")
    rows = []
    for i, row in enumerate(x):
        if not isinstance(row, list):
            raise ParseError(f"{path}[{i}]", "expected a row list")
        if len(row) != shape[1]:
            raise ParseError(f"{path}[{i}]", f"expected {shape[1]} entries, got {len(row)}")
        rows.append([_num(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)])
    return np.array(rows, dtype=float).reshape(shape)


def _poly(x, path: str) -> tuple[float, ...]:
    if not isinstance(x, list) or not x:
        raise ParseError(path, "expected a nonempty coefficient list")
    return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(x))


def _coefficient(doc, path: str, shape: tuple[int, int]) -> MatrixFunction:
    if not isinstance(doc, Mapping):
        raise ParseError(path, "expected an object with one of const, rational, grid")
    keys = set(doc)
    if len(keys) != 1 or not keys <= {"const", "rational", "grid"}:
        raise ParseError(path, f"expected exactly one of const, rational, grid; got {sorted(keys)}")
    if "const" in doc:
        return MatrixFunction.const(_matrix(doc["const"], f"{path}.const", shape)) if shape[0] * shape[1] else MatrixFunction.zeros(*shape)
    if "rational" in doc:
        base = f"{path}.rational"
        x = doc["rational"]
        if not isinstance(x, list) or len(x) != shape[0]:
            raise ParseError(base, f"expected {shape[0]} rows")
        rows = []
        for i, row in enumerate(x):
            if not isinstance(row, list) or len(row) != shape[1]:
                raise ParseError(f"{base}[{i}]", f"expected {shape[1]} entries")
            out = []
            for j, e in enumerate(row):
                ep = f"{base}[{i}][{j}]"
                if not isinstance(e, Mapping) or "num" not in e or not set(e) <= {"num", "den"}:
                    raise ParseError(ep, "expected {num: [...], den: [...]}")
                num = _poly(e["num"], ep + ".num")
                den = _poly(e.get("den", [1.0]), ep + ".den")
                if all(v == 0 for v in den):
                    raise ParseError(ep + ".den", "denominator is identically zero")
                out.append(ScalarExpr(num, den))
            rows.append(out)
        if shape[0] * shape[1] == 0:
            return MatrixFunction.zeros(*shape)
        return MatrixFunction.rational(rows)
    base = f"{path}.grid"
    x = doc["grid"]
    if not isinstance(x, Mapping) or set(x) != {"times", "values"}:
        raise ParseError(base, "expected {times: [...], values: [...]}")
    times = x["times"]
    if not isinstance(times, list) or len(times) < 2:
        raise ParseError(base + ".times", "need at least 2 times")
    t = [_num(v, f"{base}.times[{i}]") for i, v in enumerate(times)]
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ParseError(base + ".times", "times must be strictly increasing")
    vals = x["values"]
    if not isinstance(vals, list) or len(vals) != len(t):
        raise ParseError(base + ".values", f"expected {len(t)} matrices")
    V = np.stack([_matrix(v, f"{base}.values[{k}]", shape) for k, v in enumerate(vals)])
    return MatrixFunction.sampled(t, V)


def parse_problem(doc: Mapping[str, Any], name: str = "problem") -> GameProblem:
    """Turn a decoded problem document into a validated ``GameProblem``."""
    if not isinstance(doc, Mapping):
        raise ParseError("", "problem document must be an object")
    if not doc:
        raise ParseError("", "problem document is empty")
    known = {"name", "horizon", "dims"} | set(COEFFICIENTS) | {"G", "g"}
    extra = sorted(set(doc) - known)
    if extra:
        raise ParseError(extra[0], "unknown field")
    for key in ("horizon", "dims"):
        if key not in doc:
            raise ParseError(key, "required field missing")
    hz = doc["horizon"]
    if not isinstance(hz, Mapping) or set(hz) != {"t0", "T"}:
        raise ParseError("horizon", "expected {t0, T}")
    t0, T = _num(hz["t0"], "horizon.t0"), _num(hz["T"], "horizon.T")
    dims = doc["dims"]
    if not isinstance(dims, Mapping) or not {"n", "m1"} <= set(dims) or not set(dims) <= {"n", "m1", "m2"}:
        raise ParseError("dims", "expected {n, m1, m2}")
    n, m1 = _int(dims["n"], "dims.n"), _int(dims["m1"], "dims.m1")
    m2 = _int(dims.get("m2", 0), "dims.m2")
    if n < 1:
        raise ParseError("dims.n", "must be positive")
    if m1 < 1:
        raise ParseError("dims.m1", "must be positive")
    if m2 < 0:
        raise ParseError("dims.m2", "must be nonnegative")
    required = REQUIRED + (REQUIRED_PLAYER2 if m2 else ())
    for key in required:
        if key not in doc:
            raise ParseError(key, "required field missing")

    shapes = coefficient_shapes(n, m1, m2)
    coeffs = {key: _coefficient(doc[key], key, shapes[key]) for key in COEFFICIENTS if key in doc}

    Gd = doc["G"]
    if not isinstance(Gd, Mapping) or set(Gd) != {"const"}:
        raise ParseError("G", "terminal weight must be {const: [[...]]}")
    G = _matrix(Gd["const"], "G.const", (n, n))
    g = None
    if "g" in doc:
        gd = doc["g"]
        if not isinstance(gd, Mapping) or set(gd) != {"const"}:
            raise ParseError("g", "terminal vector must be {const: [[...]]}")
        g = _matrix(gd["const"], "g.const", (n, 1))[:, 0]
    nm = doc.get("name", name)
    if not isinstance(nm, str):
        raise ParseError("name", "expected a string")
    p = make_problem(t0, T, n, m1, m2, G=G, g=g, name=nm, **coeffs)
    require_valid(p)
    return p


def load_problem(document: str | Mapping[str, Any], name: str = "problem") -> GameProblem:
    """Load a problem from a built-in name, JSON text or an already decoded mapping."""
    if isinstance(document, str):
        key = document.strip()
        if key in BUILTINS:
            return builtin_problem(key)
        if not key:
            raise ParseError("", "problem document is empty")
        try:
            doc = json.loads(key)
        except json.JSONDecodeError as exc:
            raise ParseError("", f"invalid JSON: {exc}") from None
        return parse_problem(doc, name)
    return parse_problem(document, name)


def resolve_problem(source: str) -> GameProblem:
    """Built-in name or path to a problem file."""
    if source in BUILTINS:
        return builtin_problem(source)
    path = Path(source)
    if not path.is_file():
        raise InvalidInputError(f"{source!r} is neither a built-in problem nor a readable file")
    return load_problem(path.read_text(), name=path.stem)


def problem_to_json(p: GameProblem) -> dict:
    """Inverse of ``parse_problem`` for problems without block-composite fields."""
    doc: dict[str, Any] = {
        "name": p.name,
        "horizon": {"t0": p.t0, "T": p.T},
        "dims": {"n": p.n, "m1": p.m1, "m2": p.m2},
    }
    for key in COEFFICIENTS:
        f = getattr(p, key)
        if f.shape[0] * f.shape[1]:
            doc[key] = f.to_json()
    doc["G"] = {"const": p.G.tolist()}
    doc["g"] = {"const": p.g.reshape(-1, 1).tolist()}
    return doc
