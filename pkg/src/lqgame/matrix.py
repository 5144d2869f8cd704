"""Dense matrix utilities: pseudo-inverse, range inclusion, sign-definiteness.

Everything here works on small real matrices. The general pseudo-inverse goes
through the SVD; the symmetric helpers (used in the inner loops of the Riccati
and adjoint integrators) go through a symmetric eigendecomposition, where the
singular values are the absolute eigenvalues, and fall back to an LU solve
when the matrix has full rank. Both routes use the same rank cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import InvalidInputError

EPS = np.finfo(np.float64).eps

DEFAULT_RANGE_TOL = 1e-9
DEFAULT_SIGN_TOL = 1e-8


@dataclass(frozen=True)
class PinvResult:
    pinv: np.ndarray
    rank: int
    singular_values: np.ndarray
    cutoff: float


def _as_matrix(M, name="M") -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(-1, 1)
    elif A.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def rank_cutoff(sigma_max: float, shape: tuple[int, int], rel_tol: float = 0.0) -> float:
    """Singular values at or below the returned value are treated as zero."""
    if rel_tol < 0:
        raise InvalidInputError("rel_tol must be nonnegative")
    if rel_tol == 0.0:
        return max(shape) * EPS * sigma_max
    return rel_tol * sigma_max


def pseudo_inverse(M, rel_tol: float = 0.0) -> PinvResult:
    """Moore-Penrose pseudo-inverse through the SVD.

    Parameters
    ----------
    M : array_like
        Real matrix with finite entries (scalars and vectors are promoted to
        1x1 and column matrices).
    rel_tol : float
        Relative rank cutoff. ``0`` selects ``max(rows, cols) * eps * sigma_max``.

    Returns
    -------
    PinvResult
        The pseudo-inverse, the numerical rank, the nonincreasing singular
        values and the cutoff that was applied.
    """
    A = _as_matrix(M)
    rows, cols = A.shape
    if A.size == 0:
        return PinvResult(np.zeros((cols, rows)), 0, np.zeros(0), 0.0)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = rank_cutoff(float(s[0]) if s.size else 0.0, A.shape, rel_tol)
    keep = s > cutoff
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    pinv = (Vt.T * inv_s) @ U.T
    return PinvResult(pinv, int(np.count_nonzero(keep)), s, cutoff)


def sym_pinv_solve(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Return ``M^+ N`` for a symmetric ``M`` (no input checking).

    Full-rank ``M`` is handled with an LU solve, which is the same operator
    and keeps exactly representable answers exact.
    """
    m = M.shape[0]
    if m == 0:
        return np.zeros((0,) + N.shape[1:])
    w, V, info = lapack.dsyev(M)
    if info != 0 or not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("symmetric eigendecomposition failed")
    absw = np.abs(w)
    smax = absw.max()
    cutoff = m * EPS * smax
    keep = absw > cutoff
    if keep.all():
        return np.linalg.solve(M, N)
    if not keep.any():
        return np.zeros((m,) + N.shape[1:])
    Vk = V[:, keep]
    return (Vk / w[keep]) @ (Vk.T @ N)


def sym_pinv_batch(M: np.ndarray):
    """Pseudo-inverses of a stack of symmetric matrices.

    Returns ``(pinv, rank, smallest_nonzero, smallest)`` where the last two are
    per-matrix singular-value summaries (``inf`` when there is no nonzero one).
    """
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    k, m, _ = M.shape
    if m == 0:
        return np.zeros_like(M), np.zeros(k, dtype=int), np.full(k, np.inf), np.full(k, np.inf)
    w, V = np.linalg.eigh(M)
    absw = np.abs(w)
    smax = absw.max(axis=1, keepdims=True)
    keep = absw > m * EPS * smax
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    pinv = (V * inv_w[:, None, :]) @ np.swapaxes(V, -1, -2)
    rank = keep.sum(axis=1)
    nonzero = np.where(keep, absw, np.inf).min(axis=1)
    return pinv, rank, nonzero, absw.min(axis=1)


def sym_pinv_apply_batch(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """``M_k^+ N_k`` over a stack, solving exactly where ``M_k`` has full rank."""
    k, m, _ = M.shape
    if m == 0:
        return np.zeros((k, 0) + N.shape[2:])
    pinv, rank, _, _ = sym_pinv_batch(M)
    out = pinv @ N
    full = rank == m
    if full.any():
        out[full] = np.linalg.solve(M[full], N[full])
    return out


def range_inclusion(N, M, tol: float = DEFAULT_RANGE_TOL) -> bool:
    """Test ``range(N) ⊆ range(M)`` via ``||(I - M M^+) N||_max <= tol * max(1, ||N||_max)``."""
    Nm = _as_matrix(N, "N")
    Mm = _as_matrix(M, "M")
    if Nm.shape[0] != Mm.shape[0]:
        raise InvalidInputError(f"row counts differ: N has {Nm.shape[0]}, M has {Mm.shape[0]}")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    if Nm.size == 0:
        return True
    proj = Mm @ pseudo_inverse(Mm).pinv
    resid = Nm - proj @ Nm
    return float(np.max(np.abs(resid))) <= tol * max(1.0, float(np.max(np.abs(Nm))))


def definiteness(M, mode: str = "psd", tol: float = DEFAULT_SIGN_TOL) -> bool:
    """Semidefiniteness test on the symmetrized matrix.

    ``psd`` asks for ``lambda_min >= -tol``; ``nsd`` for ``lambda_max <= tol``.
    Empty matrices pass both tests.
    """
    if mode not in ("psd", "nsd"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    A = _as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"matrix must be square, got {A.shape}")
    if A.size == 0:
        return True
    asym = float(np.max(np.abs(A - A.T)))
    if asym > 1e6 * tol:
        raise InvalidInputError(f"matrix is not symmetric (asymmetry {asym:.3g})")
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    if mode == "psd":
        return bool(w[0] >= -tol)
    return bool(w[-1] <= tol)


def range_inclusion_batch(N: np.ndarray, M: np.ndarray, tol: float = DEFAULT_RANGE_TOL) -> np.ndarray:
    """Nodewise ``range(N_k) ⊆ range(M_k)`` for stacks of symmetric ``M_k``."""
    k = N.shape[0]
    if N.shape[1] == 0 or N.shape[2] == 0:
        return np.ones(k, dtype=bool)
    pinv, _, _, _ = sym_pinv_batch(M)
    resid = N - M @ (pinv @ N)
    scale = np.maximum(1.0, np.abs(N).max(axis=(1, 2)))
    return np.abs(resid).max(axis=(1, 2)) <= tol * scale


def definiteness_batch(M: np.ndarray, mode: str = "psd", tol: float = DEFAULT_SIGN_TOL) -> np.ndarray:
    """Nodewise semidefiniteness of the symmetrized stack ``M``."""
    if mode not in ("psd", "nsd"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    k = M.shape[0]
    if M.shape[1] == 0:
        return np.ones(k, dtype=bool)
    w = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    return w[:, 0] >= -tol if mode == "psd" else w[:, -1] <= tol
