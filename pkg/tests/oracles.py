"""Independent reference computations shared by the tests."""

from __future__ import annotations

import numpy as np


def penrose_ratios(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """The four Penrose residuals, each divided by the norm product of its factors."""
    na = np.linalg.norm(A, 2)
    nx = np.linalg.norm(X, 2)
    if na == 0 or nx == 0:
        return np.array([np.linalg.norm(A @ X @ A - A), np.linalg.norm(X @ A @ X - X), 0.0, 0.0])
    AX, XA = A @ X, X @ A
    return np.array([
        np.linalg.norm(AX @ A - A, 2) / (na * na * nx),
        np.linalg.norm(XA @ X - X, 2) / (nx * nx * na),
        np.linalg.norm(AX - AX.T, 2) / (na * nx),
        np.linalg.norm(XA - XA.T, 2) / (na * nx),
    ])


def random_rank_matrix(rng: np.random.Generator, rows: int, cols: int, rank: int) -> np.ndarray:
    return rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))


def ex62_coefficients(s):
    """Hand-derived coefficients of the second built-in: R = s² − 3s + 3."""
    s = np.asarray(s, dtype=float)
    R = s * s - 3 * s + 3
    return {"A": (1 - 2 * R) / (2 * R * R), "B": (R - 1) / R, "Q": -1 / R, "R": R}


def ex61_R(s):
    s = np.asarray(s, dtype=float)
    return 0.5 * s**3 - s**2
