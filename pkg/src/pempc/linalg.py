"""Deterministic rank and null-space primitives.

Everything downstream (excitation analysis, constraint construction, the
controller's rank watchdog) rests on three queries about a dense matrix: its
numerical rank, a unit left null vector, and its condition number.  They are
centralized here so the whole package shares one tolerance convention and one
deterministic sign convention.

Matrices are plain 2-D ``float64`` arrays.  :func:`as_matrix` is the single
validation gate; all public functions in this package run their array inputs
through it (or through the signal variant in :mod:`pempc.hankel`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Relative singular-value cutoff used when the caller does not choose one.
DEFAULT_RANK_RTOL = 1e-9

# Machine-precision factor: singular values below max(rows, cols) * eps
# times the largest one carry no information, so condition numbers formed
# from them are flagged infinite instead of reported as 1e+16-style noise.
MACHINE_RANK_FACTOR = float(np.finfo(float).eps)


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``values`` to a nonempty finite 2-D float array.

    Raises
    ------
    InvalidInputError
        If the input is not 2-D, has a zero dimension, or contains NaN or
        infinite entries.
    """
    m = np.asarray(values, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.size == 0:
        raise InvalidInputError(f"{name} must be nonempty, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return m


@dataclass(frozen=True)
class RankReport:
    """Outcome of a numerical rank query.

    Attributes
    ----------
    numerical_rank:
        Number of singular values strictly greater than ``tolerance_used``.
    singular_values:
        All ``min(rows, cols)`` singular values in descending order.
    tolerance_used:
        The absolute cutoff that was applied.
    """

    numerical_rank: int
    singular_values: np.ndarray = field(repr=False)
    tolerance_used: float


def numerical_rank(matrix, rel_tol: float = DEFAULT_RANK_RTOL) -> RankReport:
    """Count singular values above ``rel_tol`` times the largest one.

    The cutoff is ``rel_tol * sigma_max``; for an exactly zero matrix
    (``sigma_max == 0``) the cutoff degenerates to ``rel_tol`` itself so the
    reported rank is 0 rather than an accident of comparing against 0.
    """
    m = as_matrix(matrix)
    if not (0.0 < rel_tol < 1.0):
        raise InvalidInputError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    sigma = np.linalg.svd(m, compute_uv=False)
    sigma_max = float(sigma[0]) if sigma.size else 0.0
    tol = rel_tol * sigma_max if sigma_max > 0.0 else rel_tol
    rank = int(np.count_nonzero(sigma > tol))
    return RankReport(numerical_rank=rank, singular_values=sigma, tolerance_used=tol)


def left_null_vector(matrix) -> tuple[np.ndarray, float]:
    """Return a unit vector ``z`` minimizing ``||M^T z||`` and that minimum.

    ``z`` is the left singular vector for the smallest singular value.  When
    the matrix has more rows than columns the row space cannot fill R^rows,
    so the residual is exactly 0.  The sign is fixed deterministically: the
    entry of largest magnitude (lowest index on ties) is made positive, which
    keeps repeated calls bit-identical and hyperplane descriptions stable.
    """
    m = as_matrix(matrix)
    u, sigma, _ = np.linalg.svd(m, full_matrices=True)
    z = u[:, -1].copy()
    rows, cols = m.shape
    sigma_min = 0.0 if rows > cols else float(sigma[-1])
    pivot = int(np.argmax(np.abs(z)))
    if z[pivot] < 0.0:
        z = -z
    return z, sigma_min


def condition_number(matrix) -> float:
    """Spectral condition number of a square matrix.

    Returns ``inf`` when the smallest singular value sits at or below the
    machine-precision noise floor ``max(rows, cols) * eps * sigma_max``,
    which covers singular matrices without manufacturing huge finite ratios
    from rounding noise.
    """
    m = as_matrix(matrix)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(
            f"condition_number needs a square matrix, got shape {m.shape}"
        )
    sigma = np.linalg.svd(m, compute_uv=False)
    largest = float(sigma[0])
    smallest = float(sigma[-1])
    if smallest <= max(m.shape) * MACHINE_RANK_FACTOR * largest:
        return float("inf")
    return largest / smallest
