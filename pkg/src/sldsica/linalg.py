"""Dense SPD linear algebra with a fixed jitter policy.

All matrices here are small (state dimensions of a few units), dense and
float64.  numpy/LAPACK does the factorizations; this module adds the
symmetry check, the one-shot jitter rule and a loud failure mode.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite

SYM_TOL = 1e-10
JITTER_SCALE = 1e-8


def _check_symmetric(a: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    if np.max(np.abs(a - a.T)) > SYM_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric within tolerance")


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    If the first factorization fails, a single jitter of
    ``1e-8 * trace(a)/dim`` is added to the diagonal and the factorization
    retried once; a second failure raises :class:`NotPositiveDefinite`.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_SCALE * np.trace(a) / a.shape[0]
    try:
        return np.linalg.cholesky(a + jitter * np.eye(a.shape[0]))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "matrix not positive definite (pivot <= 0 after jitter)"
        ) from None


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for SPD ``a`` via its Cholesky factor."""
    low = cholesky(a)
    return scipy.linalg.cho_solve((low, True), np.asarray(b, dtype=np.float64))


def logdet_spd(a: np.ndarray) -> float:
    """log det(a) for SPD ``a``, computed as 2 * sum(log diag L)."""
    low = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(low))))


def inv_spd(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix (symmetrized)."""
    inv = solve_spd(a, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)
