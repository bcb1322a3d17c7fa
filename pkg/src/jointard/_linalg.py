"""Cholesky helpers with magnitude-adaptive jitter."""

import numpy as np
from scipy import linalg

from .errors import NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-4


def _condition_estimate(a):
    d = np.diag(a)
    lo = np.min(d)
    if lo <= 0:
        return np.inf
    return float(np.max(d) / lo)


def robust_cholesky(a, name="matrix"):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    The plain factorization is tried first. On failure a diagonal jitter of
    ``1e-10 * trace / dim`` is added and escalated by factors of ten up to
    ``1e-4 * trace / dim``.

    Returns
    -------
    chol : ndarray
        Lower-triangular factor.
    jitter : float
        The jitter that was finally added (0.0 when none was needed).
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericalError(
            f"{name} contains non-finite entries", matrix=name, condition=np.inf
        )
    try:
        return linalg.cholesky(a, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    dim = a.shape[0]
    scale = np.trace(a) / dim
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    jitter = JITTER_START * scale
    eye = np.eye(dim)
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            return (
                linalg.cholesky(a + jitter * eye, lower=True, check_finite=False),
                jitter,
            )
        except linalg.LinAlgError:
            jitter *= 10.0
    cond = _condition_estimate(a)
    raise NumericalError(
        f"Cholesky of {name} failed after jitter escalation "
        f"(dim={dim}, diagonal condition estimate {cond:.3e})",
        matrix=name,
        condition=cond,
    )


def chol_solve(chol, b):
    return linalg.cho_solve((chol, True), b, check_finite=False)


def chol_inverse(chol):
    inv = chol_solve(chol, np.eye(chol.shape[0]))
    return 0.5 * (inv + inv.T)


def chol_logdet(chol):
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def row_quad(X, A):
    """Row-wise quadratic forms x_i^T A x_i."""
    return np.sum((X @ A) * X, axis=1)


def col_quad(X, P):
    """Column-wise quadratic forms x_j^T P x_j."""
    return np.sum(X * (P @ X), axis=0)
