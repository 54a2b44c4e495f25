"""Guarded linear algebra helpers.

All inverse-times-matrix products go through an LU factorization with
partial pivoting, after a condition number check.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

COND_LIMIT = 1e12


def condition_number(a) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 1.0
    if not np.all(np.isfinite(a)):
        return np.inf
    return float(np.linalg.cond(a))


class Factor:
    """LU factorization of a square matrix with a condition guard.

    Parameters
    ----------
    a : ndarray, shape (k, k)
        Matrix to factor.
    error : type
        Exception class raised when ``cond(a) > COND_LIMIT``.
    what : str
        Name used in the error message.
    """

    def __init__(self, a, error=np.linalg.LinAlgError, what="matrix"):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"{what} must be square, got {a.shape}")
        self.shape = a.shape
        self.cond = condition_number(a)
        if not np.isfinite(self.cond) or self.cond > COND_LIMIT:
            raise error(f"{what} is singular (condition number {self.cond:.3g})")
        self._empty = a.shape[0] == 0
        if not self._empty:
            self._lu = linalg.lu_factor(a, check_finite=False)

    def solve(self, b, trans=0):
        b = np.asarray(b, dtype=float)
        if self._empty:
            return np.zeros_like(b)
        return linalg.lu_solve(self._lu, b, trans=trans, check_finite=False)


class DiagFactor:
    """Diagonal counterpart of :class:`Factor`."""

    def __init__(self, d, error=np.linalg.LinAlgError, what="matrix"):
        d = np.asarray(d, dtype=float)
        self.shape = (d.size, d.size)
        ad = np.abs(d)
        if d.size == 0:
            self.cond = 1.0
        elif not np.all(np.isfinite(d)) or ad.min() == 0:
            self.cond = np.inf
        else:
            self.cond = float(ad.max() / ad.min())
        if not np.isfinite(self.cond) or self.cond > COND_LIMIT:
            raise error(f"{what} is singular (condition number {self.cond:.3g})")
        self._d = d

    def solve(self, b, trans=0):
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            return b / self._d
        return b / self._d[:, None]


def check_spd(a, what="matrix", tol=1e-10):
    """Validate that ``a`` is symmetric positive definite and return it."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} has non-finite entries")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise ValueError(f"{what} is not symmetric")
    if a.size and np.linalg.eigvalsh(a).min() <= 0:
        raise ValueError(f"{what} is not positive definite")
    return a


def centered_cov(x, y=None):
    """Empirical covariance with divisor n: E_n[(x - xbar)(y - ybar)^T]."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    if y is None:
        yc = xc
    else:
        y = np.asarray(y, dtype=float)
        yc = y - y.mean(axis=0)
    return xc.T @ yc / x.shape[0]
