"""Linear and logistic regression models with reduced-model constraints.

The external studies are assumed to report slopes from marginal (reduced)
regressions of the response on a single covariate,
``E(Y | Z_k) = pi_k + beta_k Z_k`` or its logistic analogue. Each reduced
model k contributes two constraint rows, the intercept row and the slope
row. Rows are ordered with all intercept rows first, so that the default
g* (the first v rows) is the set of intercept rows and
``pi = (pi_1, ..., pi_K)``, ``beta = (beta_1, ..., beta_K)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ._linalg import Factor
from .exceptions import DataError, DimMismatch, NoConvergence, Separation, SingularDesign
from .interface import (
    ConstraintEval,
    ConstraintSet,
    ModelDerivatives,
    ModelFit,
    SandwichFromInternal,
    SemiparametricModel,
)

__all__ = [
    "LinearModel",
    "LogisticModel",
    "fit_linear",
    "fit_logistic",
    "ReducedModelConstraints",
    "linear_reduced_constraints",
    "logistic_reduced_constraints",
    "reduced_model_sandwich_fn",
    "fit_reduced_models",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _dexpit(u):
    e = expit(u)
    return e * (1.0 - e)


def _check_regression(data):
    if data.is_survival:
        raise DataError("regression models need regression data (no delta)")


class LinearModel(SemiparametricModel):
    """Gaussian linear regression with unit error variance.

    The criterion is the Gaussian log-density
    ``m = -(y - x'theta)^2 / 2 - log(2 pi) / 2`` with ``x = (1, z)``.
    """

    def n_params(self, data):
        return data.d + 1

    def fit(self, data):
        theta = fit_linear(data)[0]
        return ModelFit(theta, None, self.loglik(data, theta), 1)

    def loglik(self, data, theta, eta=None):
        res = data.y - data.design() @ np.asarray(theta, dtype=float)
        return float(-0.5 * np.sum(res ** 2) - 0.5 * data.n * _LOG_2PI)

    def derivatives(self, data, theta, eta=None):
        x = data.design()
        res = data.y - x @ np.asarray(theta, dtype=float)
        return ModelDerivatives(res[:, None] * x, -(x.T @ x) / data.n)


class LogisticModel(SemiparametricModel):
    """Logistic regression for a binary response."""

    def n_params(self, data):
        return data.d + 1

    def fit(self, data):
        theta, info = fit_logistic(data)
        return ModelFit(theta, None, self.loglik(data, theta), info["iterations"])

    def loglik(self, data, theta, eta=None):
        u = data.design() @ np.asarray(theta, dtype=float)
        return float(np.sum(data.y * u - np.logaddexp(0.0, u)))

    def derivatives(self, data, theta, eta=None):
        x = data.design()
        u = x @ np.asarray(theta, dtype=float)
        w = _dexpit(u)
        return ModelDerivatives((data.y - expit(u))[:, None] * x,
                                -(x.T @ (w[:, None] * x)) / data.n)


def fit_linear(data):
    """Least-squares (Gaussian maximum likelihood) fit.

    Returns
    -------
    theta : ndarray, shape (d + 1,)
        Solution of the normal equations.
    model : LinearModel
    """
    _check_regression(data)
    if np.ptp(data.y) == 0:
        raise DataError("response is constant")
    x = data.design()
    fac = Factor(x.T @ x / data.n, SingularDesign, "design matrix")
    theta = fac.solve(x.T @ data.y / data.n)
    return theta, LinearModel()


def fit_logistic(data, tol=1e-8, max_iter=100, bound=50.0):
    """Newton-Raphson logistic regression with step-halving.

    Parameters
    ----------
    data : InternalDataset
        Binary response in ``y``.
    tol : float
        Convergence when the max-norm of the averaged score is below ``tol``.
    max_iter : int
        Iteration cap.
    bound : float
        Separation is declared once ``||theta|| > bound``.

    Returns
    -------
    theta : ndarray
    info : dict
        ``iterations`` and the trace of log-likelihood values.
    """
    _check_regression(data)
    y = data.y
    if not np.all((y == 0) | (y == 1)):
        raise DataError("logistic response must be 0/1")
    if y.min() == y.max():
        raise DataError("both response classes must be present")
    model = LogisticModel()
    x = data.design()
    theta = np.zeros(x.shape[1])
    ll = model.loglik(data, theta)
    trace = [ll]
    for it in range(1, max_iter + 1):
        d = model.derivatives(data, theta)
        score = d.score_rows.mean(axis=0)
        if np.max(np.abs(score)) <= tol:
            return theta, {"iterations": it - 1, "loglik": trace}
        step = Factor(-d.hessian, SingularDesign, "logistic information").solve(score)
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new = model.loglik(data, cand)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
        theta, ll = cand, ll_new
        trace.append(ll)
        if np.linalg.norm(theta) > bound:
            raise Separation("coefficients diverge; the classes appear separable")
    d = model.derivatives(data, theta)
    if np.max(np.abs(d.score_rows.mean(axis=0))) <= tol:
        return theta, {"iterations": max_iter, "loglik": trace}
    raise NoConvergence(f"logistic fit did not converge in {max_iter} iterations")


class ReducedModelConstraints(ConstraintSet):
    """Constraints tying the full regression to reduced single-covariate fits.

    For reduced model k on covariate column ``c_k`` the two rows are

    * linear: ``(x'theta - pi_k - beta_k z_c) * (1, z_c)``
    * logistic: ``(expit(pi_k + beta_k z_c) - expit(x'theta)) * (1, z_c)``

    Parameters
    ----------
    which : sequence of int
        Zero-based covariate columns, one per reduced model.
    family : {"linear", "logistic"}
    p : int, optional
        Length of theta (intercept included); defaults to ``max(which) + 2``.
    """

    def __init__(self, which, family="linear", p=None):
        which = tuple(int(c) for c in which)
        if not which:
            raise DimMismatch("need at least one reduced model")
        if len(set(which)) != len(which) or min(which) < 0:
            raise DimMismatch("reduced-model covariates must be distinct and nonnegative")
        if family not in ("linear", "logistic"):
            raise ValueError("family must be 'linear' or 'logistic'")
        self.which = which
        self.family = family
        k = len(which)
        self.p = int(p) if p is not None else max(which) + 2
        if self.p < max(which) + 2:
            raise DimMismatch("theta too short for the requested covariates")
        self.v = self.r = k
        self.q = 2 * k
        self.g_star_rows = tuple(range(k))
        self._check_dims()

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True):
        theta, pi, beta = self._args(theta, pi, beta)
        x = data.design()
        if x.shape[1] != self.p:
            raise DimMismatch("data dimension does not match theta")
        n, k = data.n, len(self.which)
        zc = data.z[:, list(self.which)]                       # (n, k)
        lin = x @ theta
        a = pi[None, :] + beta[None, :] * zc                   # (n, k)
        if self.family == "linear":
            e = lin[:, None] - a
        else:
            e = expit(a) - expit(lin)[:, None]
        g = np.concatenate([e, e * zc], axis=1)
        if not jacobians:
            return ConstraintEval(g)
        mult = np.concatenate([np.ones((n, k)), zc], axis=1)   # (n, q)
        idx = np.arange(k)
        jp = np.zeros((n, self.q, k))
        jb = np.zeros((n, self.q, k))
        if self.family == "linear":
            jt = mult[:, :, None] * x[:, None, :]
            da = -np.ones((n, k))
        else:
            jt = -(_dexpit(lin)[:, None, None] * mult[:, :, None] * x[:, None, :])
            da = _dexpit(a)
        jp[:, idx, idx] = da
        jp[:, k + idx, idx] = da * zc
        jb[:, idx, idx] = da * zc
        jb[:, k + idx, idx] = da * zc ** 2
        return ConstraintEval(g, jt, jp, jb, None)


def linear_reduced_constraints(which, p=None):
    """Reduced linear-model constraint set; see :class:`ReducedModelConstraints`."""
    return ReducedModelConstraints(which, "linear", p)


def logistic_reduced_constraints(which, p=None):
    """Reduced logistic-model constraint set; see :class:`ReducedModelConstraints`."""
    return ReducedModelConstraints(which, "logistic", p)


def reduced_model_sandwich_fn(which, family="linear"):
    """Estimating function of the reduced models, for the sandwich Sigma0.

    The returned object evaluates, per row, ``F = (y - f(pi_k + beta_k z_k))
    * (1, z_k)`` stacked as intercept rows then slope rows, with Jacobian in
    ``params = (pi_1..pi_K, beta_1..beta_K)``.

    Returns
    -------
    SandwichFromInternal
    """
    which = tuple(int(c) for c in which)
    k = len(which)
    if family not in ("linear", "logistic"):
        raise ValueError("family must be 'linear' or 'logistic'")

    def estfun(data, params):
        params = np.asarray(params, dtype=float)
        if params.size != 2 * k:
            raise DimMismatch("params must hold (pi, beta) for each reduced model")
        pi, beta = params[:k], params[k:]
        zc = data.z[:, list(which)]
        a = pi[None, :] + beta[None, :] * zc
        if family == "linear":
            e = data.y[:, None] - a
            da = np.ones_like(a)
        else:
            e = data.y[:, None] - expit(a)
            da = _dexpit(a)
        F = np.concatenate([e, e * zc], axis=1)
        n = data.n
        J = np.zeros((n, 2 * k, 2 * k))
        idx = np.arange(k)
        J[:, idx, idx] = -da
        J[:, idx, k + idx] = -da * zc
        J[:, k + idx, idx] = -da * zc
        J[:, k + idx, k + idx] = -da * zc ** 2
        return F, J

    return SandwichFromInternal(estfun, tuple(range(k, 2 * k)))


def fit_reduced_models(data, which, family="linear"):
    """Fit each single-covariate reduced model.

    Returns
    -------
    pi, beta : ndarray
        Intercepts and slopes, one per entry of ``which``.
    """
    pis, betas = [], []
    for c in which:
        sub = type(data)(data.y, data.z[:, [int(c)]])
        theta = fit_linear(sub)[0] if family == "linear" else fit_logistic(sub)[0]
        pis.append(theta[0])
        betas.append(theta[1])
    return np.array(pis), np.array(betas)
