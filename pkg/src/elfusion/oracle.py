"""Direct maximization of the joint empirical-likelihood objective.

This is the slow reference path used to validate the one-step update. The
profiled-in-t objective is

    sum_i m(X_i; theta) - sum_i log(1 + t'g_i) - (n / 2) (beta_ext - beta)' rho V^-1 (beta_ext - beta)

where ``t`` solves the inner dual problem at every outer iterate. With the
stacked ``V`` of :mod:`elfusion.fusion` the last term equals
``sum_m (N_m / 2) (beta_ext_m - beta_m)' V_m^-1 (beta_ext_m - beta_m)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import Factor
from .exceptions import HullViolation, NoConvergence, SingularA

__all__ = ["ELSolution", "inner_lagrange_solve", "el_objective", "maximize_el"]


@dataclass(frozen=True, eq=False)
class ELSolution:
    """Maximizer of the joint EL objective.

    Attributes
    ----------
    theta, pi, beta : ndarray
    t : ndarray, shape (q,)
        Lagrange multipliers at the solution.
    weights : ndarray, shape (n,)
        EL point masses ``1 / (n (1 + t'g_i))``.
    objective : float
    iterations : int
    """

    theta: np.ndarray
    pi: np.ndarray
    beta: np.ndarray
    t: np.ndarray
    weights: np.ndarray
    objective: float
    iterations: int = 0

    @property
    def estimate(self):
        return np.concatenate([self.theta, self.pi, self.beta])


def _log_star(u, eps):
    # Owen's pseudo-logarithm: log above eps, matching quadratic below
    out = np.empty_like(u)
    d1 = np.empty_like(u)
    d2 = np.empty_like(u)
    ok = u >= eps
    out[ok] = np.log1p(u[ok] - 1.0)
    d1[ok] = 1.0 / u[ok]
    d2[ok] = -1.0 / u[ok] ** 2
    z = (u[~ok] - eps) / eps
    out[~ok] = np.log(eps) + z - 0.5 * z ** 2
    d1[~ok] = (1.0 - z) / eps
    d2[~ok] = -1.0 / eps ** 2
    return out, d1, d2


def inner_lagrange_solve(g_rows, tol=1e-12, max_iter=200):
    """Lagrange multiplier of the empirical-likelihood inner problem.

    Maximizes ``sum_i log(1 + t'g_i)`` (the negative of the convex dual)
    by damped Newton steps on Owen's pseudo-logarithm, which extends log
    quadratically below ``1/n`` so every iterate is finite.

    Parameters
    ----------
    g_rows : ndarray, shape (n, q)
    tol : float
        Stop when ``max |mean_i g_i / (1 + t'g_i)|`` is below ``tol``.

    Returns
    -------
    t : ndarray, shape (q,)

    Raises
    ------
    HullViolation
        If zero is not inside the convex hull of the rows, detected as a
        solution with some ``1 + t'g_i <= 1/n`` or a diverging multiplier.
    """
    g = np.atleast_2d(np.asarray(g_rows, dtype=float))
    n, q = g.shape
    if not np.all(np.isfinite(g)):
        raise HullViolation("constraint rows are not finite")
    t = np.zeros(q)
    if q == 0 or not np.any(g):
        return t
    eps = 1.0 / n

    def crit(tt):
        return _log_star(1.0 + g @ tt, eps)[0].sum()

    f = crit(t)
    for _ in range(max_iter):
        _, d1, d2 = _log_star(1.0 + g @ t, eps)
        grad = g.T @ d1 / n
        if np.max(np.abs(grad)) <= tol:
            break
        hess = (g * d2[:, None]).T @ g / n
        if not np.all(np.isfinite(hess)):
            raise HullViolation("inner problem overflowed; zero is likely outside the convex hull")
        step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        s = 1.0
        while True:
            cand = t + s * step
            fc = crit(cand)
            # absolute slack: the criterion is a sum of n rounded logs
            if fc >= f - 1e-13 * n or s < 1e-12:
                break
            s *= 0.5
        t, f = cand, fc
        if np.linalg.norm(t) > 1e8:
            raise HullViolation("Lagrange multiplier diverges; zero is outside the convex hull")
    else:
        raise HullViolation("inner problem did not converge; zero is likely outside the convex hull")
    if np.min(1.0 + g @ t) <= eps:
        raise HullViolation("zero is not inside the convex hull of the constraint rows")
    return t


class _Objective:
    """Profiled-in-t EL objective as a function of the packed (theta, pi, beta)."""

    def __init__(self, problem, V):
        self.problem = problem
        self.p, self.v, self.r = problem.p, problem.v, problem.r
        n = problem.n
        r = self.r
        self.penalty = n * problem.rho * Factor(V, SingularA, "V").solve(np.eye(r)) if r else np.zeros((0, 0))
        self.penalty = 0.5 * (self.penalty + self.penalty.T)

    def unpack(self, x):
        p, v = self.p, self.v
        return x[:p], x[p:p + v], x[p + v:]

    def parts(self, x):
        prob = self.problem
        theta, pi, beta = self.unpack(x)
        if getattr(prob.model, "has_nuisance", False):
            ll, eta = prob.model.profile_loglik(prob.data, theta)
        else:
            ll, eta = prob.model.loglik(prob.data, theta), None
        g = prob.constraints.values(prob.data, theta, eta, pi, beta)
        t = inner_lagrange_solve(g)
        d = prob.beta_tilde - beta
        val = ll - np.sum(np.log1p(g @ t)) - 0.5 * d @ self.penalty @ d
        return float(val), t, g

    def __call__(self, x):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                val = self.parts(x)[0]
        except HullViolation:
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    @property
    def analytic(self):
        return not getattr(self.problem.model, "has_nuisance", False)

    def gradient(self, x):
        """Envelope-theorem gradient (t held at its optimum); models without eta."""
        prob = self.problem
        theta, pi, beta = self.unpack(x)
        ce = prob.constraints.evaluate(prob.data, theta, None, pi, beta)
        t = inner_lagrange_solve(ce.g)
        w = 1.0 / (1.0 + ce.g @ t)
        jac = np.concatenate([ce.jac_theta, ce.jac_pi, ce.jac_beta], axis=2)   # (n, q, k)
        grad = -np.einsum("i,iqk,q->k", w, jac, t)
        grad[:self.p] += prob.model.derivatives(prob.data, theta).score_rows.sum(axis=0)
        grad[self.p + self.v:] += self.penalty @ (prob.beta_tilde - beta)
        return grad


def el_objective(problem, theta, pi, beta, V=None):
    """Joint EL objective at ``(theta, pi, beta)``; -inf outside the hull."""
    if V is None:
        V = problem.resolve_covariances(np.atleast_1d(pi), np.asarray(beta))[1]
    x = np.concatenate([np.asarray(theta, float), np.atleast_1d(np.asarray(pi, float)), np.asarray(beta, float)])
    return _Objective(problem, V)(x)


def _fd_grad_hess(f, x, f0, h_grad=1e-6, h_hess=1e-5):
    k = x.size
    hg = h_grad * (1.0 + np.abs(x))
    hh = h_hess * (1.0 + np.abs(x))
    grad = np.empty(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = hg[i]
        grad[i] = (f(x + e) - f(x - e)) / (2 * hg[i])
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = hh[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / hh[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = hh[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * hh[i] * hh[j])
    return grad, H


def _fd_hess_of_grad(grad_fn, x, h=1e-7):
    k = x.size
    hs = h * (1.0 + np.abs(x))
    H = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = hs[i]
        H[:, i] = (grad_fn(x + e) - grad_fn(x - e)) / (2 * hs[i])
    return 0.5 * (H + H.T)


def _feasible_start(obj, x, max_iter=50):
    # Gauss-Newton on (pi, beta) for E_n g = 0 with theta held fixed
    prob = obj.problem
    p = obj.p
    theta = x[:p]
    eta = prob.model.profile_loglik(prob.data, theta)[1] if getattr(prob.model, "has_nuisance", False) else None
    y = x[p:].copy()
    for _ in range(max_iter):
        pi, beta = y[:obj.v], y[obj.v:]
        ce = prob.constraints.evaluate(prob.data, theta, eta, pi, beta)
        gbar = ce.g.mean(axis=0)
        if np.max(np.abs(gbar)) < 1e-12:
            break
        jac = np.concatenate([ce.jac_pi.mean(axis=0), ce.jac_beta.mean(axis=0)], axis=1)
        y = y - np.linalg.lstsq(jac, gbar, rcond=None)[0]
    return np.concatenate([theta, y])


def maximize_el(problem, init, V=None, tol=1e-9, max_iter=200, fix_theta=False, extra_starts=()):
    """Maximize the joint EL objective over ``(theta, pi, beta)``.

    Newton's method with a step-halving line search on the profiled-in-t
    objective. For parametric models the gradient comes from the envelope
    theorem (t at its inner optimum) and the Hessian from central
    differences of that gradient. For models with a nuisance component the
    criterion is the profile log-likelihood, with the nuisance refit at every
    evaluation, and both derivatives are central differences of the
    objective.

    Parameters
    ----------
    problem : FusionProblem
    init : tuple (theta, pi, beta)
        Starting point, usually the initial estimates of the fusion pipeline.
        When zero is outside the convex hull of the constraint rows there,
        (pi, beta) are first moved to solve the sample moment equations at
        the given theta.
    V : ndarray, optional
        Stacked weight matrix; by default resolved at the starting point and
        held fixed.
    tol : float
        Convergence once the max-norm of the parameter step is below ``tol``.
    fix_theta : bool
        Hold theta at its starting value and maximize over (pi, beta) only,
        which gives the objective profiled over the constraint parameters.
    extra_starts : sequence of tuple (theta, pi, beta)
        Further starting points. Newton is run from each start and the best
        converged solution is returned, which guards against iterates that
        stall near the boundary of the feasible region.

    Returns
    -------
    ELSolution

    Raises
    ------
    HullViolation
        If no feasible starting point is found.
    NoConvergence
        After ``max_iter`` outer iterations from every start.
    """
    theta0, pi0, beta0 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in init)
    if V is None:
        V = problem.resolve_covariances(pi0, beta0)[1]
    obj = _Objective(problem, V)
    best, err = None, None
    for start in (init, *extra_starts):
        x = np.concatenate([np.atleast_1d(np.asarray(a, dtype=float)) for a in start])
        try:
            sol = _newton(problem, obj, x, tol, max_iter, fix_theta)
        except (NoConvergence, HullViolation) as exc:
            err = exc
            continue
        if best is None or sol.objective > best.objective:
            best = sol
    if best is None:
        raise err
    return best


def _newton(problem, obj, x, tol, max_iter, fix_theta):
    f = obj(x)
    if not np.isfinite(f):
        x = _feasible_start(obj, x)
        f = obj(x)
    if not np.isfinite(f):
        raise HullViolation("no feasible starting point found")
    free = np.arange(obj.p if fix_theta else 0, x.size)

    def sub(y):
        z = x_fixed.copy()
        z[free] = y
        return obj(z)

    def sub_grad(y):
        z = x_fixed.copy()
        z[free] = y
        return obj.gradient(z)[free]

    x_fixed = x.copy()
    for it in range(1, max_iter + 1):
        try:
            if obj.analytic:
                grad = sub_grad(x[free])
                H = _fd_hess_of_grad(sub_grad, x[free])
            else:
                grad, H = _fd_grad_hess(sub, x[free], f)
        except HullViolation:
            grad = H = np.array([np.nan])
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(H))):
            raise NoConvergence("objective is not finite near the current iterate")
        w, U = np.linalg.eigh(0.5 * (H + H.T))
        # keep the Newton direction an ascent direction
        w = -np.maximum(-w, 1e-8 * max(1.0, np.max(np.abs(w))))
        step = np.zeros(x.size)
        step[free] = -(U / w) @ (U.T @ grad)
        s = 1.0
        while True:
            cand = x + s * step
            fc = obj(cand)
            if fc >= f or s < 1e-10:
                break
            s *= 0.5
        if fc < f:
            cand, fc = x, f
        done = np.max(np.abs(cand - x)) < tol
        x, f = cand, fc
        if done:
            break
    else:
        raise NoConvergence(f"EL maximization did not converge in {max_iter} iterations")
    val, t, g = obj.parts(x)
    theta, pi, beta = obj.unpack(x)
    weights = 1.0 / (problem.n * (1.0 + g @ t))
    return ELSolution(theta.copy(), pi.copy(), beta.copy(), t, weights, val, it)
