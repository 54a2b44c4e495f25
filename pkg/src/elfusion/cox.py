"""Cox proportional hazards model with a Breslow baseline.

The baseline cumulative hazard is represented by its jumps ``lambda_j`` at
the distinct observed event times, so that the nonparametric component is
finite dimensional given the data and profiling it out is exact linear
algebra. Ties are handled with Breslow's method.

The full (nonparametric) log-likelihood is

    m = sum_i delta_i [log lambda{Y_i} + theta'Z_i] - sum_i exp(theta'Z_i) Lambda(Y_i)

and maximizing it over the jumps for fixed theta gives the Breslow
estimator, so the profile log-likelihood equals the partial likelihood up
to a constant.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._linalg import Factor
from .exceptions import Collinear, DataError, DimMismatch, EmptySubgroup, NoConvergence, NoEvents
from .interface import ConstraintEval, ConstraintSet, ModelDerivatives, ModelFit, SemiparametricModel

__all__ = [
    "CoxFit",
    "CoxModel",
    "breslow_jumps",
    "partial_loglik",
    "partial_score",
    "partial_information",
    "fit_cox",
    "cumulative_hazard",
    "Subgroup",
    "SurvivalConstraints",
    "survival_constraints",
    "NuisanceBlocks",
    "cox_nuisance_blocks",
]


@dataclass(frozen=True, eq=False)
class CoxFit:
    """Fitted Cox model.

    Attributes
    ----------
    theta : ndarray, shape (p,)
        Regression coefficients.
    event_times : ndarray, shape (k,)
        Distinct event times, strictly increasing.
    jumps : ndarray, shape (k,)
        Breslow jump sizes, so that ``Lambda(t) = sum_{t_j <= t} jumps_j``.
    events : ndarray, shape (k,)
        Number of events at each event time.
    loglik : float
        Partial log-likelihood at ``theta``.
    """

    theta: np.ndarray
    event_times: np.ndarray
    jumps: np.ndarray
    events: np.ndarray
    loglik: float = np.nan
    iterations: int = 0

    @property
    def theta_tilde(self):
        return self.theta


def _check_survival(data):
    if not data.is_survival:
        raise DataError("the Cox model needs survival data (time, status)")
    if data.delta.sum() == 0:
        raise NoEvents("no events in the data")


def _event_structure(data):
    times = data.y[data.delta == 1]
    event_times, events = np.unique(times, return_counts=True)
    return event_times, events.astype(float)


def _risk_sums(data, theta, times, order=2):
    """Risk-set sums S0, S1, S2 at the given times (risk set {Y >= t})."""
    w = np.exp(data.z @ theta)
    srt = np.argsort(data.y, kind="stable")
    ys = data.y[srt]
    start = np.searchsorted(ys, times, side="left")
    ws = w[srt]
    zs = data.z[srt]

    def tail(a):
        c = np.cumsum(a[::-1], axis=0)[::-1]
        c = np.concatenate([c, np.zeros((1,) + c.shape[1:])], axis=0)
        return c[start]

    s0 = tail(ws)
    if order == 0:
        return s0, None, None
    s1 = tail(ws[:, None] * zs)
    if order == 1:
        return s0, s1, None
    s2 = tail(ws[:, None, None] * zs[:, :, None] * zs[:, None, :])
    return s0, s1, s2


def breslow_jumps(data, theta):
    """Breslow baseline jumps ``d_j / sum_{Y_i >= t_j} exp(theta'Z_i)``.

    Returns
    -------
    event_times, events, jumps : ndarray
    """
    _check_survival(data)
    theta = np.asarray(theta, dtype=float)
    event_times, events = _event_structure(data)
    s0 = _risk_sums(data, theta, event_times, order=0)[0]
    return event_times, events, events / s0


def _event_sums(data, event_times):
    """Sum of covariates over the events at each event time."""
    idx = np.searchsorted(event_times, data.y[data.delta == 1])
    out = np.zeros((event_times.size, data.d))
    np.add.at(out, idx, data.z[data.delta == 1])
    return out


def partial_loglik(data, theta):
    """Breslow partial log-likelihood."""
    _check_survival(data)
    theta = np.asarray(theta, dtype=float)
    event_times, events = _event_structure(data)
    s0 = _risk_sums(data, theta, event_times, order=0)[0]
    lin = data.z[data.delta == 1] @ theta
    return float(lin.sum() - np.sum(events * np.log(s0)))


def partial_score(data, theta):
    """Gradient of :func:`partial_loglik` (summed, not averaged)."""
    _check_survival(data)
    theta = np.asarray(theta, dtype=float)
    event_times, events = _event_structure(data)
    s0, s1, _ = _risk_sums(data, theta, event_times, order=1)
    return _event_sums(data, event_times).sum(axis=0) - (events[:, None] * s1 / s0[:, None]).sum(axis=0)


def partial_information(data, theta):
    """Observed information of the partial likelihood (summed)."""
    _check_survival(data)
    theta = np.asarray(theta, dtype=float)
    event_times, events = _event_structure(data)
    s0, s1, s2 = _risk_sums(data, theta, event_times, order=2)
    zbar = s1 / s0[:, None]
    v = s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :]
    return np.einsum("j,jab->ab", events, v)


def fit_cox(data, tol=1e-8, max_iter=50):
    """Maximize the partial likelihood and compute the Breslow jumps.

    Newton-Raphson with step-halving; convergence when the max-norm of the
    averaged partial score is below ``tol``.

    Raises
    ------
    NoEvents, Collinear, NoConvergence
    """
    _check_survival(data)
    if data.d == 0:
        raise DataError("the Cox model needs at least one covariate")
    theta = np.zeros(data.d)
    ll = partial_loglik(data, theta)
    n = data.n
    for it in range(1, max_iter + 1):
        score = partial_score(data, theta)
        if np.max(np.abs(score)) / n <= tol:
            break
        info = partial_information(data, theta)
        step = Factor(info, Collinear, "partial-likelihood information").solve(score)
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new = partial_loglik(data, cand)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
        theta, ll = cand, ll_new
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > 50:
            raise Collinear("coefficients diverge")
    else:
        if np.max(np.abs(partial_score(data, theta))) / n > tol:
            raise NoConvergence(f"Cox fit did not converge in {max_iter} iterations")
    event_times, events, jumps = breslow_jumps(data, theta)
    return CoxFit(theta, event_times, jumps, events, ll, it)


def cumulative_hazard(fit, t):
    """Breslow cumulative hazard ``sum_{t_j <= t} lambda_j``.

    Right-continuous step function, 0 before the first event time and the
    total of all jumps beyond the last one.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    cum = np.concatenate([[0.0], np.cumsum(fit.jumps)])
    out = cum[np.searchsorted(fit.event_times, t, side="right")]
    return float(out) if out.ndim == 0 else out


class CoxModel(SemiparametricModel):
    """Cox model whose nuisance coordinates are the Breslow jumps.

    The nuisance handle ``eta`` is any object with ``event_times`` and
    ``jumps`` attributes, normally a :class:`CoxFit`.
    """

    has_nuisance = True

    def n_params(self, data):
        return data.d

    def fit(self, data):
        fit = fit_cox(data)
        return ModelFit(fit.theta, fit, self.loglik(data, fit.theta, fit), fit.iterations)

    def loglik(self, data, theta, eta=None):
        _check_survival(data)
        theta = np.asarray(theta, dtype=float)
        lin = data.z @ theta
        cum = cumulative_hazard(eta, data.y)
        ev = data.delta == 1
        j = np.searchsorted(eta.event_times, data.y[ev])
        if np.any(j >= eta.event_times.size) or np.any(eta.event_times[np.minimum(j, eta.event_times.size - 1)] != data.y[ev]):
            return -np.inf
        return float(np.sum(np.log(eta.jumps[j]) + lin[ev]) - np.sum(np.exp(lin) * cum))

    def profile_loglik(self, data, theta):
        event_times, events, jumps = breslow_jumps(data, theta)
        eta = CoxFit(np.asarray(theta, dtype=float), event_times, jumps, events)
        return self.loglik(data, theta, eta), eta

    def derivatives(self, data, theta, eta=None):
        b = cox_nuisance_blocks(eta, data, None, theta=theta)
        return ModelDerivatives(b.score_rows, b.M_tt, b.m_eta, b.M_te, b.M_ee)


@dataclass(frozen=True, eq=False)
class NuisanceBlocks:
    """Exact derivative blocks of the Cox full log-likelihood (averaged).

    ``M_ee`` is the diagonal of the jump block, ``-d_j / (n lambda_j^2)``.
    """

    score_rows: np.ndarray
    M_tt: np.ndarray
    M_te: np.ndarray
    M_ee: np.ndarray
    m_eta: np.ndarray
    G_eta: np.ndarray = None


def cox_nuisance_blocks(fit, data, constraints=None, pi=None, beta=None, theta=None):
    """Analytic blocks of the full Cox log-likelihood in raw-jump coordinates.

    Parameters
    ----------
    fit : CoxFit
        Supplies the jump locations and sizes (and theta unless given).
    data : InternalDataset
    constraints : ConstraintSet, optional
        If given, ``G_eta = E_n dg/dlambda`` is also returned.
    pi, beta : array_like, optional
        Constraint parameters, needed with ``constraints``.
    theta : array_like, optional
        Evaluation point; defaults to ``fit.theta``.

    Returns
    -------
    NuisanceBlocks
        Averages over rows: ``M_tt = E_n m_tt`` (p, p), ``M_te`` (p, k),
        ``M_ee`` (k,) diagonal, per-row ``m_eta`` (n, k) and per-row scores.
    """
    _check_survival(data)
    theta = np.asarray(fit.theta if theta is None else theta, dtype=float)
    n = data.n
    times, lam = fit.event_times, fit.jumps
    z, y, delta = data.z, data.y, data.delta
    w = np.exp(z @ theta)
    cum = cumulative_hazard(fit, y)
    score_rows = delta[:, None] * z - (w * cum)[:, None] * z
    M_tt = -(z.T @ ((w * cum)[:, None] * z)) / n
    at_risk = y[:, None] >= times[None, :]
    is_event = (delta[:, None] == 1) & (y[:, None] == times[None, :])
    m_eta = is_event / lam[None, :] - at_risk * w[:, None]
    M_te = -((z * w[:, None]).T @ at_risk) / n
    d = is_event.sum(axis=0)
    M_ee = -d / (n * lam ** 2)
    G_eta = None
    if constraints is not None:
        ce = constraints.evaluate(data, theta, fit, pi, beta, jacobians=True)
        G_eta = ce.jac_eta.mean(axis=0)
    return NuisanceBlocks(score_rows, M_tt, M_te, M_ee, m_eta, G_eta)


_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True, eq=False)
class Subgroup:
    """Covariate subgroup with a survival horizon.

    Parameters
    ----------
    horizon : float
        Time point t_k (> 0).
    where : sequence of (column, op, value) or callable
        Conjunction of conditions on covariate columns (zero-based), with
        ``op`` one of ``< <= > >= == !=``; or a callable mapping the (n, d)
        covariate matrix to a boolean mask.
    """

    horizon: float
    where: object = ()

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be positive")
        if not callable(self.where):
            conds = tuple((int(c), str(op), float(val)) for c, op, val in self.where)
            for _, op, _ in conds:
                if op not in _OPS:
                    raise ValueError(f"unknown comparison {op!r}")
            object.__setattr__(self, "where", conds)

    def mask(self, z):
        z = np.asarray(z, dtype=float)
        if callable(self.where):
            return np.asarray(self.where(z), dtype=bool)
        m = np.ones(z.shape[0], dtype=bool)
        for c, op, val in self.where:
            if c >= z.shape[1]:
                raise DimMismatch(f"subgroup refers to covariate {c} but d = {z.shape[1]}")
            m &= _OPS[op](z[:, c], val)
        return m


class SurvivalConstraints(ConstraintSet):
    """Subgroup t-year survival constraints for one external study.

    Row k is ``I(Z in Omega_k) [exp{-pi Lambda(t_k) exp(theta'Z)} - beta_k]``.

    Parameters
    ----------
    subgroups : sequence of Subgroup
    p : int
        Number of Cox coefficients.
    pi_mode : {"estimated", "known"}
        With "estimated" a scalar pi is a free parameter (v = 1) and g* is
        the first row; with "known" pi is fixed at ``pi_value`` (v = 0).
    pi_value : float
        The known value of pi.
    """

    def __init__(self, subgroups: Sequence[Subgroup], p, pi_mode="estimated", pi_value=1.0):
        self.subgroups = tuple(subgroups)
        if not self.subgroups:
            raise DimMismatch("need at least one subgroup")
        if pi_mode not in ("estimated", "known"):
            raise ValueError("pi_mode must be 'estimated' or 'known'")
        self.pi_mode = pi_mode
        self.pi_value = float(pi_value)
        self.p = int(p)
        self.q = self.r = len(self.subgroups)
        self.v = 1 if pi_mode == "estimated" else 0
        self.g_star_rows = (0,) if self.v else ()
        self.horizons = np.array([s.horizon for s in self.subgroups])
        self.pi_positive = True
        self._check_dims()

    def masks(self, data):
        m = np.column_stack([s.mask(data.z) for s in self.subgroups])
        empty = np.flatnonzero(m.sum(axis=0) == 0)
        if empty.size:
            raise EmptySubgroup(f"subgroup(s) {empty.tolist()} have no internal members")
        return m

    def diagnose(self, data, eta):
        """Warnings about small subgroups or horizons past the last event."""
        out = []
        counts = self.masks(data).sum(axis=0)
        for k, c in enumerate(counts):
            if c < 5:
                out.append(f"subgroup {k} has only {c} internal members")
        last = eta.event_times[-1]
        for k, t in enumerate(self.horizons):
            if t > last:
                out.append(f"horizon {t} of subgroup {k} is beyond the last event time {last}")
        return out

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True):
        theta, pi, beta = self._args(theta, pi, beta)
        piv = pi[0] if self.v else self.pi_value
        ind = self.masks(data).astype(float)                  # (n, q)
        w = np.exp(data.z @ theta)                             # (n,)
        lam_t = np.atleast_1d(cumulative_hazard(eta, self.horizons))  # (q,)
        s = np.exp(-piv * lam_t[None, :] * w[:, None])         # (n, q)
        g = ind * (s - beta[None, :])
        if not jacobians:
            return ConstraintEval(g)
        n, q = g.shape
        base = ind * w[:, None] * s                            # I e^{theta'Z} S
        jt = -(piv * base * lam_t[None, :])[:, :, None] * data.z[:, None, :]
        jp = (-(base * lam_t[None, :]))[:, :, None] if self.v else np.zeros((n, q, 0))
        jb = np.zeros((n, q, q))
        idx = np.arange(q)
        jb[:, idx, idx] = -ind
        before = (eta.event_times[None, :] <= self.horizons[:, None]).astype(float)  # (q, k)
        je = -(piv * base)[:, :, None] * before[None, :, :]
        return ConstraintEval(g, jt, jp, jb, je)


def survival_constraints(subgroups, p, pi_mode="estimated", pi_value=1.0):
    """Build :class:`SurvivalConstraints`."""
    return SurvivalConstraints(subgroups, p, pi_mode, pi_value)
