"""One-step empirical-likelihood fusion of internal data with external summaries.

Block layout used throughout: the unknown vector of the linearized
estimating equations is ordered ``(theta, pi, t, beta, beta_ext)`` with
sizes ``(p, v, q, r, r)``, where ``t`` are the Lagrange multipliers and
``beta_ext`` the slot of the external estimate. The system matrix is::

    [ -M    0    Gt'   0        0      ]
    [  0    0    Gp'   0        0      ]
    [ -Gt  -Gp   Gmat -Gb       0      ]
    [  0    0    Gb'   rho V^-1 -rho V^-1 ]
    [  0    0    0     0        I      ]

with ``M`` the (profiled) average Hessian of the criterion, which is
negative definite.

Multiple external studies are stacked. With ``c_m = N_m / sum N_m`` and
``rho = sum N_m / n`` the stacked weight and covariance matrices are
``Diag(V_m / c_m)`` and ``Diag(Sigma0_m / c_m)``, so that ``rho V^-1`` has
blocks ``(N_m / n) V_m^-1`` and ``Sigma0 / rho`` has blocks
``(n / N_m) Sigma0_m``, matching the penalty
``sum_m N_m (beta_ext_m - beta_m)' V_m^-1 (beta_ext_m - beta_m) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from ._linalg import Factor, centered_cov, check_spd
from .exceptions import DimMismatch, FusionError, NoRoot, SingularA, SingularJ
from .interface import (
    ConstraintEval,
    ConstraintSet,
    ExplicitSigma,
    ExternalSummary,
    SandwichFromInternal,
    StackedConstraints,
    profile_nuisance,
)

__all__ = [
    "StudyBlock",
    "FusionProblem",
    "FusionResult",
    "stack_studies",
    "solve_initial_pi",
    "assemble_A",
    "assemble_l",
    "assemble_W",
    "assemble_S",
    "one_step_update",
    "fused_covariance",
    "sandwich_sigma0",
    "fuse",
    "RedundancyConstraints",
    "overlap_invariance_check",
]


@dataclass(frozen=True, eq=False)
class StudyBlock:
    """One external study: its constraint set and reported summary."""

    constraints: ConstraintSet
    summary: ExternalSummary

    def __post_init__(self):
        if self.constraints.r != self.summary.r:
            raise DimMismatch(
                f"constraint block has r={self.constraints.r} but summary has r={self.summary.r}"
            )


@dataclass(frozen=True, eq=False)
class FusionProblem:
    """Internal model and data together with the stacked external information.

    Build with :func:`stack_studies`.

    Attributes
    ----------
    model : SemiparametricModel
    data : InternalDataset
    constraints : StackedConstraints
    studies : tuple of StudyBlock
    rho : float
        ``sum_m N_m / n``.
    weights : ndarray
        ``c_m = N_m / sum N_m``.
    beta_tilde : ndarray
        Stacked external estimates.
    v_policy : {"auto", "sigma0", "explicit"}
        ``auto`` uses each study's ``v_matrix`` when present and Sigma0
        otherwise; ``sigma0`` always uses Sigma0; ``explicit`` requires a
        ``v_matrix`` for every study.
    v_scale : float
        Multiplier applied to every V (1 gives the efficient choice V = Sigma0).
    """

    model: object
    data: object
    constraints: StackedConstraints
    studies: tuple
    rho: float
    weights: np.ndarray
    beta_tilde: np.ndarray
    v_policy: str = "auto"
    v_scale: float = 1.0

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.constraints.p

    @property
    def v(self):
        return self.constraints.v

    @property
    def q(self):
        return self.constraints.q

    @property
    def r(self):
        return self.constraints.r

    def split(self, pi, beta):
        c = self.constraints
        return [(np.asarray(pi)[sp], np.asarray(beta)[sb]) for sp, sb in zip(c.pi_slices, c.beta_slices)]

    def sigma0_blocks(self, pi, beta):
        """Per-study Sigma0_m, resolving sandwich specifications at (pi, beta)."""
        out = []
        for study, (pm, bm) in zip(self.studies, self.split(pi, beta)):
            cov = study.summary.cov
            if isinstance(cov, ExplicitSigma):
                out.append(np.array(cov.matrix))
            else:
                params = np.concatenate([pm, bm])
                out.append(sandwich_sigma0(cov.estfun, self.data, params, cov.beta_index))
        return out

    def v_blocks(self, sigma0_blocks):
        out = []
        for study, s0 in zip(self.studies, sigma0_blocks):
            vm = study.summary.v_matrix
            if self.v_policy == "explicit":
                if vm is None:
                    raise FusionError("v_policy 'explicit' needs a v_matrix for every study")
                out.append(np.array(vm))
            elif self.v_policy == "auto" and vm is not None:
                out.append(np.array(vm))
            else:
                out.append(np.array(s0))
        return [self.v_scale * b for b in out]

    def stacked(self, blocks):
        """Block-diagonal stacking ``Diag(B_m / c_m)``."""
        return linalg.block_diag(*[b / c for b, c in zip(blocks, self.weights)])

    def resolve_covariances(self, pi, beta):
        """Stacked ``(Sigma0, V)`` at the given constraint parameters."""
        s0 = self.sigma0_blocks(pi, beta)
        return self.stacked(s0), self.stacked(self.v_blocks(s0))


def stack_studies(blocks: Sequence, model, data, v_policy="auto", v_scale=1.0):
    """Stack external studies into one :class:`FusionProblem`.

    Parameters
    ----------
    blocks : sequence of StudyBlock or (ConstraintSet, ExternalSummary)
    model : SemiparametricModel
        Internal model.
    data : InternalDataset
        Internal data.
    """
    studies = tuple(b if isinstance(b, StudyBlock) else StudyBlock(*b) for b in blocks)
    if not studies:
        raise DimMismatch("need at least one external study")
    if v_policy not in ("auto", "sigma0", "explicit"):
        raise ValueError("v_policy must be 'auto', 'sigma0' or 'explicit'")
    p = model.n_params(data)
    for s in studies:
        if s.constraints.p != p:
            raise DimMismatch(f"constraint block has p={s.constraints.p}, model has p={p}")
    cons = StackedConstraints([s.constraints for s in studies])
    n_ext = np.array([s.summary.n_ext for s in studies], dtype=float)
    rho = float(n_ext.sum() / data.n)
    return FusionProblem(
        model=model, data=data, constraints=cons, studies=studies, rho=rho,
        weights=n_ext / n_ext.sum(),
        beta_tilde=np.concatenate([s.summary.beta_hat for s in studies]),
        v_policy=v_policy, v_scale=float(v_scale),
    )


@dataclass(frozen=True, eq=False)
class FusionResult:
    """Output of :func:`one_step_update`.

    ``covariance`` is the covariance of the estimator ``(theta, pi, beta)``
    (that is ``D W D' / n``) and ``standard_errors`` the square roots of its
    diagonal.
    """

    theta_hat: np.ndarray
    pi_hat: np.ndarray
    beta_hat: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    theta_tilde: np.ndarray
    pi_tilde: np.ndarray
    beta_tilde: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimate(self):
        return np.concatenate([self.theta_hat, self.pi_hat, self.beta_hat])

    def se(self, block="theta"):
        p, v = self.theta_hat.size, self.pi_hat.size
        s = self.standard_errors
        return {"theta": s[:p], "pi": s[p:p + v], "beta": s[p + v:]}[block]


# ---------------------------------------------------------------------------
# initial pi
# ---------------------------------------------------------------------------

def _solve_block_pi(cons, data, theta, eta, beta, tol=1e-10, max_iter=100):
    rows = list(cons.g_star_rows)
    v = cons.v

    def resid(pi):
        return cons.values(data, theta, eta, pi, beta)[:, rows].mean(axis=0)

    pi = np.ones(v) if getattr(cons, "pi_positive", False) else np.zeros(v)
    if hasattr(cons, "pi_start"):
        pi = np.asarray(cons.pi_start(), dtype=float)
    try:
        f = resid(pi)
        for _ in range(max_iter):
            if np.all(np.isfinite(f)) and np.max(np.abs(f)) <= tol:
                return pi
            ce = cons.evaluate(data, theta, eta, pi, beta)
            jac = ce.jac_pi[:, rows, :].mean(axis=0)
            step = Factor(jac, NoRoot, "g* Jacobian in pi").solve(f)
            s = 1.0
            while True:
                cand = pi - s * step
                fc = resid(cand)
                if (np.all(np.isfinite(fc)) and np.max(np.abs(fc)) < np.max(np.abs(f))) or s < 1e-8:
                    break
                s *= 0.5
            pi, f = cand, fc
        if np.all(np.isfinite(f)) and np.max(np.abs(f)) <= tol:
            return pi
    except (NoRoot, FloatingPointError):
        pass
    if v == 1:
        lo, hi = 1e-6, 1e6
        flo, fhi = resid(np.array([lo]))[0], resid(np.array([hi]))[0]
        if np.isfinite(flo) and np.isfinite(fhi) and flo * fhi < 0:
            from scipy.optimize import brentq
            root = brentq(lambda u: resid(np.array([u]))[0], lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
            return np.array([root])
    raise NoRoot("could not solve the g* equations for pi")


def solve_initial_pi(problem, theta_tilde, eta_tilde, beta_tilde=None):
    """Solve ``E_n g*(theta_tilde, eta_tilde, pi, beta_tilde) = 0`` for pi.

    Each study's pi block is solved separately by Newton's method (with
    residual-decreasing step-halving); a scalar block falls back to
    bracketing on ``[1e-6, 1e6]``. Returns an empty vector when v = 0.
    """
    beta_tilde = problem.beta_tilde if beta_tilde is None else np.asarray(beta_tilde, dtype=float)
    c = problem.constraints
    out = np.zeros(c.v)
    for block, sp, sb in zip(c.blocks, c.pi_slices, c.beta_slices):
        if block.v == 0:
            continue
        out[sp] = _solve_block_pi(block, problem.data, theta_tilde, eta_tilde, beta_tilde[sb])
    return out


# ---------------------------------------------------------------------------
# block assembly
# ---------------------------------------------------------------------------

def _slots(p, v, q, r):
    o = np.cumsum([0, p, v, q, r, r])
    return {"theta": slice(o[0], o[1]), "pi": slice(o[1], o[2]), "t": slice(o[2], o[3]),
            "beta": slice(o[3], o[4]), "ext": slice(o[4], o[5]), "dim": int(o[5])}


def assemble_A(pd, rho, V):
    """System matrix of the linearized joint estimating equations."""
    p, v, q, r = pd.p, pd.v, pd.q, pd.r
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape != (r, r):
        raise DimMismatch(f"V must be {r}x{r}")
    if rho <= 0:
        raise ValueError("rho must be positive")
    s = _slots(p, v, q, r)
    rvi = rho * Factor(V, SingularA, "V").solve(np.eye(r)) if r else np.zeros((0, 0))
    rvi = 0.5 * (rvi + rvi.T)
    A = np.zeros((s["dim"], s["dim"]))
    A[s["theta"], s["theta"]] = -pd.M
    A[s["theta"], s["t"]] = pd.Gt.T
    A[s["pi"], s["t"]] = pd.Gp.T
    A[s["t"], s["theta"]] = -pd.Gt
    A[s["t"], s["pi"]] = -pd.Gp
    A[s["t"], s["t"]] = pd.Gmat
    A[s["t"], s["beta"]] = -pd.Gb
    A[s["beta"], s["t"]] = pd.Gb.T
    A[s["beta"], s["beta"]] = rvi
    A[s["beta"], s["ext"]] = -rvi
    A[s["ext"], s["ext"]] = np.eye(r)
    return A


def assemble_l(pd):
    """Driving vector ``sqrt(n) (score_bar, 0, gbar, 0, 0)``.

    The external-deviation slot is zero because beta is evaluated at the
    external estimate itself.
    """
    s = _slots(pd.p, pd.v, pd.q, pd.r)
    l = np.zeros(s["dim"])
    rn = np.sqrt(pd.n)
    l[s["theta"]] = rn * pd.score_bar
    l[s["t"]] = rn * pd.gbar
    return l


def assemble_W(pd, rho, sigma0):
    """Covariance of the driving vector.

    Nonzero blocks are the empirical covariance of the per-row profiled
    scores and constraints and ``sigma0 / rho`` in the external slot.
    """
    p, v, q, r = pd.p, pd.v, pd.q, pd.r
    s = _slots(p, v, q, r)
    rows = np.concatenate([pd.per_row_scores, pd.per_row_g], axis=1)
    C = centered_cov(rows)
    W = np.zeros((s["dim"], s["dim"]))
    W[s["theta"], s["theta"]] = C[:p, :p]
    W[s["theta"], s["t"]] = C[:p, p:]
    W[s["t"], s["theta"]] = C[p:, :p]
    W[s["t"], s["t"]] = C[p:, p:]
    W[s["ext"], s["ext"]] = np.asarray(sigma0, dtype=float) / rho
    return W


def assemble_S(pd):
    """Map from ``A^{-1} l`` to the scaled update ``sqrt(n) (dtheta, dpi, dbeta)``.

    Rows: ``S_theta = [0, 0, M^-1 Gt', 0, 0]``,
    ``S_pi = -(Gp*)^-1 [0, 0, H, Gb*, -Gb*]`` with
    ``H = Gt* M^-1 Gt' - G*``, and ``S_beta = [0, 0, 0, I, -I]``.
    """
    p, v, q, r = pd.p, pd.v, pd.q, pd.r
    s = _slots(p, v, q, r)
    Mfac = Factor(pd.M, SingularA, "profiled Hessian M")
    MiGt = Mfac.solve(pd.Gt.T)                                 # (p, q)
    S = np.zeros((p + v + r, s["dim"]))
    S[:p, s["t"]] = MiGt
    if v:
        H = pd.Gt_star @ MiGt - pd.Gstar                       # (v, q)
        Gpf = Factor(pd.Gp_star, SingularA, "Gp*")
        S[p:p + v, s["t"]] = -Gpf.solve(H)
        S[p:p + v, s["beta"]] = -Gpf.solve(pd.Gb_star)
        S[p:p + v, s["ext"]] = Gpf.solve(pd.Gb_star)
    S[p + v:, s["beta"]] = np.eye(r)
    S[p + v:, s["ext"]] = -np.eye(r)
    return S


def _selector(p, v, q, r):
    s = _slots(p, v, q, r)
    sel = np.zeros((p + v + r, s["dim"]))
    sel[:p + v, :p + v] = np.eye(p + v)
    sel[p + v:, s["beta"]] = np.eye(r)
    return sel


def _psd_repair(C):
    C = 0.5 * (C + C.T)
    if C.size == 0:
        return C
    w, U = np.linalg.eigh(C)
    tr = max(np.trace(C), 0.0)
    if w.min() < -1e-10 * tr:
        raise FusionError(f"covariance has a negative eigenvalue {w.min():.3g}")
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        C = (U * w) @ U.T
    return C


def fused_covariance(pd, rho, V, sigma0, A=None):
    """Asymptotic covariance ``D W D'`` of ``sqrt(n) (theta, pi, beta)``.

    ``D`` selects the (theta, pi, beta) rows of ``A^{-1}``. Divide by n for
    the covariance of the estimator.
    """
    if A is None:
        A = assemble_A(pd, rho, V)
    fac = A if isinstance(A, Factor) else Factor(A, SingularA, "A")
    sel = _selector(pd.p, pd.v, pd.q, pd.r)
    D = fac.solve(sel.T, trans=1).T
    W = assemble_W(pd, rho, sigma0)
    return _psd_repair(D @ W @ D.T)


# ---------------------------------------------------------------------------
# the update
# ---------------------------------------------------------------------------

def one_step_update(problem, theta_tilde, eta_tilde, pi_tilde, beta_tilde=None,
                    sigma0=None, V=None):
    """Non-iterative one-step update of the initial estimates.

    ``(theta, pi, beta)_hat = (theta, pi, beta)_tilde + n^{-1/2} S A^{-1} l``
    evaluated at the initial estimates, together with the covariance
    ``D W D' / n``.

    Parameters
    ----------
    problem : FusionProblem
    theta_tilde, eta_tilde : initial internal estimates
    pi_tilde : array_like, shape (v,)
        Usually from :func:`solve_initial_pi`.
    beta_tilde : array_like, optional
        Defaults to the stacked external estimates.
    sigma0, V : ndarray, optional
        Stacked Sigma0 and V overriding the problem's resolution.

    Returns
    -------
    FusionResult
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    pi_tilde = np.atleast_1d(np.asarray(pi_tilde, dtype=float)).ravel()
    beta_tilde = problem.beta_tilde if beta_tilde is None else np.asarray(beta_tilde, dtype=float)
    if theta_tilde.size != problem.p or pi_tilde.size != problem.v or beta_tilde.size != problem.r:
        raise DimMismatch("initial estimates do not match the problem dimensions")
    cons, data, n = problem.constraints, problem.data, problem.n
    if sigma0 is None or V is None:
        s0, vv = problem.resolve_covariances(pi_tilde, beta_tilde)
        sigma0 = s0 if sigma0 is None else sigma0
        V = vv if V is None else V
    pd = profile_nuisance(problem.model, cons, data, theta_tilde, eta_tilde, pi_tilde, beta_tilde)
    A = assemble_A(pd, problem.rho, V)
    fac = Factor(A, SingularA, "A")
    l = assemble_l(pd)
    x = fac.solve(l)
    delta = assemble_S(pd) @ x / np.sqrt(n)
    p, v = problem.p, problem.v
    theta_hat = theta_tilde + delta[:p]
    pi_hat = pi_tilde + delta[p:p + v]
    beta_hat = beta_tilde + delta[p + v:]
    cov = fused_covariance(pd, problem.rho, V, sigma0, fac) / n
    warn = []
    if hasattr(cons, "blocks"):
        for b in cons.blocks:
            if hasattr(b, "diagnose"):
                warn.extend(b.diagnose(data, eta_tilde))
    resid = cons.values(data, theta_hat, eta_tilde, pi_hat, beta_hat).mean(axis=0)
    diagnostics = {
        "cond_A": fac.cond,
        "cond_nuisance": pd.nuisance_cond,
        "constraint_residual": resid,
        "initial_constraint_mean": pd.gbar,
        "score_bar": pd.score_bar,
        "rho": problem.rho,
        "sigma0": np.asarray(sigma0),
        "V": np.asarray(V),
        "warnings": warn,
    }
    return FusionResult(
        theta_hat=theta_hat, pi_hat=pi_hat, beta_hat=beta_hat, covariance=cov,
        standard_errors=np.sqrt(np.diag(cov)), theta_tilde=theta_tilde,
        pi_tilde=pi_tilde, beta_tilde=np.array(beta_tilde), diagnostics=diagnostics,
    )


def fuse(problem):
    """Fit the internal model, solve for pi and apply the one-step update."""
    fit = problem.model.fit(problem.data)
    pi = solve_initial_pi(problem, fit.theta, fit.eta)
    res = one_step_update(problem, fit.theta, fit.eta, pi)
    res.diagnostics["initial_fit"] = fit
    return res


# ---------------------------------------------------------------------------
# sandwich
# ---------------------------------------------------------------------------

def sandwich_sigma0(estfun, data, params, select=None):
    """Sandwich covariance ``J^{-1} K J^{-T}`` of an M-estimator.

    Parameters
    ----------
    estfun : callable
        ``estfun(data, params) -> (F, J)`` with per-row values (n, s) and
        Jacobians (n, s, s).
    data : InternalDataset
    params : array_like, shape (s,)
        Evaluation point.
    select : sequence of int, optional
        Sub-block to return (for example the beta entries).

    Returns
    -------
    ndarray
        ``J = E_n dF/dparams``, ``K`` the empirical covariance of F.
    """
    F, J = estfun(data, np.atleast_1d(np.asarray(params, dtype=float)))
    F = np.asarray(F, dtype=float).reshape(data.n, -1)
    Jbar = np.asarray(J, dtype=float).reshape(data.n, F.shape[1], -1).mean(axis=0)
    K = centered_cov(F)
    fac = Factor(Jbar, SingularJ, "estimating-function Jacobian")
    left = fac.solve(K)                     # J^-1 K
    sig = fac.solve(left.T).T               # J^-1 K J^-T
    sig = 0.5 * (sig + sig.T)
    if select is not None:
        sel = list(select)
        sig = sig[np.ix_(sel, sel)]
    return sig


# ---------------------------------------------------------------------------
# overlapping studies
# ---------------------------------------------------------------------------

class RedundancyConstraints(ConstraintSet):
    """Base constraints augmented with rows ``beta_a - beta_b`` for overlaps.

    Parameters
    ----------
    base : StackedConstraints
    pairs : sequence of (int, int)
        Study indices whose beta blocks estimate the same quantity.
    """

    def __init__(self, base, pairs):
        self.base = base
        self.pairs = tuple((int(a), int(b)) for a, b in pairs)
        sl = base.beta_slices
        for a, b in self.pairs:
            if sl[a].stop - sl[a].start != sl[b].stop - sl[b].start:
                raise DimMismatch("overlapping studies must have beta blocks of equal length")
        self.p, self.v, self.r = base.p, base.v, base.r
        self.q = base.q + sum(sl[a].stop - sl[a].start for a, _ in self.pairs)
        self.g_star_rows = base.g_star_rows
        self.blocks = getattr(base, "blocks", ())
        self._check_dims()

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True):
        theta, pi, beta = self._args(theta, pi, beta)
        e = self.base.evaluate(data, theta, eta, pi, beta, jacobians)
        n = data.n
        sl = self.base.beta_slices
        extra = np.concatenate([beta[sl[a]] - beta[sl[b]] for a, b in self.pairs])
        g = np.concatenate([e.g, np.broadcast_to(extra, (n, extra.size))], axis=1)
        if not jacobians:
            return ConstraintEval(g)
        k = extra.size
        jt = np.concatenate([e.jac_theta, np.zeros((n, k, self.p))], axis=1)
        jp = np.concatenate([e.jac_pi, np.zeros((n, k, self.v))], axis=1)
        jbx = np.zeros((k, self.r))
        o = 0
        for a, b in self.pairs:
            m = sl[a].stop - sl[a].start
            jbx[o:o + m, sl[a]] = np.eye(m)
            jbx[o:o + m, sl[b]] = -np.eye(m)
            o += m
        jb = np.concatenate([e.jac_beta, np.broadcast_to(jbx, (n, k, self.r))], axis=1)
        je = None
        if e.jac_eta is not None:
            je = np.concatenate([e.jac_eta, np.zeros((n, k, e.jac_eta.shape[2]))], axis=1)
        return ConstraintEval(g, jt, jp, jb, je)


def overlap_invariance_check(problem, pairs, theta_tilde, eta_tilde, pi_tilde, tol=1e-8):
    """Compare the plain stacking with the redundancy-augmented stacking.

    Path (a) is :func:`one_step_update` on the problem as stacked. Path (b)
    adds the constraint rows ``beta_a - beta_b`` for every overlapping pair
    and applies the same update with the same initial estimates, Sigma0 and
    V. The redundant rows usually make the augmented system rank deficient
    (the extra multipliers are not identified), so path (b) uses a
    least-squares solve and checks that the system is consistent; theta is
    identified either way.

    Returns
    -------
    ok : bool
        Whether the max deviation of theta_hat is at most ``tol``.
    max_dev : float
    """
    a = one_step_update(problem, theta_tilde, eta_tilde, pi_tilde)
    if not pairs:
        return True, 0.0
    cons = RedundancyConstraints(problem.constraints, pairs)
    pd = profile_nuisance(problem.model, cons, problem.data, np.asarray(theta_tilde, dtype=float),
                          eta_tilde, np.atleast_1d(pi_tilde), problem.beta_tilde)
    A = assemble_A(pd, problem.rho, a.diagnostics["V"])
    l = assemble_l(pd)
    x, *_ = np.linalg.lstsq(A, l, rcond=None)
    scale = max(np.linalg.norm(l), 1.0)
    if np.linalg.norm(A @ x - l) > 1e-8 * scale:
        raise FusionError("augmented overlap system is inconsistent")
    theta_b = np.asarray(theta_tilde, dtype=float) + (assemble_S(pd) @ x)[:problem.p] / np.sqrt(problem.n)
    dev = float(np.max(np.abs(a.theta_hat - theta_b)))
    return dev <= tol, dev
