"""Problem abstractions shared by all models.

Holds the data containers, the constraint-set protocol, the model protocol,
numerical differentiation and the generic nuisance profiler that turns raw
per-row derivatives into the profiled averages consumed by the fusion engine.

Arrays are stored read-only; all operations are pure functions of their
inputs so objects can be shared freely across worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._linalg import DiagFactor, Factor, centered_cov, check_spd
from .exceptions import (
    DataError,
    DimMismatch,
    NonFiniteEvaluation,
    SingularNuisanceBlock,
)

__all__ = [
    "InternalDataset",
    "ExplicitSigma",
    "SandwichFromInternal",
    "ExternalSummary",
    "ConstraintEval",
    "ConstraintSet",
    "FunctionConstraints",
    "StackedConstraints",
    "ModelFit",
    "ModelDerivatives",
    "SemiparametricModel",
    "ProfiledDerivatives",
    "finite_diff_jacobian",
    "profile_nuisance",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InternalDataset:
    """Individual-level data of the internal study.

    Parameters
    ----------
    y : array_like, shape (n,)
        Response, or follow-up time for survival data.
    z : array_like, shape (n, d)
        Covariates. ``d`` may be zero (intercept-only regression).
    delta : array_like, shape (n,), optional
        Event indicator. Its presence marks the data as survival data.
    names : sequence of str, optional
        Covariate names, defaults to ``z1, ..., zd``.
    """

    y: np.ndarray
    z: np.ndarray
    delta: Optional[np.ndarray] = None
    names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.ndim != 2 or z.shape[0] != y.size:
            raise DataError(f"z must have shape (n, d) with n={y.size}, got {z.shape}")
        n = y.size
        if n < 2:
            raise DataError("need at least 2 observations")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise DataError("data contain non-finite entries")
        delta = self.delta
        if delta is not None:
            delta = np.asarray(delta, dtype=float).ravel()
            if delta.size != n:
                raise DataError("delta must have length n")
            if not np.all((delta == 0) | (delta == 1)):
                raise DataError("delta must take values in {0, 1}")
            if np.any(y <= 0):
                raise DataError("survival times must be positive")
            delta = _frozen(delta)
        names = tuple(self.names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise DataError("names must match the number of covariates")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def is_survival(self) -> bool:
        return self.delta is not None

    def design(self) -> np.ndarray:
        """Regression design matrix ``[1, z]``."""
        return np.column_stack([np.ones(self.n), self.z])


@dataclass(frozen=True, eq=False)
class ExplicitSigma:
    """User-supplied covariance of sqrt(N) (beta_tilde - beta0)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = check_spd(self.matrix, "Sigma0")
        object.__setattr__(self, "matrix", _frozen(m))


@dataclass(frozen=True, eq=False)
class SandwichFromInternal:
    """Sigma0 estimated by a sandwich on the internal data.

    ``estfun(data, params)`` must return ``(F, J)`` with ``F`` of shape
    (n, s) and ``J`` of shape (n, s, s), the per-row estimating function and
    its Jacobian in ``params``. ``params`` is the concatenation of the
    constraint block's (pi, beta); ``beta_index`` selects the beta entries.
    """

    estfun: Callable
    beta_index: tuple

    def __post_init__(self):
        object.__setattr__(self, "beta_index", tuple(int(i) for i in self.beta_index))


@dataclass(frozen=True, eq=False)
class ExternalSummary:
    """Summary estimate reported by one external study.

    Parameters
    ----------
    beta_hat : array_like, shape (r,)
        External estimate beta_tilde.
    n_ext : int
        External sample size N.
    cov : ExplicitSigma or SandwichFromInternal
        Covariance specification for sqrt(N) (beta_tilde - beta0).
    v_matrix : array_like, shape (r, r), optional
        Weight matrix V; defaults to the resolved Sigma0.
    """

    beta_hat: np.ndarray
    n_ext: int
    cov: object
    v_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta_hat, dtype=float)).ravel()
        if not np.all(np.isfinite(b)):
            raise DataError("beta_hat must be finite")
        if int(self.n_ext) < 1 or int(self.n_ext) != self.n_ext:
            raise DataError("n_ext must be a positive integer")
        if not isinstance(self.cov, (ExplicitSigma, SandwichFromInternal)):
            raise TypeError("cov must be ExplicitSigma or SandwichFromInternal")
        if isinstance(self.cov, ExplicitSigma) and self.cov.matrix.shape != (b.size, b.size):
            raise DimMismatch("Sigma0 shape does not match beta_hat")
        v = self.v_matrix
        if v is not None:
            v = check_spd(v, "V")
            if v.shape != (b.size, b.size):
                raise DimMismatch("V shape does not match beta_hat")
            v = _frozen(v)
        object.__setattr__(self, "beta_hat", _frozen(b))
        object.__setattr__(self, "n_ext", int(self.n_ext))
        object.__setattr__(self, "v_matrix", v)

    @property
    def r(self) -> int:
        return self.beta_hat.size


# ---------------------------------------------------------------------------
# numerical differentiation
# ---------------------------------------------------------------------------

def finite_diff_jacobian(f, x, rel_step=1e-6):
    """Central-difference Jacobian.

    Parameters
    ----------
    f : callable
        Map from an s-vector to a t-vector (or scalar).
    x : array_like, shape (s,)
        Evaluation point.
    rel_step : float
        Step for coordinate j is ``rel_step * (1 + |x_j|)``.

    Returns
    -------
    ndarray, shape (t, s)
    """
    if rel_step <= 0:
        raise ValueError("rel_step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for j in range(x.size):
        h = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float)).ravel()
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float)).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"non-finite value when probing coordinate {j}")
        cols.append((fp - fm) / (2.0 * h))
    if not cols:
        t = np.atleast_1d(np.asarray(f(x), dtype=float)).size
        return np.zeros((t, 0))
    return np.column_stack(cols)


def _rowwise_fd(fun, x, n, q, rel_step=1e-6):
    """Per-row Jacobian (n, q, s) of a map returning an (n, q) array."""
    jac = finite_diff_jacobian(lambda u: fun(u).ravel(), x, rel_step)
    return jac.reshape(n, q, -1)


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstraintEval:
    """Per-row constraint values and Jacobians.

    ``g`` has shape (n, q); ``jac_theta``, ``jac_pi``, ``jac_beta`` have
    shapes (n, q, p), (n, q, v), (n, q, r); ``jac_eta`` is (n, q, k) or None
    when the model has no nuisance coordinates.
    """

    g: np.ndarray
    jac_theta: Optional[np.ndarray] = None
    jac_pi: Optional[np.ndarray] = None
    jac_beta: Optional[np.ndarray] = None
    jac_eta: Optional[np.ndarray] = None


class ConstraintSet:
    """Linkage function g(X; theta, eta, pi, beta) with its derivatives.

    Subclasses set the dimensions ``p, v, q, r`` and ``g_star_rows`` and
    implement :meth:`evaluate`.
    """

    p: int
    v: int
    q: int
    r: int
    g_star_rows: tuple = ()

    def _check_dims(self):
        if self.q < 1 or self.q < self.v:
            raise DimMismatch(f"need q >= max(v, 1), got q={self.q}, v={self.v}")
        rows = tuple(int(i) for i in self.g_star_rows)
        if len(rows) != self.v or len(set(rows)) != self.v:
            raise DimMismatch("g_star_rows must hold exactly v distinct indices")
        if any(i < 0 or i >= self.q for i in rows):
            raise DimMismatch("g_star_rows out of range")
        self.g_star_rows = rows

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True) -> ConstraintEval:
        raise NotImplementedError

    def values(self, data, theta, eta, pi, beta) -> np.ndarray:
        return self.evaluate(data, theta, eta, pi, beta, jacobians=False).g

    def _args(self, theta, pi, beta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        pi = np.atleast_1d(np.asarray(pi, dtype=float)).ravel()
        beta = np.atleast_1d(np.asarray(beta, dtype=float)).ravel()
        if theta.size != self.p or pi.size != self.v or beta.size != self.r:
            raise DimMismatch(
                f"expected (p, v, r) = ({self.p}, {self.v}, {self.r}), "
                f"got ({theta.size}, {pi.size}, {beta.size})"
            )
        return theta, pi, beta


class FunctionConstraints(ConstraintSet):
    """Constraint set built from user callables.

    Parameters
    ----------
    fn : callable
        ``fn(data, theta, eta, pi, beta)`` returning an (n, q) array.
    p, v, r : int
        Dimensions of theta, pi and beta.
    g_star_rows : sequence of int, optional
        Rows forming g*; defaults to the first v rows.
    jac_theta, jac_pi, jac_beta, jac_eta : callable, optional
        Analytic per-row Jacobians with the same signature as ``fn``.
        Missing theta/pi/beta Jacobians are replaced by central differences
        with relative step 1e-6.
    """

    def __init__(self, fn, p, v, r, q, g_star_rows=None, jac_theta=None,
                 jac_pi=None, jac_beta=None, jac_eta=None):
        self.fn = fn
        self.p, self.v, self.r, self.q = int(p), int(v), int(r), int(q)
        self.g_star_rows = tuple(range(self.v)) if g_star_rows is None else tuple(g_star_rows)
        self._jt, self._jp, self._jb, self._je = jac_theta, jac_pi, jac_beta, jac_eta
        self._check_dims()

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True):
        theta, pi, beta = self._args(theta, pi, beta)
        g = np.asarray(self.fn(data, theta, eta, pi, beta), dtype=float).reshape(data.n, self.q)
        if not jacobians:
            return ConstraintEval(g)
        n, q = data.n, self.q

        def pick(analytic, wrt):
            if analytic is not None:
                return np.asarray(analytic(data, theta, eta, pi, beta), dtype=float)
            if wrt == "theta":
                return _rowwise_fd(lambda u: self.fn(data, u, eta, pi, beta), theta, n, q)
            if wrt == "pi":
                return _rowwise_fd(lambda u: self.fn(data, theta, eta, u, beta), pi, n, q)
            return _rowwise_fd(lambda u: self.fn(data, theta, eta, pi, u), beta, n, q)

        je = None if self._je is None else np.asarray(self._je(data, theta, eta, pi, beta), dtype=float)
        return ConstraintEval(g, pick(self._jt, "theta"), pick(self._jp, "pi"),
                              pick(self._jb, "beta"), je)


class StackedConstraints(ConstraintSet):
    """Vertical stacking of constraint blocks from several external studies.

    All blocks share theta and eta; each block has its own pi and beta,
    which are concatenated in block order.
    """

    def __init__(self, blocks: Sequence[ConstraintSet]):
        blocks = tuple(blocks)
        if not blocks:
            raise DimMismatch("need at least one constraint block")
        p = {b.p for b in blocks}
        if len(p) != 1:
            raise DimMismatch("all blocks must share the theta dimension")
        self.blocks = blocks
        self.p = blocks[0].p
        self.v = sum(b.v for b in blocks)
        self.q = sum(b.q for b in blocks)
        self.r = sum(b.r for b in blocks)
        rows, self.pi_slices, self.beta_slices, self.g_slices = [], [], [], []
        oq = ov = orr = 0
        for b in blocks:
            rows.extend(oq + i for i in b.g_star_rows)
            self.g_slices.append(slice(oq, oq + b.q))
            self.pi_slices.append(slice(ov, ov + b.v))
            self.beta_slices.append(slice(orr, orr + b.r))
            oq, ov, orr = oq + b.q, ov + b.v, orr + b.r
        self.g_star_rows = tuple(rows)
        self._check_dims()

    def evaluate(self, data, theta, eta, pi, beta, jacobians=True):
        theta, pi, beta = self._args(theta, pi, beta)
        parts = [b.evaluate(data, theta, eta, pi[sp], beta[sb], jacobians)
                 for b, sp, sb in zip(self.blocks, self.pi_slices, self.beta_slices)]
        g = np.concatenate([e.g for e in parts], axis=1)
        if not jacobians:
            return ConstraintEval(g)
        n = data.n
        jt = np.concatenate([e.jac_theta for e in parts], axis=1)
        jp = np.zeros((n, self.q, self.v))
        jb = np.zeros((n, self.q, self.r))
        for e, sg, sp, sb in zip(parts, self.g_slices, self.pi_slices, self.beta_slices):
            jp[:, sg, sp] = e.jac_pi
            jb[:, sg, sb] = e.jac_beta
        if all(e.jac_eta is None for e in parts):
            je = None
        else:
            je = np.concatenate([e.jac_eta for e in parts], axis=1)
        return ConstraintEval(g, jt, jp, jb, je)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelFit:
    """Result of fitting an internal model: (theta_tilde, eta_tilde)."""

    theta: np.ndarray
    eta: object = None
    loglik: float = np.nan
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class ModelDerivatives:
    """Raw derivatives of the criterion at (theta, eta).

    Attributes
    ----------
    score_rows : ndarray, shape (n, p)
        Per-row m_theta.
    hessian : ndarray, shape (p, p)
        E_n m_thetatheta.
    eta_score_rows : ndarray, shape (n, k) or None
        Per-row m_eta in the nuisance coordinates.
    M_theta_eta : ndarray, shape (p, k) or None
        E_n m_thetaeta.
    M_eta_eta : ndarray, shape (k,) or (k, k), or None
        E_n m_etaeta; a 1-d array denotes a diagonal block.
    """

    score_rows: np.ndarray
    hessian: np.ndarray
    eta_score_rows: Optional[np.ndarray] = None
    M_theta_eta: Optional[np.ndarray] = None
    M_eta_eta: Optional[np.ndarray] = None

    @property
    def has_nuisance(self) -> bool:
        return self.eta_score_rows is not None and self.eta_score_rows.shape[1] > 0


class SemiparametricModel:
    """Protocol for internal models.

    Subclasses implement ``n_params``, ``fit``, ``loglik``, ``derivatives``
    and ``profile_loglik``. ``loglik`` returns the summed criterion.
    """

    has_nuisance = False

    def n_params(self, data) -> int:
        raise NotImplementedError

    def fit(self, data) -> ModelFit:
        raise NotImplementedError

    def loglik(self, data, theta, eta=None) -> float:
        raise NotImplementedError

    def derivatives(self, data, theta, eta=None) -> ModelDerivatives:
        raise NotImplementedError

    def profile_loglik(self, data, theta):
        """Return ``(max_eta loglik(theta, eta), eta_hat(theta))``."""
        return self.loglik(data, theta, None), None


# ---------------------------------------------------------------------------
# profiling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProfiledDerivatives:
    """Empirical averages with the nuisance profiled out.

    ``M`` is E_n of the profiled Hessian, ``Gt``, ``Gp``, ``Gb`` are the
    averaged constraint Jacobians (theta profiled), ``Gmat`` the profiled
    second-moment matrix of g, ``gbar``/``score_bar`` the averaged profiled
    constraint and score, and the ``per_row_*`` arrays hold the profiled
    per-row contributions used to estimate W.
    """

    M: np.ndarray
    Gt: np.ndarray
    Gp: np.ndarray
    Gb: np.ndarray
    Gmat: np.ndarray
    gbar: np.ndarray
    score_bar: np.ndarray
    per_row_scores: np.ndarray
    per_row_g: np.ndarray
    g_star_rows: tuple = ()
    nuisance_cond: float = 1.0

    @property
    def n(self) -> int:
        return self.per_row_scores.shape[0]

    @property
    def p(self) -> int:
        return self.M.shape[0]

    @property
    def v(self) -> int:
        return self.Gp.shape[1]

    @property
    def q(self) -> int:
        return self.Gmat.shape[0]

    @property
    def r(self) -> int:
        return self.Gb.shape[1]

    @property
    def Gstar(self):
        return self.Gmat[list(self.g_star_rows), :]

    @property
    def Gt_star(self):
        return self.Gt[list(self.g_star_rows), :]

    @property
    def Gp_star(self):
        return self.Gp[list(self.g_star_rows), :]

    @property
    def Gb_star(self):
        return self.Gb[list(self.g_star_rows), :]


def profile_nuisance(model, constraints, data, theta, eta, pi, beta, centered=True):
    """Profile the nuisance coordinates out of scores and constraints.

    With nuisance coordinates (dimension k) this computes
    ``h1 = M_ee^{-1} M_et`` and ``h2 = M_ee^{-1} G_e^T`` and returns

    * ``M = E_n m_tt - M_te h1``
    * ``Gt = E_n g_t - G_e h1``
    * ``Gmat = E_n g g^T - G_e h2``
    * per-row ``m_t - m_e h1`` and ``g - m_e h2``.

    For parametric models the plain averages are returned.

    Parameters
    ----------
    centered : bool
        If True (default) the second moment of g in ``Gmat`` is the
        empirical covariance (g centered at its mean). The two versions are
        asymptotically equivalent at root-n consistent initial estimates.

    Raises
    ------
    SingularNuisanceBlock
        If the nuisance Hessian block has condition number above 1e12.
    """
    d = model.derivatives(data, theta, eta)
    ce = constraints.evaluate(data, theta, eta, pi, beta, jacobians=True)
    n = data.n
    if ce.g.shape[0] != n or ce.jac_theta.shape[2] != d.score_rows.shape[1]:
        raise DimMismatch("constraint and model dimensions disagree")
    g = ce.g
    score_rows = d.score_rows
    M = d.hessian
    Gt = ce.jac_theta.mean(axis=0)
    Gp = ce.jac_pi.mean(axis=0)
    Gb = ce.jac_beta.mean(axis=0)
    Gmat = centered_cov(g) if centered else g.T @ g / n
    cond = 1.0
    if d.has_nuisance:
        Mee = d.M_eta_eta
        factor_cls = DiagFactor if np.ndim(Mee) == 1 else Factor
        fac = factor_cls(Mee, SingularNuisanceBlock, "nuisance Hessian block")
        cond = fac.cond
        k = d.eta_score_rows.shape[1]
        je = ce.jac_eta
        if je is None:
            G_eta = np.zeros((constraints.q, k))
        else:
            G_eta = je.mean(axis=0)
        h1 = fac.solve(d.M_theta_eta.T)
        h2 = fac.solve(G_eta.T)
        M = M - d.M_theta_eta @ h1
        Gt = Gt - G_eta @ h1
        Gmat = Gmat - G_eta @ h2
        m_eta = d.eta_score_rows
        score_rows = score_rows - m_eta @ h1
        g = g - m_eta @ h2
        M = 0.5 * (M + M.T)
    Gmat = 0.5 * (Gmat + Gmat.T)
    return ProfiledDerivatives(
        M=M, Gt=Gt, Gp=Gp, Gb=Gb, Gmat=Gmat,
        gbar=g.mean(axis=0), score_bar=score_rows.mean(axis=0),
        per_row_scores=score_rows, per_row_g=g,
        g_star_rows=tuple(constraints.g_star_rows), nuisance_cond=cond,
    )
