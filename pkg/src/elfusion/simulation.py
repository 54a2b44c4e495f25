"""Monte Carlo engine for the linear, logistic and Cox fusion designs.

Every replicate draws its random numbers from its own Philox stream keyed by
``(seed, replicate)``, with one child stream for the internal data and one
per external study. Results therefore do not depend on how replicates are
scheduled across worker processes.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

from .cox import CoxModel, Subgroup, SurvivalConstraints, partial_information
from .exceptions import ConfigError, FusionError, TooManyFailures
from .fusion import fuse, stack_studies
from .interface import ExplicitSigma, ExternalSummary, InternalDataset
from .parametric import (
    LinearModel,
    LogisticModel,
    ReducedModelConstraints,
    fit_reduced_models,
    reduced_model_sandwich_fn,
)

__all__ = [
    "ScenarioConfig",
    "ReportRow",
    "MonteCarloReport",
    "default_subgroups",
    "generate_internal",
    "generate_external_summary",
    "build_problem",
    "run_replicate",
    "run_monte_carlo",
    "emit_report",
    "calibrate_censoring",
    "replicate_rngs",
]

FAMILIES = ("linear", "logistic", "cox")
Z975 = 1.959963984540054
MAX_FAILURE_SHARE = 0.05


def default_subgroups():
    """Subgroups {z1 <= 0, z2 = 0} and {z1 > 0, z2 = 0} at horizon 0.5."""
    return (Subgroup(0.5, ((0, "<=", 0.0), (1, "==", 0.0))),
            Subgroup(0.5, ((0, ">", 0.0), (1, "==", 0.0))))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation design.

    Parameters
    ----------
    family : {"linear", "logistic", "cox"}
    n : int
        Internal sample size.
    N : tuple of int
        External sample size of each study.
    theta_true : tuple of float
        ``(theta0, theta1, theta2)`` for the regression designs (intercept
        first) and the three Cox coefficients of ``(Z1, Z2, Z1 Z2)``.
    reps, seed : int
        Number of replicates and base seed.
    which : tuple of int
        Reduced models reported by the external studies (regression designs),
        as zero-based covariate columns.
    z_var, z_cov : covariate law of the regression designs, ``Var(Z1), Var(Z2)``
        and ``Cov(Z1, Z2)``.
    z2_prob : float
        ``P(Z2 = 1)`` in the Cox design.
    censor_upper : float
        Censoring times are uniform on ``[0, censor_upper]``.
    subgroups : tuple of Subgroup
        Cox constraint subgroups.
    pi_true : tuple of float
        Baseline-hazard multiplier of each external Cox study.
    pi_mode : {"known", "estimated"}
    pi_value : float
        Value of pi used when ``pi_mode`` is "known".
    v_policy : {"sandwich", "explicit"}
        ``sandwich`` sets V = Sigma0; ``explicit`` takes ``v_matrices``.
    v_matrices : tuple of ndarray, optional
    re : tuple of str
        Relative-efficiency columns to emit, from ``("se", "var")``.
    name : str
        Label used in the Setting column.
    """

    family: str
    n: int
    N: tuple
    theta_true: tuple
    reps: int = 1000
    seed: int = 0
    which: tuple = (0, 1)
    z_var: tuple = (1.0, 2.0)
    z_cov: float = 0.6
    z2_prob: float = 0.5
    censor_upper: float = 2.52
    subgroups: tuple = field(default_factory=default_subgroups)
    pi_true: tuple = ()
    pi_mode: str = "known"
    pi_value: float = 1.0
    v_policy: str = "sandwich"
    v_matrices: tuple = None
    re: tuple = ("se", "var")
    name: str = ""

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        N = (self.N,) if np.isscalar(self.N) else tuple(self.N)
        set_("N", tuple(int(x) for x in N))
        set_("theta_true", tuple(float(x) for x in self.theta_true))
        set_("which", tuple(int(x) for x in self.which))
        set_("z_var", tuple(float(x) for x in self.z_var))
        set_("subgroups", tuple(self.subgroups))
        pi_true = tuple(float(x) for x in self.pi_true) or (1.0,) * len(self.N)
        set_("pi_true", pi_true)
        set_("re", tuple(self.re))
        if int(self.reps) < 1:
            raise ConfigError("reps must be at least 1")
        if int(self.n) < 20:
            raise ConfigError("n must be at least 20")
        if not self.N or min(self.N) < 1:
            raise ConfigError("every external study needs N >= 1")
        if len(self.pi_true) != len(self.N):
            raise ConfigError("pi_true needs one value per external study")
        nums = self.theta_true + self.z_var + self.pi_true + (self.z_cov, self.z2_prob,
                                                              self.censor_upper, self.pi_value)
        if not all(math.isfinite(x) for x in nums):
            raise ConfigError("scenario numbers must be finite")
        if len(self.theta_true) != 3:
            raise ConfigError("theta_true must have three entries")
        cov = np.array([[self.z_var[0], self.z_cov], [self.z_cov, self.z_var[1]]])
        if len(self.z_var) != 2 or np.linalg.eigvalsh(cov).min() < 0 or self.z_var[0] <= 0:
            raise ConfigError("covariance matrix of (Z1, Z2) must be positive semidefinite")
        if not 0 < self.z2_prob < 1:
            raise ConfigError("z2_prob must be in (0, 1)")
        if self.censor_upper <= 0:
            raise ConfigError("censor_upper must be positive")
        if self.family != "cox" and (not self.which or min(self.which) < 0 or max(self.which) > 1):
            raise ConfigError("which must list covariate columns 0 and/or 1")
        if self.pi_mode not in ("known", "estimated"):
            raise ConfigError("pi_mode must be 'known' or 'estimated'")
        if self.v_policy not in ("sandwich", "explicit"):
            raise ConfigError("v_policy must be 'sandwich' or 'explicit'")
        if self.v_policy == "explicit":
            if self.v_matrices is None or len(self.v_matrices) != len(self.N):
                raise ConfigError("v_policy 'explicit' needs one v_matrix per study")
            set_("v_matrices", tuple(np.atleast_2d(np.asarray(v, dtype=float)) for v in self.v_matrices))
        if not set(self.re) <= {"se", "var"}:
            raise ConfigError("re entries must be 'se' or 'var'")
        if not self.name:
            set_("name", f"{self.family} n={self.n} N={'+'.join(map(str, self.N))}")

    @property
    def m(self):
        return len(self.N)

    @property
    def param_names(self):
        if self.family == "cox":
            return ("theta1", "theta2", "theta3")
        return ("theta0", "theta1", "theta2")

    @property
    def pi_names(self):
        if self.family != "cox" or self.pi_mode != "estimated":
            return ()
        return ("pi",) if self.m == 1 else tuple(f"pi{k + 1}" for k in range(self.m))

    @property
    def decimals(self):
        return 3 if self.family == "cox" else 4


def replicate_rngs(cfg, rep):
    """Generators for the internal data and each external study of a replicate."""
    ss = np.random.SeedSequence([int(cfg.seed), int(rep)])
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(1 + cfg.m)]


def _regression_covariates(cfg, rng, n):
    v1, v2 = cfg.z_var
    z1 = math.sqrt(v1) * rng.standard_normal(n)
    slope = cfg.z_cov / v1
    z2 = slope * z1 + math.sqrt(max(v2 - slope * cfg.z_cov, 0.0)) * rng.standard_normal(n)
    return np.column_stack([z1, z2])


def _cox_covariates(cfg, rng, n):
    z1 = rng.standard_normal(n)
    z2 = (rng.random(n) < cfg.z2_prob).astype(float)
    return np.column_stack([z1, z2, z1 * z2])


def _cox_times(cfg, rng, z, pi=1.0):
    # Lambda(t) = pi t^2  =>  T = sqrt(E exp(-theta'Z) / pi)
    e = rng.standard_exponential(z.shape[0])
    return np.sqrt(e * np.exp(-(z @ np.array(cfg.theta_true))) / pi)


def generate_internal(cfg, rng):
    """Simulate the internal dataset of a replicate."""
    return _simulate(cfg, rng, int(cfg.n))


def _simulate(cfg, rng, n):
    if cfg.family == "cox":
        z = _cox_covariates(cfg, rng, n)
        t = _cox_times(cfg, rng, z)
        c = cfg.censor_upper * rng.random(n)
        return InternalDataset(np.minimum(t, c), z, (t <= c).astype(float))
    z = _regression_covariates(cfg, rng, n)
    lin = cfg.theta_true[0] + z @ np.array(cfg.theta_true[1:])
    if cfg.family == "linear":
        y = lin + rng.standard_normal(n)
    else:
        y = (rng.random(n) < expit(lin)).astype(float)
    return InternalDataset(y, z)


def _subgroup_summary(cfg, z, t):
    masks = np.column_stack([s.mask(z) for s in cfg.subgroups]).astype(float)
    counts = masks.sum(axis=0)
    if np.any(counts == 0):
        raise FusionError("an external subgroup has no members")
    horizons = np.array([s.horizon for s in cfg.subgroups])
    surv = (t[:, None] > horizons[None, :]).astype(float)
    beta = (masks * surv).sum(axis=0) / counts
    # influence functions of the subgroup proportions, scaled to sqrt(N)
    N = z.shape[0]
    psi = masks * (surv - beta[None, :]) / (counts / N)[None, :]
    return beta, psi.T @ psi / N


def generate_external_summary(cfg, m, rng):
    """Simulate external study ``m`` and return its summary.

    Regression designs fit the reduced models on a fresh dataset of size
    ``N_m``; Sigma0 is the reduced-model sandwich evaluated on the internal
    data. Cox designs draw uncensored times with baseline ``pi_m t^2`` and
    report subgroup survival proportions at the horizons, with their
    influence-function covariance.
    """
    N = cfg.N[m]
    vm = cfg.v_matrices[m] if cfg.v_policy == "explicit" else None
    if cfg.family == "cox":
        z = _cox_covariates(cfg, rng, N)
        t = _cox_times(cfg, rng, z, cfg.pi_true[m])
        beta, sigma = _subgroup_summary(cfg, z, t)
        return ExternalSummary(beta, N, ExplicitSigma(sigma), vm)
    _, beta = fit_reduced_models(_simulate(cfg, rng, N), cfg.which, cfg.family)
    return ExternalSummary(beta, N, reduced_model_sandwich_fn(cfg.which, cfg.family), vm)


def build_problem(cfg, data, summaries):
    """Fusion problem for the scenario's model and constraint design."""
    if cfg.family == "cox":
        model = CoxModel()
        cons = [SurvivalConstraints(cfg.subgroups, 3, cfg.pi_mode, cfg.pi_value) for _ in summaries]
    else:
        model = LinearModel() if cfg.family == "linear" else LogisticModel()
        cons = [ReducedModelConstraints(cfg.which, cfg.family, p=3) for _ in summaries]
    policy = "explicit" if cfg.v_policy == "explicit" else "sigma0"
    return stack_studies(list(zip(cons, summaries)), model, data, v_policy=policy)


def _mle_se(problem, fit):
    if getattr(problem.model, "has_nuisance", False):
        info = partial_information(problem.data, fit.theta)
    else:
        info = -problem.n * problem.model.derivatives(problem.data, fit.theta).hessian
    return np.sqrt(np.diag(np.linalg.inv(info)))


def run_replicate(cfg, rep):
    """One replicate: simulate, fuse and return a flat record.

    Failures raised by the pipeline are caught and reported in the record.
    """
    rngs = replicate_rngs(cfg, rep)
    try:
        data = generate_internal(cfg, rngs[0])
        summaries = [generate_external_summary(cfg, m, rngs[m + 1]) for m in range(cfg.m)]
        problem = build_problem(cfg, data, summaries)
        res = fuse(problem)
        fit = res.diagnostics["initial_fit"]
        p, v = problem.p, problem.v
        npi = len(cfg.pi_names)
        record = {
            "rep": int(rep), "ok": True, "error": "",
            "mle": np.asarray(fit.theta, dtype=float),
            "mle_se": _mle_se(problem, fit),
            "est": np.concatenate([res.theta_hat, res.pi_hat[:npi]]),
            "est_se": np.concatenate([res.standard_errors[:p], res.standard_errors[p:p + v][:npi]]),
        }
        if not (np.all(np.isfinite(record["est"])) and np.all(np.isfinite(record["est_se"]))):
            raise FusionError("non-finite estimate")
        return record
    except (FusionError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return {"rep": int(rep), "ok": False, "error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class ReportRow:
    setting: str
    parameter: str
    bias: float
    se: float
    see: float
    cp: float
    re_se: float
    re_var: float


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    """Aggregated Monte Carlo results.

    ``failures`` replicates are excluded from every moment; ``failure_log``
    holds ``(rep, message)`` for each. ``replicates`` is the per-replicate
    dump when requested.
    """

    name: str
    rows: tuple
    reps: int
    failures: int
    decimals: int
    re: tuple = ("se", "var")
    failure_log: tuple = ()
    wall_time: float = 0.0
    replicates: tuple = None

    def row(self, setting_suffix, parameter):
        for r in self.rows:
            if r.setting.endswith(setting_suffix) and r.parameter == parameter:
                return r
        raise KeyError((setting_suffix, parameter))


def _moments(est, se, truth):
    est = np.asarray(est)
    bias = est.mean(axis=0) - truth
    sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.full(est.shape[1], np.nan)
    see = np.asarray(se).mean(axis=0)
    cp = (np.abs(est - truth) <= Z975 * np.asarray(se)).mean(axis=0)
    return bias, sd, see, cp


def _aggregate(cfg, records, wall, dump):
    ok = [r for r in records if r["ok"]]
    failed = [r for r in records if not r["ok"]]
    if len(failed) > MAX_FAILURE_SHARE * cfg.reps:
        raise TooManyFailures(f"{len(failed)} of {cfg.reps} replicates failed; first: {failed[0]['error']}")
    names = cfg.param_names
    rows = []
    if ok:
        theta = np.array(cfg.theta_true)
        b0, s0, e0, c0 = _moments([r["mle"] for r in ok], [r["mle_se"] for r in ok], theta)
        truth = np.concatenate([theta, np.array(cfg.pi_true[:len(cfg.pi_names)])])
        b1, s1, e1, c1 = _moments([r["est"] for r in ok], [r["est_se"] for r in ok], truth)
        for k, nm in enumerate(names):
            rows.append(ReportRow(f"{cfg.name} MLE", nm, b0[k], s0[k], e0[k], c0[k], 1.0, 1.0))
        for k, nm in enumerate(names + cfg.pi_names):
            ratio = s0[k] / s1[k] if k < len(names) else np.nan
            rows.append(ReportRow(f"{cfg.name} proposed", nm, b1[k], s1[k], e1[k], c1[k], ratio, ratio ** 2))
    return MonteCarloReport(
        name=cfg.name, rows=tuple(rows), reps=cfg.reps, failures=len(failed), decimals=cfg.decimals,
        re=cfg.re, failure_log=tuple((r["rep"], r["error"]) for r in failed), wall_time=wall,
        replicates=tuple(records) if dump else None,
    )


def _run_one(args):
    return run_replicate(*args)


def run_monte_carlo(cfg, workers=1, dump=False):
    """Run all replicates of a scenario and aggregate them.

    Parameters
    ----------
    cfg : ScenarioConfig
    workers : int
        Number of worker processes; 1 runs in the calling process.
    dump : bool
        Keep the per-replicate records in the report.

    Returns
    -------
    MonteCarloReport

    Raises
    ------
    TooManyFailures
        If more than 5% of the replicates fail.
    """
    start = time.perf_counter()
    jobs = [(cfg, rep) for rep in range(int(cfg.reps))]
    if workers <= 1:
        records = [_run_one(j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=chunk))
    return _aggregate(cfg, records, time.perf_counter() - start, dump)


_COLUMNS = ("Setting", "parameter", "Bias", "SE", "SEE", "CP", "RE_se", "RE_var")


def _cells(report, row):
    d = report.decimals
    fmt = lambda x: "" if not np.isfinite(x) else f"{x:.{d}f}"  # noqa: E731
    cells = [row.setting, row.parameter, fmt(row.bias), fmt(row.se), fmt(row.see), f"{row.cp:.3f}"]
    if "se" in report.re:
        cells.append("" if not np.isfinite(row.re_se) else f"{row.re_se:.2f}")
    if "var" in report.re:
        cells.append("" if not np.isfinite(row.re_var) else f"{row.re_var:.2f}")
    return cells + [str(report.reps), str(report.failures)]


def _header(report):
    cols = list(_COLUMNS[:6])
    cols += [c for c, k in (("RE_se", "se"), ("RE_var", "var")) if k in report.re]
    return cols + ["reps", "failures"]


def emit_report(report, format="csv"):
    """Render a report as CSV or a markdown table.

    Columns are Setting, parameter, Bias, SE, SEE, CP, RE_se, RE_var, reps,
    failures. Bias, SE and SEE use 4 decimals for regression designs and 3
    for survival designs; wall time is left out so output is reproducible.
    """
    header = _header(report)
    rows = [_cells(report, r) for r in report.rows]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if format in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError("format must be 'csv' or 'markdown'")


def calibrate_censoring(cfg, target=0.3, n_draws=200_000, seed=0):
    """Uniform censoring bound giving the target censoring rate.

    Uses ``P(C < T | T) = min(T / c, 1)`` for ``C ~ U[0, c]`` on a fixed
    Monte Carlo sample of event times, which is continuous and decreasing
    in ``c``.
    """
    if not 0 < target < 1:
        raise ValueError("target must be in (0, 1)")
    rng = np.random.Generator(np.random.Philox(seed))
    z = _cox_covariates(cfg, rng, n_draws)
    t = _cox_times(cfg, rng, z)

    def rate(c):
        return np.minimum(t / c, 1.0).mean() - target

    hi = float(np.max(t)) * 1e3
    return float(optimize.brentq(rate, 1e-12, hi, xtol=1e-12))
