import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize
from scipy.special import expit

from elfusion import (
    DataError,
    DimMismatch,
    InternalDataset,
    LinearModel,
    LogisticModel,
    Separation,
    SingularDesign,
    finite_diff_jacobian,
    fit_linear,
    fit_logistic,
    fit_reduced_models,
    linear_reduced_constraints,
    logistic_reduced_constraints,
    reduced_model_sandwich_fn,
    sandwich_sigma0,
)
from elfusion.parametric import ReducedModelConstraints

from conftest import LINEAR_THETA, linear_data, rel_err


def _jacobian_errors(cons, data, theta, pi, beta):
    e = cons.evaluate(data, theta, None, pi, beta)
    n, q = data.n, cons.q
    fd = {
        "jac_theta": finite_diff_jacobian(lambda u: cons.values(data, u, None, pi, beta).ravel(), theta),
        "jac_pi": finite_diff_jacobian(lambda u: cons.values(data, theta, None, u, beta).ravel(), pi),
        "jac_beta": finite_diff_jacobian(lambda u: cons.values(data, theta, None, pi, u).ravel(), beta),
    }
    return {k: rel_err(getattr(e, k), v.reshape(n, q, -1)) for k, v in fd.items()}


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_reduced_constraint_jacobians_20_points(family):
    rng = np.random.default_rng(11)
    data = linear_data(60, 12, family=family)
    cons = ReducedModelConstraints((0, 1), family, p=3)
    worst = 0.0
    for _ in range(20):
        theta, pi, beta = rng.normal(0, 0.5, 3), rng.normal(0, 0.5, 2), rng.normal(0, 0.5, 2)
        worst = max(worst, max(_jacobian_errors(cons, data, theta, pi, beta).values()))
    assert worst <= 1e-6


@pytest.mark.parametrize("model,family", [(LinearModel(), "linear"), (LogisticModel(), "logistic")])
def test_model_score_and_hessian_vs_fd(model, family):
    rng = np.random.default_rng(13)
    data = linear_data(80, 14, family=family)
    for _ in range(20):
        theta = rng.normal(0, 0.5, 3)
        d = model.derivatives(data, theta)
        g_fd = finite_diff_jacobian(lambda u: model.loglik(data, u), theta).ravel() / data.n
        h_fd = finite_diff_jacobian(lambda u: model.derivatives(data, u).score_rows.mean(axis=0), theta)
        assert rel_err(d.score_rows.mean(axis=0), g_fd) <= 1e-6
        assert rel_err(d.hessian, h_fd) <= 1e-6


def test_fit_linear_matches_lstsq():
    data = linear_data(200, 1)
    ref = np.linalg.lstsq(data.design(), data.y, rcond=None)[0]
    assert np.allclose(fit_linear(data)[0], ref, atol=1e-12)
    score = LinearModel().derivatives(data, fit_linear(data)[0]).score_rows.mean(axis=0)
    assert np.max(np.abs(score)) <= 1e-8


def test_fit_logistic_matches_direct_optimizer_and_is_monotone():
    data = linear_data(400, 2, family="logistic")
    theta, info = fit_logistic(data)
    model = LogisticModel()
    ref = optimize.minimize(lambda u: -model.loglik(data, u), np.zeros(3),
                            jac=lambda u: -model.derivatives(data, u).score_rows.sum(axis=0),
                            method="BFGS", options={"gtol": 1e-10}).x
    assert np.allclose(theta, ref, atol=1e-5)
    assert np.max(np.abs(model.derivatives(data, theta).score_rows.mean(axis=0))) <= 1e-8
    assert np.all(np.diff(info["loglik"]) >= 0)


def test_fit_errors():
    z = np.linspace(-1, 1, 20)[:, None]
    with pytest.raises(DataError):
        fit_linear(InternalDataset(np.ones(20), z))
    with pytest.raises(SingularDesign):
        fit_linear(InternalDataset(np.arange(20.0), np.hstack([z, z])))
    with pytest.raises(DataError):
        fit_logistic(InternalDataset(np.zeros(20), z))
    with pytest.raises(DataError):
        fit_logistic(InternalDataset(np.full(20, 0.5), z))
    with pytest.raises(Separation):
        fit_logistic(InternalDataset((z[:, 0] > 0).astype(float), z))
    with pytest.raises(DataError):
        fit_linear(InternalDataset(np.arange(1.0, 21.0), z, np.ones(20)))


def test_reduced_constraints_shape():
    c = linear_reduced_constraints((1,), p=3)
    assert (c.p, c.v, c.q, c.r, c.g_star_rows) == (3, 1, 2, 1, (0,))
    assert logistic_reduced_constraints((0, 1)).p == 3
    with pytest.raises(DimMismatch):
        linear_reduced_constraints((0, 0))
    with pytest.raises(DimMismatch):
        linear_reduced_constraints((1,), p=2)
    with pytest.raises(ValueError):
        ReducedModelConstraints((0,), "probit")


def test_reduced_fit_is_root_of_estimating_function():
    data = linear_data(300, 3)
    pi, beta = fit_reduced_models(data, (0, 1))
    for k, c in enumerate((0, 1)):
        ref = np.polyfit(data.z[:, c], data.y, 1)
        assert np.allclose([beta[k], pi[k]], ref, atol=1e-12)
    sw = reduced_model_sandwich_fn((0, 1))
    F, J = sw.estfun(data, np.concatenate([pi, beta]))
    assert np.max(np.abs(F.mean(axis=0))) <= 1e-12
    assert rel_err(J.mean(axis=0), finite_diff_jacobian(
        lambda u: sw.estfun(data, u)[0].mean(axis=0), np.concatenate([pi, beta]))) <= 1e-6


def test_linear_sandwich_equals_hc0():
    data = linear_data(250, 4)
    pi, beta = fit_reduced_models(data, (1,))
    sw = reduced_model_sandwich_fn((1,))
    sig = sandwich_sigma0(sw.estfun, data, np.concatenate([pi, beta]), sw.beta_index)
    x = np.column_stack([np.ones(data.n), data.z[:, 1]])
    e = data.y - x @ np.array([pi[0], beta[0]])
    bread = np.linalg.inv(x.T @ x / data.n)
    meat = (x * e[:, None] ** 2).T @ x / data.n
    assert np.allclose(sig, (bread @ meat @ bread)[1, 1], rtol=1e-10)


# ---------------------------------------------------------------------------
# constraint consistency at population reduced-model values
# ---------------------------------------------------------------------------

def _population_reduced(theta, family, which):
    """Reduced-model (pi, beta) of the design by Gauss-Hermite quadrature."""
    v1, v2, c = 1.0, 2.0, 0.6
    x, w = hermegauss(80)
    w = w / w.sum()
    if family == "linear":
        # E(Y | Zk) is linear; closed form
        cov = np.array([[v1, c], [c, v2]])
        b = (cov @ np.array(theta[1:]))[which] / cov[which, which]
        return theta[0], b
    # logistic: integrate over the conditional law of the other covariate
    sd = np.sqrt(v1 if which == 0 else v2)
    other = 1 - which
    slope = c / (v1 if which == 0 else v2)
    resid_sd = np.sqrt((v2 if which == 0 else v1) - slope * c)
    zk = sd * x
    zo = slope * zk[:, None] + resid_sd * x[None, :]
    coef = np.array(theta[1:])
    m = (expit(theta[0] + coef[which] * zk[:, None] + coef[other] * zo) * w[None, :]).sum(axis=1)

    def eqs(ab):
        e = expit(ab[0] + ab[1] * zk) - m
        return [np.sum(w * e), np.sum(w * e * zk)]

    return tuple(optimize.fsolve(eqs, [0.0, 0.0], xtol=1e-13))


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_constraint_mean_zero_at_population_values(family):
    data = linear_data(1_000_000, 21, family=family)
    theta = np.array(LINEAR_THETA)
    for which in (0, 1):
        pi, beta = _population_reduced(LINEAR_THETA, family, which)
        g = ReducedModelConstraints((which,), family, p=3).values(data, theta, None, [pi], [beta])
        se = g.std(axis=0, ddof=1) / np.sqrt(data.n)
        assert np.all(np.abs(g.mean(axis=0)) <= 3 * se)


def test_population_linear_values_match_design():
    # slope of Y on Z1: 0.1 + 0.2 * 0.6; slope on Z2: (0.1 * 0.6 + 0.2 * 2) / 2
    assert np.isclose(_population_reduced(LINEAR_THETA, "linear", 0)[1], 0.22)
    assert np.isclose(_population_reduced(LINEAR_THETA, "linear", 1)[1], 0.23)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_logistic_constraint_vanishes_when_reduced_equals_full(a, b):
    """With theta2 = 0 the reduced Z1 model is the full model, so g = 0 rowwise."""
    data = linear_data(30, 5, family="logistic")
    g = ReducedModelConstraints((0,), "logistic", p=3).values(data, np.array([a, b, 0.0]), None, [a], [b])
    assert np.max(np.abs(g)) <= 1e-15
