import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from elfusion import (
    CoxFit,
    CoxModel,
    DataError,
    EmptySubgroup,
    InternalDataset,
    NoEvents,
    Subgroup,
    cox_nuisance_blocks,
    cumulative_hazard,
    finite_diff_jacobian,
    fit_cox,
    profile_nuisance,
    survival_constraints,
)
from elfusion.cox import breslow_jumps, partial_information, partial_loglik, partial_score
from elfusion.simulation import default_subgroups

from conftest import COX_THETA, cox_data, rel_err


def _tiny():
    return InternalDataset([1.0, 2.0, 2.0, 3.0], [[0.0], [1.0], [0.0], [1.0]], [1, 1, 1, 0])


def test_breslow_by_hand_with_ties():
    data = _tiny()
    theta = np.array([np.log(2.0)])
    times, events, jumps = breslow_jumps(data, theta)
    # risk sets: t=1 all four (1+2+1+2), t=2 rows 2..4 (2+1+2)
    assert np.array_equal(times, [1.0, 2.0])
    assert np.array_equal(events, [1.0, 2.0])
    assert np.allclose(jumps, [1 / 6, 2 / 5], atol=1e-15)
    assert np.isclose(partial_loglik(data, theta), np.log(2) - np.log(6) - 2 * np.log(5), atol=1e-14)


def test_partial_score_and_information_vs_fd():
    data = cox_data(120, 1)
    rng = np.random.default_rng(2)
    for _ in range(20):
        theta = rng.normal(0, 0.7, 3)
        s_fd = finite_diff_jacobian(lambda u: partial_loglik(data, u), theta).ravel()
        i_fd = -finite_diff_jacobian(lambda u: partial_score(data, u), theta)
        assert rel_err(partial_score(data, theta), s_fd) <= 1e-6
        assert rel_err(partial_information(data, theta), i_fd) <= 1e-6


def test_fit_cox_matches_direct_optimizer():
    data = cox_data(300, 3)
    fit = fit_cox(data)
    ref = optimize.minimize(lambda u: -partial_loglik(data, u), np.zeros(3),
                            jac=lambda u: -partial_score(data, u), method="BFGS",
                            options={"gtol": 1e-10}).x
    assert np.allclose(fit.theta, ref, atol=1e-5)
    assert np.max(np.abs(partial_score(data, fit.theta))) / data.n <= 1e-8
    assert fit.jumps.sum() == pytest.approx(cumulative_hazard(fit, data.y.max()))


def test_profile_loglik_is_partial_plus_constant():
    data = cox_data(100, 4)
    model = CoxModel()
    rng = np.random.default_rng(5)
    diffs = [model.profile_loglik(data, th)[0] - partial_loglik(data, th) for th in rng.normal(0, 0.5, (5, 3))]
    assert np.ptp(diffs) <= 1e-9


def test_full_loglik_derivatives_vs_fd():
    """Score, theta-theta, theta-eta and eta-eta blocks of the full log-likelihood."""
    data = cox_data(60, 6)
    fit = fit_cox(data)
    model = CoxModel()
    rng = np.random.default_rng(7)
    for _ in range(20):
        theta = fit.theta + rng.normal(0, 0.3, 3)
        lam = fit.jumps * np.exp(rng.normal(0, 0.2, fit.jumps.size))
        eta = CoxFit(theta, fit.event_times, lam, fit.events)
        b = cox_nuisance_blocks(eta, data, theta=theta)
        n, k = data.n, lam.size

        def ll(u):
            return model.loglik(data, u[:3], CoxFit(u[:3], fit.event_times, u[3:], fit.events))

        def score(u):
            bb = cox_nuisance_blocks(CoxFit(u[:3], fit.event_times, u[3:], fit.events), data, theta=u[:3])
            return np.concatenate([bb.score_rows.sum(axis=0), bb.m_eta.sum(axis=0)])

        x = np.concatenate([theta, lam])
        g_fd = finite_diff_jacobian(ll, x).ravel()
        assert rel_err(score(x), g_fd) <= 1e-6
        H = finite_diff_jacobian(score, x) / n
        assert rel_err(b.M_tt, H[:3, :3]) <= 1e-6
        assert rel_err(b.M_te, H[:3, 3:]) <= 1e-6
        assert rel_err(np.diag(b.M_ee), H[3:, 3:]) <= 1e-6


def test_survival_constraint_jacobians_20_points():
    data = cox_data(80, 8)
    fit = fit_cox(data)
    cons = survival_constraints(default_subgroups(), 3, "estimated")
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        theta = rng.normal(0, 0.5, 3)
        pi = rng.uniform(0.5, 2.0, 1)
        beta = rng.uniform(0.2, 0.9, 2)
        lam = fit.jumps * np.exp(rng.normal(0, 0.2, fit.jumps.size))
        eta = CoxFit(theta, fit.event_times, lam, fit.events)
        e = cons.evaluate(data, theta, eta, pi, beta)
        n, q = data.n, cons.q
        fds = {
            "jac_theta": finite_diff_jacobian(lambda u: cons.values(data, u, eta, pi, beta).ravel(), theta),
            "jac_pi": finite_diff_jacobian(lambda u: cons.values(data, theta, eta, u, beta).ravel(), pi),
            "jac_beta": finite_diff_jacobian(lambda u: cons.values(data, theta, eta, pi, u).ravel(), beta),
            "jac_eta": finite_diff_jacobian(lambda u: cons.values(
                data, theta, CoxFit(theta, fit.event_times, u, fit.events), pi, beta).ravel(), lam),
        }
        for k, v in fds.items():
            worst = max(worst, rel_err(getattr(e, k), v.reshape(n, q, -1)))
    assert worst <= 1e-6


def test_known_pi_has_no_pi_block():
    c = survival_constraints(default_subgroups(), 3, "known", 1.5)
    assert (c.v, c.q, c.r, c.g_star_rows) == (0, 2, 2, ())
    data = cox_data(50, 1)
    fit = fit_cox(data)
    g_known = c.values(data, fit.theta, fit, [], [0.5, 0.5])
    g_est = survival_constraints(default_subgroups(), 3).values(data, fit.theta, fit, [1.5], [0.5, 0.5])
    assert np.array_equal(g_known, g_est)


def test_profiled_score_equals_partial_score():
    data = cox_data(200, 10)
    fit = fit_cox(data)
    model = CoxModel()
    cons = survival_constraints(default_subgroups(), 3)
    rng = np.random.default_rng(11)
    for _ in range(5):
        theta = fit.theta + rng.normal(0, 0.1, 3)
        _, eta = model.profile_loglik(data, theta)
        pd = profile_nuisance(model, cons, data, theta, eta, [1.0], [0.6, 0.7])
        ps = partial_score(data, theta)
        assert np.max(np.abs(pd.score_bar * data.n - ps)) <= 1e-8 * max(1.0, np.max(np.abs(ps)))


def _fd_hessian(f, x, h=1e-4):
    k = x.size
    H = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            ei, ej = np.eye(k)[i] * h, np.eye(k)[j] * h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def test_profiled_information_matches_fd_profile_hessian():
    data = cox_data(500, 12)
    fit = fit_cox(data)
    model = CoxModel()
    cons = survival_constraints(default_subgroups(), 3)
    pd = profile_nuisance(model, cons, data, fit.theta, fit, [1.0], [0.6, 0.7])
    H = _fd_hessian(lambda u: model.profile_loglik(data, u)[0], fit.theta) / data.n
    assert rel_err(pd.M, H) <= 1e-4
    assert rel_err(-pd.M * data.n, partial_information(data, fit.theta)) <= 1e-8


@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=30))
def test_cumulative_hazard_step_function(ts):
    data = cox_data(40, 13)
    fit = fit_cox(data)
    t = np.sort(np.array(ts))
    h = cumulative_hazard(fit, t)
    assert np.all(np.diff(h) >= 0)
    # right-continuous steps located at the event times
    et = fit.event_times
    at = cumulative_hazard(fit, et)
    before = cumulative_hazard(fit, np.nextafter(et, 0))
    assert np.allclose(at - before, fit.jumps, atol=1e-15)
    assert cumulative_hazard(fit, 0.0) == 0.0
    with pytest.raises(ValueError):
        cumulative_hazard(fit, -1.0)


def _true_subgroup_survival(theta, horizon, z1_side):
    """S(t) averaged over {z1 on one side of 0, z2 = 0}, baseline Lambda = t^2."""
    lo, hi = (-12.0, 0.0) if z1_side == "le" else (0.0, 12.0)
    f = lambda z: stats.norm.pdf(z) * np.exp(-horizon ** 2 * np.exp(theta[0] * z))  # noqa: E731
    return integrate.quad(f, lo, hi, epsabs=1e-13)[0] / 0.5


def test_subgroup_constraint_mean_zero_at_truth():
    data = cox_data(1_000_000, 14)
    theta = np.array(COX_THETA)
    cons = survival_constraints(default_subgroups(), 3, "known", 1.0)
    beta = [_true_subgroup_survival(theta, 0.5, "le"), _true_subgroup_survival(theta, 0.5, "gt")]
    eta = CoxFit(theta, np.array([0.5]), np.array([0.25]), np.array([1.0]))   # Lambda(0.5) = 0.25
    g = cons.values(data, theta, eta, [], beta)
    se = g.std(axis=0, ddof=1) / np.sqrt(data.n)
    assert np.all(np.abs(g.mean(axis=0)) <= 3 * se)


def test_cox_errors_and_diagnostics():
    z = np.linspace(-1, 1, 10)[:, None]
    with pytest.raises(NoEvents):
        fit_cox(InternalDataset(np.arange(1.0, 11.0), z, np.zeros(10)))
    with pytest.raises(DataError):
        fit_cox(InternalDataset(np.arange(1.0, 11.0), z))
    data = cox_data(60, 15)
    fit = fit_cox(data)
    far = survival_constraints([Subgroup(1e6, ((0, "<=", 0.0),))], 3)
    assert any("beyond the last event" in w for w in far.diagnose(data, fit))
    small = survival_constraints([Subgroup(0.5, lambda z: np.arange(z.shape[0]) < 3)], 3)
    assert any("only 3 internal members" in w for w in small.diagnose(data, fit))
    empty = survival_constraints([Subgroup(0.5, ((1, "==", 7.0),))], 3)
    with pytest.raises(EmptySubgroup):
        empty.values(data, fit.theta, fit, [1.0], [0.5])
    with pytest.raises(ValueError):
        Subgroup(-1.0)
    with pytest.raises(ValueError):
        Subgroup(1.0, ((0, "~", 1.0),))


def test_callable_subgroup():
    data = cox_data(50, 16)
    sg = Subgroup(0.5, lambda z: z[:, 1] == 1)
    assert np.array_equal(sg.mask(data.z), data.z[:, 1] == 1)
