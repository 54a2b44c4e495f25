import csv
import io

import numpy as np
import pytest

from elfusion import ConfigError, TooManyFailures, fuse
from elfusion.cox import Subgroup
from elfusion.simulation import (
    ScenarioConfig,
    build_problem,
    calibrate_censoring,
    emit_report,
    generate_external_summary,
    generate_internal,
    replicate_rngs,
    run_monte_carlo,
    run_replicate,
)

LIN = dict(family="linear", n=100, N=(200,), theta_true=(0.1, 0.1, 0.2))
COX = dict(family="cox", n=100, N=(300,), theta_true=(-0.5, 1.0, -0.5))


@pytest.mark.parametrize("bad", [
    dict(family="probit"), dict(n=10), dict(reps=0), dict(N=(0,)),
    dict(theta_true=(0.1, np.nan, 0.2)), dict(theta_true=(0.1, 0.2)),
    dict(z_cov=5.0), dict(z2_prob=1.0), dict(censor_upper=0.0), dict(which=(2,)),
    dict(pi_mode="guess"), dict(v_policy="explicit"), dict(re=("sd",)), dict(pi_true=(1.0, 2.0)),
])
def test_scenario_validation(bad):
    with pytest.raises(ConfigError):
        ScenarioConfig(**{**LIN, **bad})


def test_scenario_defaults():
    cfg = ScenarioConfig(**COX, pi_mode="estimated")
    assert cfg.m == 1 and cfg.pi_true == (1.0,)
    assert list(cfg.param_names) == ["theta1", "theta2", "theta3"]
    assert list(cfg.pi_names) == ["pi"]
    assert cfg.decimals == 3
    assert ScenarioConfig(**LIN).decimals == 4
    assert ScenarioConfig(**LIN).name == "linear n=100 N=200"


def test_regression_covariate_law():
    cfg = ScenarioConfig(**{**LIN, "n": 400_000})
    z = generate_internal(cfg, np.random.default_rng(1)).z
    c = np.cov(z.T)
    assert np.allclose(c, [[1.0, 0.6], [0.6, 2.0]], atol=0.02)


def test_cox_generator_baseline():
    """Lambda(t | z) = pi t^2 exp(theta'z): at z = 0, P(T > t) = exp(-pi t^2)."""
    cfg = ScenarioConfig(**{**COX, "N": (200_000,), "pi_true": (1.5,)})
    rng = np.random.default_rng(2)
    from elfusion.simulation import _cox_times
    z = np.zeros((200_000, 3))
    t = _cox_times(cfg, rng, z, 1.5)
    for h in (0.3, 0.6, 1.0):
        assert abs(np.mean(t > h) - np.exp(-1.5 * h * h)) <= 4 * np.sqrt(0.25 / t.size)


def test_cox_external_summary_is_subgroup_proportion():
    cfg = ScenarioConfig(**COX)
    s = generate_external_summary(cfg, 0, np.random.default_rng(3))
    assert s.n_ext == 300 and s.r == 2
    assert np.all((0 < s.beta_hat) & (s.beta_hat < 1))
    # binomial variance scaled by the subgroup share
    share = np.array([0.25, 0.25])
    assert np.allclose(np.diag(s.cov.matrix), s.beta_hat * (1 - s.beta_hat) / share, rtol=0.3)


def test_calibrate_censoring_matches_reported_bound():
    cfg = ScenarioConfig(**COX)
    c = calibrate_censoring(cfg, target=0.3)
    assert abs(c - 2.52) <= 0.02


def test_rng_streams_are_independent_of_study_count():
    one = ScenarioConfig(**{**COX, "N": (300,)}, seed=5)
    two = ScenarioConfig(**{**COX, "N": (300, 300)}, seed=5)
    a, b = replicate_rngs(one, 4), replicate_rngs(two, 4)
    assert np.array_equal(a[0].random(5), b[0].random(5))
    assert np.array_equal(a[1].random(5), b[1].random(5))


@pytest.mark.parametrize("kw", [LIN, COX, {**LIN, "family": "logistic", "n": 300}])
def test_single_replicate_equals_direct_pipeline(kw):
    cfg = ScenarioConfig(**kw, reps=1, seed=9)
    report = run_monte_carlo(cfg, dump=True)
    rec = report.replicates[0]
    rngs = replicate_rngs(cfg, 0)
    data = generate_internal(cfg, rngs[0])
    res = fuse(build_problem(cfg, data, [generate_external_summary(cfg, 0, rngs[1])]))
    assert np.array_equal(rec["est"][:3], res.theta_hat)
    assert np.array_equal(rec["mle"], res.theta_tilde)
    row = report.row("proposed", cfg.param_names[1])
    assert row.bias == pytest.approx(res.theta_hat[1] - cfg.theta_true[1], abs=1e-15)


def test_determinism_across_workers():
    cfg = ScenarioConfig(**COX, reps=12, seed=3, pi_mode="estimated")
    a = emit_report(run_monte_carlo(cfg, workers=1))
    b = emit_report(run_monte_carlo(cfg, workers=3))
    c = emit_report(run_monte_carlo(cfg, workers=1))
    assert a == b == c
    d = emit_report(run_monte_carlo(ScenarioConfig(**COX, reps=12, seed=4, pi_mode="estimated")))
    assert d != a


def test_report_invariants_and_csv_roundtrip():
    cfg = ScenarioConfig(**LIN, reps=40, seed=1)
    report = run_monte_carlo(cfg)
    assert report.failures == 0 and report.reps == 40
    for r in report.rows:
        assert 0 <= r.cp <= 1 and r.se > 0 and r.see > 0
    rows = list(csv.DictReader(io.StringIO(emit_report(report))))
    assert len(rows) == len(report.rows)
    assert list(rows[0]) == ["Setting", "parameter", "Bias", "SE", "SEE", "CP", "RE_se", "RE_var", "reps", "failures"]
    for cells, r in zip(rows, report.rows):
        assert cells["Setting"] == r.setting and cells["parameter"] == r.parameter
        for key, val, dec in (("Bias", r.bias, 4), ("SE", r.se, 4), ("SEE", r.see, 4), ("CP", r.cp, 3),
                              ("RE_se", r.re_se, 2), ("RE_var", r.re_var, 2)):
            assert abs(float(cells[key]) - val) <= 0.5 * 10 ** -dec + 1e-12
        assert cells["reps"] == "40" and cells["failures"] == "0"
    mle = report.row("MLE", "theta2")
    prop = report.row("proposed", "theta2")
    assert prop.re_se == pytest.approx(mle.se / prop.se)
    assert prop.re_var == pytest.approx((mle.se / prop.se) ** 2)


def test_markdown_and_re_selection():
    cfg = ScenarioConfig(**COX, reps=5, seed=2, re=("var",), pi_mode="estimated")
    md = emit_report(run_monte_carlo(cfg), "markdown")
    lines = md.strip().splitlines()
    assert lines[0].startswith("| Setting | parameter |") and "RE_se" not in lines[0] and "RE_var" in lines[0]
    assert lines[1].count("---") == 9
    # pi row: no relative efficiency
    pi_line = [ln for ln in lines if "| pi |" in ln][0]
    assert pi_line.split("|")[-4].strip() == ""
    with pytest.raises(ValueError):
        emit_report(run_monte_carlo(ScenarioConfig(**LIN, reps=2)), "xml")


def test_failures_are_logged_and_capped():
    never = (Subgroup(0.5, ((1, "==", 7.0),)),)
    cfg = ScenarioConfig(**COX, reps=4, subgroups=never)
    with pytest.raises(TooManyFailures):
        run_monte_carlo(cfg)
    rec = run_replicate(cfg, 0)
    assert rec["ok"] is False and "subgroup" in rec["error"]


@pytest.mark.slow
def test_efficiency_grows_with_external_size():
    re = []
    for N in (500, 1000, 2000):
        cfg = ScenarioConfig(family="linear", n=1000, N=(N,), theta_true=(0.1, 0.1, 0.2), reps=1000, seed=21)
        re.append(run_monte_carlo(cfg).row("proposed", "theta2").re_se)
    # common random numbers for the internal data; allow MC slack of 0.03
    assert re[0] <= re[1] + 0.03 and re[1] <= re[2] + 0.03
    assert re[2] > re[0]


@pytest.mark.slow
def test_logistic_coverage_calibration():
    cfg = ScenarioConfig(family="logistic", n=1000, N=(2000,), theta_true=(0.1, 0.1, 0.2), reps=2000, seed=31)
    report = run_monte_carlo(cfg)
    for name in cfg.param_names:
        row = report.row("proposed", name)
        assert 0.93 <= row.cp <= 0.96
        assert 0.9 <= row.see / row.se <= 1.1
