"""
Checking the one-step estimator against the full EL maximizer
=============================================================

The one-step update is a single Newton-type correction from the initial
estimates. The empirical-likelihood objective it approximates can also be
maximized directly: an inner dual solve for the Lagrange multiplier and an
outer Newton iteration over ``(theta, pi, beta)``. Both should agree to a
fraction of a standard error.
"""
import numpy as np

from elfusion import (
    ExternalSummary,
    LinearModel,
    el_objective,
    fit_reduced_models,
    fuse,
    linear_reduced_constraints,
    maximize_el,
    reduced_model_sandwich_fn,
    stack_studies,
)
from elfusion.simulation import ScenarioConfig, generate_internal

dev = []
for seed in range(10):
    rng = np.random.default_rng(seed)
    internal = generate_internal(ScenarioConfig(family="linear", n=200, N=(500,), theta_true=(0.1, 0.1, 0.2)), rng)
    external = generate_internal(ScenarioConfig(family="linear", n=500, N=(500,), theta_true=(0.1, 0.1, 0.2)), rng)
    _, beta = fit_reduced_models(external, (0, 1))
    problem = stack_studies([(linear_reduced_constraints((0, 1), p=3),
                              ExternalSummary(beta, 500, reduced_model_sandwich_fn((0, 1))))],
                            LinearModel(), internal)
    res = fuse(problem)
    V = res.diagnostics["V"]
    sol = maximize_el(problem, (res.theta_tilde, res.pi_tilde, res.beta_tilde), V=V,
                      extra_starts=[(res.theta_hat, res.pi_hat, res.beta_hat)])
    d = np.abs(res.theta_hat - sol.theta) / res.se("theta")
    gap = sol.objective - el_objective(problem, res.theta_hat, res.pi_hat, res.beta_hat, V=V)
    dev.append(d.max())
    print(f"seed {seed}: max |one-step - EL| / SE = {d.max():.3f}, objective gap {gap:.2e}")

# %%
# The deviation is small in SE units but the objective gap is not zero: the
# one-step point is only asymptotically equivalent to the maximizer.
print("median deviation in SE:", round(float(np.median(dev)), 3))
