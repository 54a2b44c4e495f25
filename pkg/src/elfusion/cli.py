"""Command-line interface: ``elfusion fuse`` and ``elfusion simulate``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .config import (
    constraints_from_dict,
    load_scenario,
    load_toml,
    read_internal_csv,
    summaries_from_dict,
)
from .cox import CoxModel
from .exceptions import FusionError
from .fusion import fuse, stack_studies
from .oracle import el_objective, maximize_el
from .parametric import LinearModel, LogisticModel
from .simulation import emit_report, run_monte_carlo

_MODELS = {"linear": LinearModel, "logistic": LogisticModel, "cox": CoxModel}
ORACLE_MAX_N_COX = 300


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (str, bool)) or x is None:
        return x
    return repr(x)


def _param_names(model, data, problem, study_names):
    if model == "cox":
        theta = list(data.names)
    else:
        theta = ["intercept"] + list(data.names)
    pi, beta = [], []
    for name, block in zip(study_names, problem.constraints.blocks):
        pi += [f"{name}.pi{j + 1}" for j in range(block.v)]
        beta += [f"{name}.beta{j + 1}" for j in range(block.r)]
    return theta, pi, beta


def _oracle_check(problem, res, model):
    if model == "cox" and problem.n > ORACLE_MAX_N_COX:
        return {"skipped": f"the Cox oracle is limited to n <= {ORACLE_MAX_N_COX}"}
    V = res.diagnostics["V"]
    sol = maximize_el(problem, (res.theta_tilde, res.pi_tilde, res.beta_tilde), V=V,
                      extra_starts=[(res.theta_hat, res.pi_hat, res.beta_hat)])
    se = res.standard_errors
    dev = np.abs(res.estimate - sol.estimate) / se
    return {
        "theta": sol.theta, "pi": sol.pi, "beta": sol.beta,
        "objective": sol.objective,
        "objective_at_one_step": el_objective(problem, res.theta_hat, res.pi_hat, res.beta_hat, V=V),
        "max_deviation_in_se": float(dev.max()),
        "iterations": sol.iterations,
    }


def cmd_fuse(args):
    model = args.model
    data = read_internal_csv(args.data, model)
    p = data.d if model == "cox" else data.d + 1
    cons_cfg = load_toml(args.constraints)
    summ_cfg = load_toml(args.summaries)
    cons, names = constraints_from_dict(cons_cfg, model, p, data.d)
    summaries = summaries_from_dict(summ_cfg, model, cons, need_v=args.v_policy == "file")
    policy = "explicit" if args.v_policy == "file" else "sigma0"
    problem = stack_studies(list(zip(cons, summaries)), _MODELS[model](), data, v_policy=policy)
    res = fuse(problem)
    theta_n, pi_n, beta_n = _param_names(model, data, problem, names)
    diag = dict(res.diagnostics)
    fit = diag.pop("initial_fit")
    out = {
        "tool": "elfusion", "version": __version__,
        "model": model, "n": data.n,
        "parameters": theta_n + pi_n + beta_n,
        "estimates": {"theta": res.theta_hat, "pi": res.pi_hat, "beta": res.beta_hat},
        "standard_errors": {"theta": res.se("theta"), "pi": res.se("pi"), "beta": res.se("beta")},
        "covariance": {"shape": list(res.covariance.shape), "row_major": res.covariance.ravel()},
        "initial": {"theta": res.theta_tilde, "pi": res.pi_tilde, "beta": res.beta_tilde,
                    "loglik": fit.loglik},
        "diagnostics": diag,
        "config": {"data": args.data, "v_policy": args.v_policy,
                   "constraints": cons_cfg, "summaries": summ_cfg},
    }
    if args.oracle_check:
        out["oracle_check"] = _oracle_check(problem, res, model)
    text = json.dumps(_jsonable(out), indent=2)
    if args.out == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_simulate(args):
    cfg = load_scenario(args.scenario, reps=args.reps, seed=args.seed)
    report = run_monte_carlo(cfg, workers=args.workers)
    fmt = "markdown" if args.out.endswith((".md", ".markdown")) else "csv"
    text = emit_report(report, fmt)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    print(f"{cfg.name}: {report.reps} replicates, {report.failures} failed, "
          f"{report.wall_time:.1f} s", file=sys.stderr)
    for rep, msg in report.failure_log:
        print(f"  replicate {rep}: {msg}", file=sys.stderr)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="elfusion", description=(
        "Fuse internal individual-level data with external summary estimates "
        "by a one-step empirical-likelihood update."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fuse", help="fuse a dataset with external summaries")
    f.add_argument("--data", required=True, help="internal CSV (y,z1..zd or time,status,z1..zd)")
    f.add_argument("--model", required=True, choices=sorted(_MODELS))
    f.add_argument("--constraints", required=True, help="TOML constraint file")
    f.add_argument("--summaries", required=True, help="TOML summary file")
    f.add_argument("--v-policy", default="sandwich", choices=["sandwich", "file"],
                   help="V = Sigma0 (sandwich) or the 'v' matrices of the summary file")
    f.add_argument("--oracle-check", action="store_true",
                   help="also maximize the full EL objective and report the agreement")
    f.add_argument("--out", required=True, help="output JSON path, or - for stdout")
    f.set_defaults(func=cmd_fuse)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    s.add_argument("--scenario", required=True, help="TOML scenario file")
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="output .csv or .md path, or - for CSV on stdout")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
