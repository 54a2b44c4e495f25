"""TOML configuration files and CSV input.

Scenario file (``simulate``)::

    name = "linear both slopes" # optional label
    family = "linear"          # linear | logistic | cox
    n = 1000
    N = [2000]                 # one entry per external study
    theta_true = [0.1, 0.1, 0.2]
    reps = 2000                # optional, overridden by --reps
    seed = 1                   # optional, overridden by --seed
    v_policy = "sandwich"      # sandwich | explicit

    [covariates]               # all optional
    z1_var = 1.0
    z2_var = 2.0
    cov12 = 0.6
    z2_prob = 0.5              # Cox design

    [censoring]
    upper = 2.52

    [external]
    reduced = ["z1", "z2"]     # regression designs
    pi_true = [1.0]            # Cox designs, one per study
    pi_mode = "known"          # known | estimated
    pi_value = 1.0
    v_matrices = [[[1.0]]]     # with v_policy = "explicit"

    [[external.subgroups]]     # Cox designs; defaults to the two z1 halves of z2 == 0
    horizon = 0.5
    where = [{column = "z1", op = "<=", value = 0.0}, {column = "z2", op = "==", value = 0.0}]

    [report]
    re = ["se", "var"]

Constraint file (``fuse``), one ``[[study]]`` table per external study::

    [[study]]
    name = "registry"
    reduced = ["z1", "z2"]     # regression models
    pi_mode = "estimated"      # Cox models
    pi_value = 1.0
    [[study.subgroups]]
    horizon = 0.5
    where = [{column = "z1", op = "<=", value = 0.0}]

Summary file (``fuse``), matched to the constraint studies by position::

    [[study]]
    name = "registry"
    beta = [0.23, 0.31]
    n = 2000
    sigma0 = [[1.1, 0.2], [0.2, 0.9]]   # optional for regression models
    v = [[1.0, 0.0], [0.0, 1.0]]        # used with --v-policy file

Unknown keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import csv
import sys

import numpy as np

from .cox import Subgroup, SurvivalConstraints
from .exceptions import ConfigError, DataError
from .interface import ExplicitSigma, ExternalSummary, InternalDataset
from .parametric import ReducedModelConstraints, reduced_model_sandwich_fn
from .simulation import ScenarioConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "load_toml",
    "scenario_from_dict",
    "load_scenario",
    "read_internal_csv",
    "constraints_from_dict",
    "summaries_from_dict",
]


def load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a table")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _column(name, d=None):
    if isinstance(name, int) and not isinstance(name, bool):
        idx = name
    elif isinstance(name, str) and name.startswith("z") and name[1:].isdigit():
        idx = int(name[1:]) - 1
    else:
        raise ConfigError(f"covariate column must look like 'z1', got {name!r}")
    if idx < 0 or (d is not None and idx >= d):
        raise ConfigError(f"covariate column {name!r} out of range")
    return idx


def _subgroups(items, where, d=None):
    out = []
    for k, sg in enumerate(items):
        _check_keys(sg, {"horizon", "where"}, f"{where}[{k}]")
        if "horizon" not in sg:
            raise ConfigError(f"{where}[{k}] needs a horizon")
        conds = []
        for j, c in enumerate(sg.get("where", [])):
            _check_keys(c, {"column", "op", "value"}, f"{where}[{k}].where[{j}]")
            try:
                conds.append((_column(c["column"], d), c["op"], float(c["value"])))
            except KeyError as exc:
                raise ConfigError(f"{where}[{k}].where[{j}] is missing {exc}") from None
        try:
            out.append(Subgroup(float(sg["horizon"]), tuple(conds)))
        except ValueError as exc:
            raise ConfigError(f"{where}[{k}]: {exc}") from None
    return tuple(out)


_SCENARIO_KEYS = {"name", "family", "n", "N", "theta_true", "reps", "seed", "v_policy",
                  "covariates", "censoring", "external", "report"}


def scenario_from_dict(d, reps=None, seed=None):
    """Build a :class:`ScenarioConfig` from a parsed scenario table."""
    _check_keys(d, _SCENARIO_KEYS, "scenario")
    for key in ("family", "n", "N", "theta_true"):
        if key not in d:
            raise ConfigError(f"scenario needs '{key}'")
    cov = d.get("covariates", {})
    _check_keys(cov, {"z1_var", "z2_var", "cov12", "z2_prob"}, "[covariates]")
    cens = d.get("censoring", {})
    _check_keys(cens, {"upper"}, "[censoring]")
    ext = d.get("external", {})
    _check_keys(ext, {"reduced", "pi_true", "pi_mode", "pi_value", "v_matrices", "subgroups"}, "[external]")
    rep = d.get("report", {})
    _check_keys(rep, {"re"}, "[report]")
    kw = dict(family=d["family"], n=int(d["n"]), N=d["N"], theta_true=d["theta_true"],
              reps=int(reps if reps is not None else d.get("reps", 1000)),
              seed=int(seed if seed is not None else d.get("seed", 0)),
              v_policy=d.get("v_policy", "sandwich"), name=d.get("name", ""))
    kw["z_var"] = (cov.get("z1_var", 1.0), cov.get("z2_var", 2.0))
    if "cov12" in cov:
        kw["z_cov"] = cov["cov12"]
    if "z2_prob" in cov:
        kw["z2_prob"] = cov["z2_prob"]
    if "upper" in cens:
        kw["censor_upper"] = cens["upper"]
    if "reduced" in ext:
        kw["which"] = tuple(_column(c, 2) for c in ext["reduced"])
    for key in ("pi_true", "pi_mode", "pi_value", "v_matrices"):
        if key in ext:
            kw[key] = ext[key]
    if "subgroups" in ext:
        kw["subgroups"] = _subgroups(ext["subgroups"], "[[external.subgroups]]", 3)
    if "re" in rep:
        kw["re"] = tuple(rep["re"])
    try:
        return ScenarioConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path, reps=None, seed=None):
    return scenario_from_dict(load_toml(path), reps=reps, seed=seed)


def read_internal_csv(path, model):
    """Read internal data: ``y,z1..zd`` or, for Cox, ``time,status,z1..zd``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    lead = ["time", "status"] if model == "cox" else ["y"]
    k = len(lead)
    zcols = header[k:]
    if header[:k] != lead or zcols != [f"z{j + 1}" for j in range(len(zcols))]:
        raise DataError(f"expected header {','.join(lead + ['z1', '...'])}, got {','.join(header)}")
    try:
        a = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if model == "cox":
        return InternalDataset(a[:, 0], a[:, 2:], a[:, 1])
    return InternalDataset(a[:, 0], a[:, 1:])


def constraints_from_dict(d, model, p, d_cov):
    """Constraint sets, one per ``[[study]]`` table."""
    _check_keys(d, {"study"}, "constraints file")
    studies = d.get("study", [])
    if not studies:
        raise ConfigError("constraints file needs at least one [[study]]")
    out, names = [], []
    for k, s in enumerate(studies):
        where = f"[[study]] {k}"
        if model == "cox":
            _check_keys(s, {"name", "pi_mode", "pi_value", "subgroups"}, where)
            if "subgroups" not in s:
                raise ConfigError(f"{where} needs subgroups")
            out.append(SurvivalConstraints(_subgroups(s["subgroups"], f"{where}.subgroups", d_cov), p,
                                           s.get("pi_mode", "estimated"), s.get("pi_value", 1.0)))
        else:
            _check_keys(s, {"name", "reduced"}, where)
            if "reduced" not in s:
                raise ConfigError(f"{where} needs 'reduced'")
            which = tuple(_column(c, d_cov) for c in s["reduced"])
            out.append(ReducedModelConstraints(which, model, p=p))
        names.append(s.get("name", f"study{k + 1}"))
    return out, names


def summaries_from_dict(d, model, constraints, need_v=False):
    """External summaries matched by position to the constraint sets."""
    _check_keys(d, {"study"}, "summaries file")
    studies = d.get("study", [])
    if len(studies) != len(constraints):
        raise ConfigError(f"summaries file has {len(studies)} studies, constraints file {len(constraints)}")
    out = []
    for k, (s, c) in enumerate(zip(studies, constraints)):
        where = f"[[study]] {k}"
        _check_keys(s, {"name", "beta", "n", "sigma0", "v"}, where)
        for key in ("beta", "n"):
            if key not in s:
                raise ConfigError(f"{where} needs '{key}'")
        if "sigma0" in s:
            try:
                cov = ExplicitSigma(np.array(s["sigma0"], dtype=float))
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
        elif model == "cox":
            raise ConfigError(f"{where}: Cox summaries need an explicit sigma0")
        else:
            cov = reduced_model_sandwich_fn(c.which, c.family)
        if need_v and "v" not in s:
            raise ConfigError(f"{where}: --v-policy file needs 'v'")
        v = np.array(s["v"], dtype=float) if "v" in s else None
        try:
            out.append(ExternalSummary(np.array(s["beta"], dtype=float), int(s["n"]), cov, v))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return out
