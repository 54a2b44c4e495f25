"""
A small Monte Carlo table
=========================

Replicates the linear design with both reduced-model slopes and reports
bias, empirical SE, mean estimated SE, coverage and relative efficiency of
the fused estimator against the internal MLE. The same table is produced by
``elfusion simulate --scenario configs/linear_both_slopes.toml``.
"""
import pathlib

from elfusion import emit_report, run_monte_carlo
from elfusion.config import load_scenario

root = pathlib.Path(__file__).resolve().parents[1]
cfg = load_scenario(root / "configs" / "linear_both_slopes.toml", reps=300, seed=1)
report = run_monte_carlo(cfg)
print(emit_report(report, "markdown"))
print(f"{report.reps} replicates, {report.failures} failures")
