"""Frequentist behaviour of randomization posteriors in small samples.

Runs the five-per-arm design and the growing-sample design with a reduced
replication count and prints bias, MSE, coverage and interval length with
Monte Carlo standard errors.

    python3 demos/simulation_study.py [reps]
"""

import sys

from bri.harness import SimConfig, format_table, preset, simulate_metrics

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

print(f"five units per arm, {reps} replications")
print(format_table(simulate_metrics(preset("table1", reps=reps)[0])))

print("\noracle variants: the observed statistic is recomputed under a fresh assignment")
oracle = SimConfig(n_reps=reps, methods=("bri_a", "bri_c"), oracle=True)
print(format_table(simulate_metrics(oracle)))

for cfg in preset("table2", reps=reps):
    print(f"\n{cfg.n0} units per arm")
    print(format_table(simulate_metrics(cfg)))
