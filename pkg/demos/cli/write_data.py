"""Write the synthetic case-study data to ``case_study.csv`` next to this
file, for use with ``bri analyze --config demos/cli/analysis.toml``."""

import csv
from pathlib import Path

from bri import RngStream
from bri.harness import synthetic_case_study

study = synthetic_case_study(RngStream(2024), n_covariates=3)
path = Path(__file__).with_name("case_study.csv")
with open(path, "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow(["treated", "calories", "age", "hunger", "bmi"])
    for a, y, x in zip(study.a, study.y, study.X):
        writer.writerow([int(a), f"{y:.4f}", *(f"{v:.4f}" for v in x)])
print(path)
