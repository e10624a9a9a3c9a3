#!/usr/bin/env python3
"""Bootstrap relative-MSE CDF protocol on a synthetic stand-in CSV.

Generates the stand-in logged data (the protocol's real dataset is
proprietary and not bundled), then runs 150 bootstrap resamples and emits
the CDF outputs under results/real_standin/.
"""
import os
import sys

from ope_embeds.bench.cli import main
from ope_embeds.bench.standin import generate_standin_csv

if __name__ == "__main__":
    os.makedirs("results/real_standin", exist_ok=True)
    csv_path = "results/real_standin/standin.csv"
    true_value = generate_standin_csv(csv_path, seed=0)
    args = [
        "real",
        "--csv", csv_path,
        "--true-value", repr(true_value),
        "--runs", "150",
        "--seed", "0",
        "--estimators", "ips,snips,dm,dr,mips,mips_slope,learned_mips_onehot",
        "--out", "results/real_standin",
    ]
    sys.exit(main(args + sys.argv[1:]))
