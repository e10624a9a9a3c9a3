#!/usr/bin/env python3
"""Toy benchmark: per-action logistic rewards, uniform target policy.

Runs the full protocol (50 reward functions x 15 datasets per action count)
and writes MSE tables under results/toy/.
"""
import sys

from ope_embeds.bench.cli import main

if __name__ == "__main__":
    args = [
        "toy",
        "--actions", "50,100,200,500,1000",
        "--samples", "1000",
        "--runs", "750",
        "--seed", "0",
        "--out", "results/toy",
    ]
    sys.exit(main(args + sys.argv[1:]))
