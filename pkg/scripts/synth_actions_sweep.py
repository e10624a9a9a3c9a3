#!/usr/bin/env python3
"""Synthetic benchmark sweeping the number of actions at fixed sample size."""
import sys

from ope_embeds.bench.cli import main

if __name__ == "__main__":
    args = [
        "synth",
        "--actions", "10,20,50,100,200,500,1000,2000",
        "--samples", "20000",
        "--emb-dims", "3",
        "--runs", "100",
        "--seed", "0",
        "--out", "results/synth_actions",
    ]
    sys.exit(main(args + sys.argv[1:]))
