#!/usr/bin/env python3
"""Synthetic benchmark sweeping the logged sample size at fixed action count."""
import sys

from ope_embeds.bench.cli import main

if __name__ == "__main__":
    args = [
        "synth",
        "--actions", "100",
        "--samples", "800,1600,3200,6400,12800,25600,51200,102400",
        "--emb-dims", "3",
        "--runs", "100",
        "--seed", "0",
        "--out", "results/synth_samples",
    ]
    sys.exit(main(args + sys.argv[1:]))
