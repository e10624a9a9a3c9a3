#!/usr/bin/env python3
"""Mask embedding dimensions after reward generation and compare estimators."""
import sys

from ope_embeds.bench.cli import main

if __name__ == "__main__":
    args = [
        "hidden-dims",
        "--actions", "500",
        "--samples", "20000",
        "--emb-dims", "4",
        "--hide-dims", "0,1,2",
        "--runs", "100",
        "--seed", "0",
        "--out", "results/hidden_dims",
    ]
    sys.exit(main(args + sys.argv[1:]))
