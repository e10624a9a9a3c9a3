#!/usr/bin/env python3
"""Sweep the learned embedding size (low-rank model) at high context dimension."""
import sys

from ope_embeds.bench.cli import main

if __name__ == "__main__":
    args = [
        "embed-size",
        "--actions", "100",
        "--samples", "20000",
        "--sizes", "2,4,8,16,32,64,0",
        "--runs", "50",
        "--seed", "0",
        "--config", "scripts/embed_size_config.json",
        "--out", "results/embed_size",
    ]
    sys.exit(main(args + sys.argv[1:]))
