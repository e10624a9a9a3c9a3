"""Benchmark orchestration: experiment grids, CSV I/O and the CLI."""

from .runner import (
    AggregateRecord,
    ExperimentSpec,
    RelativeCdf,
    RunRecord,
    aggregate_records,
    relative_mse_cdf,
    run_experiment,
)

__all__ = [
    "AggregateRecord",
    "ExperimentSpec",
    "RelativeCdf",
    "RunRecord",
    "aggregate_records",
    "relative_mse_cdf",
    "run_experiment",
]
