"""Logged-data CSV schema plus deterministic result/plot-data emission.

Logged-data schema (header row, comma separated, UTF-8):

    x_0,...,x_{dX-1},action,reward,pscore[,emb_0,...,emb_{dE-1}]

Floats are written in shortest round-trip decimal form, so identical inputs
always produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from ..core import CategoricalEmbeddingTable, LoggedDataset
from .runner import AggregateRecord, RelativeCdf, RunRecord


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvSchemaError(ValueError):
    """Raised when a logged-data CSV violates the schema."""


def save_logged_csv(path: str, dataset: LoggedDataset) -> None:
    """Write a logged dataset in the canonical CSV schema."""
    d_x = dataset.d_context
    d_e = 0 if dataset.observed_embeddings is None else dataset.observed_embeddings.shape[1]
    header = (
        [f"x_{i}" for i in range(d_x)]
        + ["action", "reward", "pscore"]
        + [f"emb_{k}" for k in range(d_e)]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(dataset.n):
            row = [_fmt(v) for v in dataset.contexts[t]]
            row.append(str(int(dataset.actions[t])))
            row.append(_fmt(dataset.rewards[t]))
            row.append(_fmt(dataset.logging_propensities[t]))
            if d_e:
                row.extend(str(int(v)) for v in dataset.observed_embeddings[t])
            fh.write(",".join(row) + "\n")


def load_logged_csv(
    path: str, n_actions: int | None = None
) -> tuple[LoggedDataset, CategoricalEmbeddingTable | None]:
    """Load and validate a logged dataset; errors name the offending row/column.

    When embedding columns are present, a per-action embedding table is also
    built from each action's first observed codes (actions never observed
    get all-zero codes).
    """
    if not os.path.exists(path):
        raise CsvSchemaError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvSchemaError(f"{path}: empty file") from None
        x_cols = [c for c in header if c.startswith("x_")]
        emb_cols = [c for c in header if c.startswith("emb_")]
        expected = x_cols + ["action", "reward", "pscore"] + emb_cols
        if header != expected or not x_cols:
            missing = {"action", "reward", "pscore"} - set(header)
            if missing:
                raise CsvSchemaError(f"{path}: missing column(s) {sorted(missing)}")
            raise CsvSchemaError(
                f"{path}: header must be x_0..x_k,action,reward,pscore[,emb_0..]; got {header}"
            )
        d_x, d_e = len(x_cols), len(emb_cols)
        contexts, actions, rewards, pscores, embeds = [], [], [], [], []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise CsvSchemaError(
                    f"{path}: row {row_num} has {len(row)} fields, expected {len(header)}"
                )
            try:
                contexts.append([float(v) for v in row[:d_x]])
                actions.append(int(row[d_x]))
                rewards.append(float(row[d_x + 1]))
                pscores.append(float(row[d_x + 2]))
                if d_e:
                    embeds.append([int(v) for v in row[d_x + 3 :]])
            except ValueError as exc:
                raise CsvSchemaError(f"{path}: row {row_num}: {exc}") from None
    if not contexts:
        raise CsvSchemaError(f"{path}: no data rows")
    actions_arr = np.asarray(actions, dtype=np.int64)
    pscore_arr = np.asarray(pscores, dtype=float)
    declared = int(actions_arr.max()) + 1 if n_actions is None else int(n_actions)
    bad_p = np.flatnonzero((pscore_arr <= 0.0) | (pscore_arr > 1.0))
    if bad_p.size:
        row = int(bad_p[0]) + 1
        raise CsvSchemaError(
            f"{path}: row {row}, column 'pscore': value {pscore_arr[bad_p[0]]!r} outside (0, 1]"
        )
    bad_a = np.flatnonzero((actions_arr < 0) | (actions_arr >= declared))
    if bad_a.size:
        row = int(bad_a[0]) + 1
        raise CsvSchemaError(
            f"{path}: row {row}, column 'action': index {actions_arr[bad_a[0]]} "
            f"outside [0, {declared})"
        )
    dataset = LoggedDataset(
        contexts=np.asarray(contexts, dtype=float),
        actions=actions_arr,
        rewards=np.asarray(rewards, dtype=float),
        logging_propensities=pscore_arr,
        n_actions=declared,
        observed_embeddings=np.asarray(embeds, dtype=np.int64) if d_e else None,
    )
    table = None
    if d_e:
        codes_arr = np.asarray(embeds, dtype=np.int64)
        cardinality = int(codes_arr.max()) + 1
        table_codes = np.zeros((declared, d_e), dtype=np.int64)
        seen = np.zeros(declared, dtype=bool)
        for t in range(dataset.n):
            a = int(actions_arr[t])
            if not seen[a]:
                table_codes[a] = codes_arr[t]
                seen[a] = True
        table = CategoricalEmbeddingTable(codes=table_codes, cardinality=cardinality)
    return dataset, table


def bootstrap_subsample(
    dataset: LoggedDataset, size: int, rng: np.random.Generator
) -> LoggedDataset:
    """Resample the dataset with replacement at the requested size."""
    if size < 1:
        raise ValueError("size must be positive")
    idx = rng.integers(0, dataset.n, size)
    return LoggedDataset(
        contexts=dataset.contexts[idx],
        actions=dataset.actions[idx],
        rewards=dataset.rewards[idx],
        logging_propensities=dataset.logging_propensities[idx],
        n_actions=dataset.n_actions,
        observed_embeddings=None
        if dataset.observed_embeddings is None
        else dataset.observed_embeddings[idx],
    )


def _cell_str(cell: tuple[tuple[str, float], ...]) -> str:
    return ";".join(f"{k}={v:g}" for k, v in cell)


def write_run_records_csv(path: str, records: list[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("experiment,cell,run_index,seed,estimator,estimate,true_value,squared_error,error\n")
        for r in records:
            fh.write(
                ",".join(
                    [
                        r.experiment,
                        _cell_str(r.cell),
                        str(r.run_index),
                        str(r.seed),
                        r.estimator,
                        _fmt(r.estimate),
                        _fmt(r.true_value),
                        _fmt(r.squared_error),
                        "" if r.error is None else r.error.replace(",", ";"),
                    ]
                )
                + "\n"
            )


def read_run_records_csv(path: str) -> list[RunRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            cell = tuple(
                (part.split("=")[0], float(part.split("=")[1]))
                for part in row["cell"].split(";")
                if part
            )
            records.append(
                RunRecord(
                    experiment=row["experiment"],
                    cell=cell,
                    run_index=int(row["run_index"]),
                    seed=int(row["seed"]),
                    estimator=row["estimator"],
                    estimate=float(row["estimate"]),
                    true_value=float(row["true_value"]),
                    squared_error=float(row["squared_error"]),
                    error=row["error"] or None,
                )
            )
    return records


def write_aggregates_csv(path: str, aggregates: list[AggregateRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("cell,estimator,mse_mean,mse_stderr,n_runs,n_failed\n")
        for a in aggregates:
            fh.write(
                ",".join(
                    [
                        _cell_str(a.cell),
                        a.estimator,
                        _fmt(a.mse_mean),
                        _fmt(a.mse_stderr),
                        str(a.n_runs),
                        str(a.n_failed),
                    ]
                )
                + "\n"
            )


def write_plot_data_csv(path: str, aggregates: list[AggregateRecord], x_key: str) -> None:
    """(x, y, series) triples: one series per estimator, y = mean MSE."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("series,x,y,yerr\n")
        for a in aggregates:
            cell = dict(a.cell)
            if x_key not in cell:
                continue
            fh.write(
                f"{a.estimator},{_fmt(cell[x_key])},{_fmt(a.mse_mean)},{_fmt(a.mse_stderr)}\n"
            )


def write_cdf_csv(path: str, cdfs: list[RelativeCdf]) -> None:
    """Step-encoded CDF plot data: each unique x emits its pre- and post-step value."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("series,x,y\n")
        for cdf in cdfs:
            prev = 0.0
            for x, y in zip(cdf.grid, cdf.values):
                fh.write(f"{cdf.estimator},{_fmt(x)},{_fmt(prev)}\n")
                fh.write(f"{cdf.estimator},{_fmt(x)},{_fmt(y)}\n")
                prev = y


def write_summary_json(path: str, spec, aggregates: list[AggregateRecord]) -> None:
    doc = {
        "kind": spec.kind,
        "estimators": list(spec.estimators),
        "runs": spec.runs,
        "seed": spec.seed,
        "aggregates": [
            {
                "cell": {k: v for k, v in a.cell},
                "estimator": a.estimator,
                "mse_mean": a.mse_mean,
                "mse_stderr": a.mse_stderr,
                "n_runs": a.n_runs,
                "n_failed": a.n_failed,
            }
            for a in aggregates
        ],
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_outputs(
    out_dir: str,
    spec,
    records: list[RunRecord],
    aggregates: list[AggregateRecord],
    cdfs: list[RelativeCdf] | None = None,
) -> dict[str, str]:
    """Write all result files for an experiment; returns the path map."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "runs": os.path.join(out_dir, "runs.csv"),
        "aggregates": os.path.join(out_dir, "aggregates.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    write_run_records_csv(paths["runs"], records)
    write_aggregates_csv(paths["aggregates"], aggregates)
    write_summary_json(paths["summary"], spec, aggregates)
    x_key = {
        "toy": "actions",
        "synth_grid": "actions" if len(set(dict(a.cell).get("actions") for a in aggregates)) > 1 else "samples",
        "hidden_dims": "hidden",
        "embed_size_ablation": "embed_size",
    }.get(spec.kind)
    if x_key:
        paths["plot_data"] = os.path.join(out_dir, "plot_data.csv")
        write_plot_data_csv(paths["plot_data"], aggregates, x_key)
    if cdfs is not None:
        paths["cdf"] = os.path.join(out_dir, "cdf.csv")
        write_cdf_csv(paths["cdf"], cdfs)
    return paths
