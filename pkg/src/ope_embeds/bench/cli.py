"""Command-line interface for the benchmark harness.

Subcommands mirror the experiment kinds; every flag can also be supplied
through a JSON config file (``--config``), with command-line flags winning
on conflict. Exits 0 on success and nonzero with a diagnostic on any
validation or training error.
"""
from __future__ import annotations

import argparse
import json
import sys

from ..reward_model import TrainConfig
from .csvio import CsvSchemaError, emit_outputs, read_run_records_csv, write_cdf_csv
from .runner import ExperimentSpec, relative_mse_cdf, run_experiment

DEFAULT_ESTIMATORS = {
    "toy": "ips,dm,learned_mips_onehot",
    "synth": "ips,snips,dm,dr,mips,mips_true,learned_mips_onehot,learned_mips_finetune,learned_mips_combined",
    "hidden-dims": "ips,dm,dr,mips,learned_mips_onehot,learned_mips_finetune,learned_mips_combined",
    "embed-size": "ips,learned_mips_onehot",
    "real": "ips,snips,dm,dr,mips,mips_slope,learned_mips_onehot,learned_mips_finetune,learned_mips_combined",
}


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--actions", type=str, default=None, help="comma list of action counts")
    parser.add_argument("--samples", type=str, default=None, help="comma list of sample sizes")
    parser.add_argument("--emb-dims", type=int, default=None, help="pre-defined embedding dimensions")
    parser.add_argument("--hide-dims", type=str, default=None, help="comma list of hidden-dimension counts")
    parser.add_argument("--estimators", type=str, default=None, help="comma list of estimator names")
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--config", type=str, default=None, help="JSON config mirroring the flags")
    parser.add_argument("--eval-contexts", type=int, default=None, help="fresh contexts for ground truth")


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    merged = dict(defaults)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            merged.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key.replace("_", "-")] = value
    return merged


def _synth_overrides(opts: dict) -> dict:
    overrides = dict(opts.get("synth", {}))
    if opts.get("emb-dims") is not None:
        overrides["d_e"] = int(opts["emb-dims"])
    return overrides


def _spec_from_options(command: str, opts: dict) -> ExperimentSpec:
    estimators = tuple(str(opts["estimators"]).split(","))
    train = TrainConfig(**opts.get("train", {}))
    common = dict(
        estimators=estimators,
        runs=int(opts["runs"]),
        seed=int(opts.get("seed", 0)),
        synth_overrides=_synth_overrides(opts),
        n_eval_contexts=int(opts.get("eval-contexts", 100_000)),
        train=train,
        mips_iters=int(opts.get("mips-iters", 200)),
    )
    actions = _int_list(str(opts.get("actions", ""))) if opts.get("actions") else ()
    samples = _int_list(str(opts.get("samples", ""))) if opts.get("samples") else ()
    if command == "toy":
        return ExperimentSpec(
            kind="toy",
            action_counts=actions or (50, 100, 200, 500, 1000),
            sample_sizes=samples or (1000,),
            toy_datasets_per_env=int(opts.get("datasets-per-env", 15)),
            **common,
        )
    if command == "synth":
        return ExperimentSpec(
            kind="synth_grid",
            action_counts=actions or (10, 100, 1000),
            sample_sizes=samples or (20_000,),
            **common,
        )
    if command == "hidden-dims":
        hide = (
            _int_list(str(opts.get("hide-dims", ""))) if opts.get("hide-dims") else (0, 1, 2)
        )
        return ExperimentSpec(
            kind="hidden_dims",
            action_counts=actions or (500,),
            sample_sizes=samples or (20_000,),
            hidden_dim_counts=hide,
            **common,
        )
    if command == "embed-size":
        sizes = _int_list(str(opts.get("sizes", ""))) if opts.get("sizes") else (2, 4, 8, 16, 32, 64, 0)
        return ExperimentSpec(
            kind="embed_size_ablation",
            action_counts=actions or (100,),
            sample_sizes=samples or (20_000,),
            embed_sizes=sizes,
            **common,
        )
    if command == "real":
        return ExperimentSpec(
            kind="real_protocol",
            csv_path=str(opts["csv"]),
            bootstrap_size=int(opts.get("bootstrap-size", 10_000)),
            true_value=float(opts["true-value"]),
            **common,
        )
    raise ValueError(f"unknown command {command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ope-embeds",
        description="Off-policy evaluation benchmarks with learned action embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("toy", "synth", "hidden-dims", "embed-size", "real"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "toy":
            p.add_argument("--datasets-per-env", type=int, default=None)
        if name == "embed-size":
            p.add_argument("--sizes", type=str, default=None, help="comma list; 0 means full rank")
        if name == "real":
            p.add_argument("--csv", type=str, default=None, help="logged-data CSV path")
            p.add_argument("--bootstrap-size", type=int, default=None)
            p.add_argument("--true-value", type=float, default=None, help="target policy value of the stand-in data")
    cdf_p = sub.add_parser("cdf", help="recompute relative-MSE CDFs from a runs.csv")
    cdf_p.add_argument("--runs-csv", type=str, required=True)
    cdf_p.add_argument("--baseline", type=str, default="ips")
    cdf_p.add_argument("--out", type=str, required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "cdf":
            records = read_run_records_csv(args.runs_csv)
            cdfs = relative_mse_cdf(records, baseline=args.baseline)
            write_cdf_csv(args.out, cdfs)
            for cdf in cdfs:
                print(f"{cdf.estimator}: CDF(1.0) = {cdf.at(1.0):.4f}")
            return 0
        defaults = {
            "runs": {"toy": 750, "synth": 30, "hidden-dims": 30, "embed-size": 50, "real": 150}[
                args.command
            ],
            "estimators": DEFAULT_ESTIMATORS[args.command],
        }
        opts = _merged(args, defaults)
        spec = _spec_from_options(args.command, opts)
        records, aggregates = run_experiment(spec)
        cdfs = None
        if spec.kind == "real_protocol":
            cdfs = relative_mse_cdf(records)
        out_dir = opts.get("out")
        if out_dir:
            paths = emit_outputs(out_dir, spec, records, aggregates, cdfs)
            print(f"wrote {', '.join(sorted(paths.values()))}")
        for agg in aggregates:
            cell = ";".join(f"{k}={v:g}" for k, v in agg.cell)
            print(
                f"[{cell}] {agg.estimator}: mse={agg.mse_mean:.6g} +/- {agg.mse_stderr:.2g} "
                f"({agg.n_runs} runs, {agg.n_failed} failed)"
            )
        return 0
    except (ValueError, CsvSchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
