"""Experiment orchestration: seeded grids, paired estimator evaluation, MSE aggregation.

Each run of a grid cell builds an environment, samples one logged dataset,
computes the exact target-policy value on fresh evaluation contexts, and
evaluates every requested estimator on the identical data (paired design).
Seeds are derived per (cell, run) so parallel execution produces the same
records as serial execution; records are sorted before aggregation and
output so files are byte-identical either way.
"""
from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    CategoricalEmbeddingTable,
    DegenerateInputError,
    LoggedDataset,
    PolicyMatrix,
)
from ..estimators import (
    MipsConfig,
    dm,
    dr,
    ips,
    learned_mips,
    mips,
    mips_slope,
    mips_true,
    snips,
    switch_dr,
)
from ..ml import SeededRng, standard_normal
from ..reward_model import InputRepr, TrainConfig, train_reward_model
from ..synth import (
    SynthConfig,
    ToyConfig,
    build_env,
    build_toy,
    sample_logged_data,
    sample_toy_logged_data,
    target_policy,
    target_policy_value,
    toy_logging_policy,
    toy_uniform_value,
)

WORKERS_ENV_VAR = "OPE_EMBEDS_WORKERS"

EXPERIMENT_KINDS = ("toy", "synth_grid", "hidden_dims", "embed_size_ablation", "real_protocol")

DEFAULT_SWITCH_TAUS = (5.0, 10.0, 50.0, 100.0)

KNOWN_ESTIMATORS = (
    "ips",
    "snips",
    "dm",
    "dr",
    "switch_dr",
    "mips",
    "mips_true",
    "mips_slope",
    "learned_mips_onehot",
    "learned_mips_finetune",
    "learned_mips_combined",
)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    estimators: tuple[str, ...]
    runs: int = 30
    seed: int = 0
    action_counts: tuple[int, ...] = ()
    sample_sizes: tuple[int, ...] = ()
    hidden_dim_counts: tuple[int, ...] = ()
    embed_sizes: tuple[int, ...] = ()
    synth_overrides: dict = field(default_factory=dict)
    n_eval_contexts: int = 100_000
    toy_datasets_per_env: int = 15
    train: TrainConfig = TrainConfig()
    mips_iters: int = 200
    csv_path: str | None = None
    bootstrap_size: int = 10_000
    true_value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.estimators:
            raise ValueError("estimator list must not be empty")
        for name in self.estimators:
            base = name.split("@", 1)[0]
            if base not in KNOWN_ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}")
        if self.kind in ("toy", "synth_grid") and not self.action_counts:
            raise ValueError(f"{self.kind} experiment needs at least one action count")
        if self.kind == "hidden_dims" and not self.hidden_dim_counts:
            raise ValueError("hidden_dims experiment needs hidden-dimension counts")
        if self.kind == "embed_size_ablation" and not self.embed_sizes:
            raise ValueError("embed_size_ablation experiment needs embedding sizes")
        if self.kind == "real_protocol" and self.csv_path is None:
            raise ValueError("real_protocol experiment needs a csv_path")


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    cell: tuple[tuple[str, float], ...]
    run_index: int
    seed: int
    estimator: str
    estimate: float
    true_value: float
    squared_error: float
    error: str | None = None


@dataclass(frozen=True)
class AggregateRecord:
    cell: tuple[tuple[str, float], ...]
    estimator: str
    mse_mean: float
    mse_stderr: float
    n_runs: int
    n_failed: int


@dataclass(frozen=True)
class RelativeCdf:
    estimator: str
    relative_mses: tuple[float, ...]  # sorted
    grid: tuple[float, ...]
    values: tuple[float, ...]

    def at(self, x: float) -> float:
        rel = np.asarray(self.relative_mses)
        return float((rel <= x).mean())


def cells_for(spec: ExperimentSpec) -> list[dict[str, float]]:
    if spec.kind == "toy":
        n = spec.sample_sizes[0] if spec.sample_sizes else 1000
        return [{"actions": a, "samples": n} for a in spec.action_counts]
    if spec.kind == "synth_grid":
        sizes = spec.sample_sizes or (20_000,)
        return [{"actions": a, "samples": n} for a in spec.action_counts for n in sizes]
    if spec.kind == "hidden_dims":
        a = spec.action_counts[0] if spec.action_counts else 500
        n = spec.sample_sizes[0] if spec.sample_sizes else 20_000
        return [{"actions": a, "samples": n, "hidden": h} for h in spec.hidden_dim_counts]
    if spec.kind == "embed_size_ablation":
        a = spec.action_counts[0] if spec.action_counts else 100
        n = spec.sample_sizes[0] if spec.sample_sizes else 20_000
        return [{"actions": a, "samples": n, "embed_size": s} for s in spec.embed_sizes]
    return [{"bootstrap": 1.0}]


def _derived_seed(master: int, label: str, cell_index: int, run_index: int) -> int:
    stream = SeededRng(master).stream(f"{label}-cell{cell_index}", run_index)
    return int(stream.integers(0, 2**31 - 1))


def _expand_estimators(names: tuple[str, ...]) -> list[tuple[str, str, float | None]]:
    """Expand estimator names into (record name, base name, tau) triples."""
    out: list[tuple[str, str, float | None]] = []
    for name in names:
        if name == "switch_dr":
            for tau in DEFAULT_SWITCH_TAUS:
                out.append((f"switch_dr@{tau:g}", "switch_dr", tau))
        elif name.startswith("switch_dr@"):
            tau = float(name.split("@", 1)[1])
            out.append((f"switch_dr@{tau:g}", "switch_dr", tau))
        else:
            out.append((name, name, None))
    return out


@dataclass
class _RunInputs:
    dataset: LoggedDataset
    target: PolicyMatrix
    logging_row: np.ndarray | None  # marginal denominator for classifier-based mips
    logging_matrix: PolicyMatrix | None  # exact per-context logging, for mips_true
    true_value: float
    env: object | None = None
    table: CategoricalEmbeddingTable | None = None
    cardinality: int | None = None
    train_cfg: TrainConfig = TrainConfig()
    mips_iters: int = 200
    embed_size: int | None = None


def _evaluate_estimators(
    names: tuple[str, ...], inputs: _RunInputs
) -> list[tuple[str, float | None, str | None]]:
    """Evaluate every requested estimator on one run's shared inputs."""
    expanded = _expand_estimators(names)
    train_cfg = inputs.train_cfg
    if inputs.embed_size is not None:
        train_cfg = dataclasses.replace(train_cfg, d_emb=inputs.embed_size)
    mips_cfg = MipsConfig(max_iters=inputs.mips_iters)
    cat_cfg = MipsConfig(
        max_iters=inputs.mips_iters,
        embedding_kind="categorical",
        cardinality=inputs.cardinality,
    )
    needs_model = {"dm", "dr", "switch_dr", "learned_mips_onehot"}
    shared_model = None
    if any(base in needs_model for _, base, _ in expanded):
        shared_model = train_reward_model(inputs.dataset, InputRepr.ONE_HOT, train_cfg)

    results: list[tuple[str, float | None, str | None]] = []
    for record_name, base, tau in expanded:
        try:
            if base == "ips":
                value = ips(inputs.dataset, inputs.target).estimate
            elif base == "snips":
                value = snips(inputs.dataset, inputs.target).estimate
            elif base == "dm":
                value = dm(inputs.dataset, inputs.target, shared_model).estimate
            elif base == "dr":
                value = dr(inputs.dataset, inputs.target, shared_model).estimate
            elif base == "switch_dr":
                value = switch_dr(inputs.dataset, inputs.target, shared_model, tau).estimate
            elif base == "mips":
                if inputs.dataset.observed_embeddings is None:
                    raise ValueError("mips requires observed embeddings")
                value = mips(
                    inputs.dataset,
                    inputs.target,
                    inputs.dataset.observed_embeddings,
                    cat_cfg,
                    logging=inputs.logging_row,
                ).estimate
            elif base == "mips_true":
                if inputs.env is None:
                    raise ValueError("mips_true requires a synthetic environment")
                value = mips_true(
                    inputs.env,
                    inputs.dataset,
                    inputs.target,
                    logging=inputs.logging_matrix,
                ).estimate
            elif base == "mips_slope":
                if inputs.table is None:
                    raise ValueError("mips_slope requires an embedding table")
                value = mips_slope(
                    inputs.dataset,
                    inputs.target,
                    inputs.table,
                    MipsConfig(max_iters=inputs.mips_iters),
                    logging=inputs.logging_row,
                )[0].estimate
            elif base == "learned_mips_onehot":
                value = learned_mips(
                    inputs.dataset,
                    inputs.target,
                    InputRepr.ONE_HOT,
                    train_cfg,
                    mips_cfg,
                    logging=inputs.logging_row,
                    model=shared_model,
                ).estimate
            elif base == "learned_mips_finetune":
                if inputs.table is None:
                    raise ValueError("learned_mips_finetune requires an embedding table")
                value = learned_mips(
                    inputs.dataset,
                    inputs.target,
                    InputRepr.PREDEFINED,
                    train_cfg,
                    mips_cfg,
                    table=inputs.table,
                    logging=inputs.logging_row,
                ).estimate
            elif base == "learned_mips_combined":
                if inputs.table is None:
                    raise ValueError("learned_mips_combined requires an embedding table")
                value = learned_mips(
                    inputs.dataset,
                    inputs.target,
                    InputRepr.COMBINED,
                    train_cfg,
                    mips_cfg,
                    table=inputs.table,
                    logging=inputs.logging_row,
                ).estimate
            else:  # pragma: no cover - guarded by spec validation
                raise ValueError(f"unknown estimator {base!r}")
            results.append((record_name, float(value), None))
        except Exception as exc:  # noqa: BLE001 - failures become run records
            results.append((record_name, None, f"{type(exc).__name__}: {exc}"))
    return results


@dataclass(frozen=True)
class _Task:
    spec: ExperimentSpec
    cell_index: int
    cell: tuple[tuple[str, float], ...]
    run_indices: tuple[int, ...]
    payload: object = None  # real_protocol: the base LoggedDataset


def _records_from_results(
    spec: ExperimentSpec,
    task: _Task,
    run_index: int,
    seed: int,
    true_value: float,
    results: list[tuple[str, float | None, str | None]],
) -> list[RunRecord]:
    records = []
    for name, value, error in results:
        if error is None:
            records.append(
                RunRecord(
                    experiment=spec.kind,
                    cell=task.cell,
                    run_index=run_index,
                    seed=seed,
                    estimator=name,
                    estimate=value,
                    true_value=true_value,
                    squared_error=(value - true_value) ** 2,
                    error=None,
                )
            )
        else:
            records.append(
                RunRecord(
                    experiment=spec.kind,
                    cell=task.cell,
                    run_index=run_index,
                    seed=seed,
                    estimator=name,
                    estimate=float("nan"),
                    true_value=true_value,
                    squared_error=float("nan"),
                    error=error,
                )
            )
    return records


def _run_synth_task(task: _Task) -> list[RunRecord]:
    spec = task.spec
    cell = dict(task.cell)
    n_actions = int(cell["actions"])
    n_samples = int(cell["samples"])
    overrides = dict(spec.synth_overrides)
    if "hidden" in cell:
        overrides["hidden_dims"] = int(cell["hidden"])
    records: list[RunRecord] = []
    for run_index in task.run_indices:
        env_seed = _derived_seed(spec.seed, "env", task.cell_index, run_index)
        cfg = SynthConfig(n_actions=n_actions, seed=env_seed, **overrides)
        env = build_env(cfg)
        data_stream = SeededRng(spec.seed).stream(f"data-cell{task.cell_index}", run_index)
        dataset, logging = sample_logged_data(env, n_samples, data_stream, return_logging=True)
        target = target_policy(env, dataset.contexts)
        eval_stream = SeededRng(spec.seed).stream(f"eval-cell{task.cell_index}", run_index)
        eval_contexts = standard_normal(eval_stream, (spec.n_eval_contexts, cfg.d_x))
        true_value = target_policy_value(env, eval_contexts)
        obs_dims = cfg.observed_dims
        table = CategoricalEmbeddingTable(
            codes=env.embedding_table.codes[:, :obs_dims], cardinality=cfg.cardinality
        )
        model_seed = _derived_seed(spec.seed, "model", task.cell_index, run_index)
        train_cfg = dataclasses.replace(spec.train, seed=model_seed)
        inputs = _RunInputs(
            dataset=dataset,
            target=target,
            logging_row=logging.probs.mean(axis=0),
            logging_matrix=logging,
            true_value=true_value,
            env=env,
            table=table,
            cardinality=cfg.cardinality,
            train_cfg=train_cfg,
            mips_iters=spec.mips_iters,
            embed_size=int(cell["embed_size"]) if "embed_size" in cell else None,
        )
        results = _evaluate_estimators(spec.estimators, inputs)
        records.extend(
            _records_from_results(spec, task, run_index, env_seed, true_value, results)
        )
    return records


def _run_toy_task(task: _Task) -> list[RunRecord]:
    """One toy task covers a block of runs sharing a single reward function."""
    spec = task.spec
    cell = dict(task.cell)
    n_actions = int(cell["actions"])
    n_samples = int(cell["samples"])
    env_index = task.run_indices[0] // spec.toy_datasets_per_env
    env_seed = _derived_seed(spec.seed, "toy-env", task.cell_index, env_index)
    env = build_toy(ToyConfig(n_actions=n_actions, seed=env_seed))
    eval_stream = SeededRng(spec.seed).stream(f"toy-eval-cell{task.cell_index}", env_index)
    eval_contexts = standard_normal(eval_stream, (spec.n_eval_contexts, env.config.d_x))
    true_value = toy_uniform_value(env, eval_contexts)
    records: list[RunRecord] = []
    for run_index in task.run_indices:
        data_stream = SeededRng(spec.seed).stream(
            f"toy-data-cell{task.cell_index}", run_index
        )
        dataset = sample_toy_logged_data(env, n_samples, data_stream)
        target = PolicyMatrix(np.full((n_samples, n_actions), 1.0 / n_actions))
        logging = toy_logging_policy(env, n_samples)
        model_seed = _derived_seed(spec.seed, "toy-model", task.cell_index, run_index)
        train_cfg = dataclasses.replace(spec.train, seed=model_seed)
        inputs = _RunInputs(
            dataset=dataset,
            target=target,
            logging_row=logging.probs[0],
            logging_matrix=logging,
            true_value=true_value,
            train_cfg=train_cfg,
            mips_iters=spec.mips_iters,
        )
        results = _evaluate_estimators(spec.estimators, inputs)
        records.extend(
            _records_from_results(spec, task, run_index, model_seed, true_value, results)
        )
    return records


def _run_real_task(task: _Task) -> list[RunRecord]:
    spec = task.spec
    base: LoggedDataset
    table: CategoricalEmbeddingTable | None
    base, table = task.payload
    if spec.true_value is None:
        raise ValueError("real_protocol requires a known true target-policy value")
    cardinality = table.cardinality if table is not None else None
    records: list[RunRecord] = []
    for run_index in task.run_indices:
        stream = SeededRng(spec.seed).stream("bootstrap", run_index)
        idx = stream.integers(0, base.n, spec.bootstrap_size)
        dataset = LoggedDataset(
            contexts=base.contexts[idx],
            actions=base.actions[idx],
            rewards=base.rewards[idx],
            logging_propensities=base.logging_propensities[idx],
            n_actions=base.n_actions,
            observed_embeddings=None
            if base.observed_embeddings is None
            else base.observed_embeddings[idx],
        )
        target = PolicyMatrix(
            np.full((dataset.n, dataset.n_actions), 1.0 / dataset.n_actions)
        )
        model_seed = _derived_seed(spec.seed, "real-model", task.cell_index, run_index)
        train_cfg = dataclasses.replace(spec.train, seed=model_seed)
        inputs = _RunInputs(
            dataset=dataset,
            target=target,
            logging_row=None,
            logging_matrix=None,
            true_value=spec.true_value,
            table=table,
            cardinality=cardinality,
            train_cfg=train_cfg,
            mips_iters=spec.mips_iters,
        )
        results = _evaluate_estimators(spec.estimators, inputs)
        records.extend(
            _records_from_results(
                spec, task, run_index, model_seed, spec.true_value, results
            )
        )
    return records


def _execute_task(task: _Task) -> list[RunRecord]:
    if task.spec.kind == "toy":
        return _run_toy_task(task)
    if task.spec.kind == "real_protocol":
        return _run_real_task(task)
    return _run_synth_task(task)


def _build_tasks(spec: ExperimentSpec) -> list[_Task]:
    tasks: list[_Task] = []
    cells = cells_for(spec)
    if spec.kind == "real_protocol":
        from .csvio import load_logged_csv

        base, table = load_logged_csv(spec.csv_path)
        cell = tuple(sorted(cells[0].items()))
        for run_index in range(spec.runs):
            tasks.append(_Task(spec, 0, cell, (run_index,), payload=(base, table)))
        return tasks
    for cell_index, cell in enumerate(cells):
        cell_t = tuple(sorted(cell.items()))
        if spec.kind == "toy":
            block = spec.toy_datasets_per_env
            for start in range(0, spec.runs, block):
                runs = tuple(range(start, min(start + block, spec.runs)))
                tasks.append(_Task(spec, cell_index, cell_t, runs))
        else:
            for run_index in range(spec.runs):
                tasks.append(_Task(spec, cell_index, cell_t, (run_index,)))
    return tasks


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw:
        count = int(raw)
        if count < 1:
            raise ValueError(f"{WORKERS_ENV_VAR} must be >= 1")
        return count
    return os.cpu_count() or 1


def _single_threaded_blas() -> None:
    """Pin BLAS to one thread inside each worker.

    With several worker processes on a small machine, per-process BLAS
    threading oversubscribes the cores and slows everything down.
    """
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def run_experiment(spec: ExperimentSpec):
    """Execute every (cell, run, estimator) combination; returns sorted
    records plus per-cell aggregates."""
    tasks = _build_tasks(spec)
    workers = min(worker_count(), len(tasks))
    all_records: list[RunRecord] = []
    if workers <= 1:
        for task in tasks:
            all_records.extend(_execute_task(task))
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_single_threaded_blas
        ) as pool:
            for batch in pool.map(_execute_task, tasks, chunksize=1):
                all_records.extend(batch)
    all_records.sort(key=lambda r: (r.cell, r.run_index, r.estimator))
    return all_records, aggregate_records(all_records)


def aggregate_records(records: list[RunRecord]) -> list[AggregateRecord]:
    """Per-cell, per-estimator MSE mean and standard error over clean runs."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.cell, rec.estimator), []).append(rec)
    out = []
    for (cell, estimator), recs in sorted(groups.items()):
        clean = [r.squared_error for r in recs if r.error is None]
        n_failed = len(recs) - len(clean)
        arr = np.asarray(clean)
        if arr.size == 0:
            mse_mean, stderr = float("nan"), float("nan")
        else:
            mse_mean = float(arr.mean())
            stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        out.append(
            AggregateRecord(
                cell=cell,
                estimator=estimator,
                mse_mean=mse_mean,
                mse_stderr=stderr,
                n_runs=len(clean),
                n_failed=n_failed,
            )
        )
    return out


def relative_mse_cdf(
    records: list[RunRecord], baseline: str = "ips"
) -> list[RelativeCdf]:
    """Relative-MSE CDFs: per run, each estimator's squared error over the
    baseline's; the CDF value at 1.0 is the fraction of runs beating the
    baseline."""
    by_run: dict[tuple, dict[str, float]] = {}
    for rec in records:
        if rec.error is not None:
            continue
        by_run.setdefault((rec.cell, rec.run_index), {})[rec.estimator] = rec.squared_error
    estimators = sorted({rec.estimator for rec in records})
    if baseline not in estimators:
        raise DegenerateInputError(f"baseline estimator {baseline!r} missing from records")
    rel: dict[str, list[float]] = {name: [] for name in estimators}
    for _, values in sorted(by_run.items()):
        if baseline not in values:
            continue
        base = values[baseline]
        if base <= 0:
            raise DegenerateInputError(
                "baseline squared error is zero; relative MSE undefined"
            )
        for name, se in values.items():
            rel[name].append(se / base)
    out = []
    for name in estimators:
        values = np.sort(np.asarray(rel[name]))
        if values.size == 0:
            continue
        grid = np.unique(values)
        cdf = np.searchsorted(values, grid, side="right") / values.size
        out.append(
            RelativeCdf(
                estimator=name,
                relative_mses=tuple(float(v) for v in values),
                grid=tuple(float(g) for g in grid),
                values=tuple(float(v) for v in cdf),
            )
        )
    return out
