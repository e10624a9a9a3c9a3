"""Off-policy estimators: IPS, SNIPS, DM, DR, Switch-DR and marginalized variants.

The marginalized estimators reweight rewards by embedding-propensity ratios
instead of raw action-propensity ratios. ``mips`` estimates the reverse
distribution p(a | e) with the in-package multinomial classifier;
``mips_true`` uses the environment's exact embedding distributions;
``learned_mips`` first trains a reward model and uses its per-action
embedding rows; ``mips_slope`` additionally selects a subset of embedding
dimensions with a confidence-interval (Lepski-style) rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CategoricalEmbeddingTable,
    DegenerateInputError,
    DegenerateSupportError,
    EstimatorResult,
    LoggedDataset,
    PolicyMatrix,
    one_hot_codes,
)
from .ml import fit_multinomial_grouped
from .reward_model import InputRepr, RewardModel, TrainConfig, train_reward_model

_SAMPLE_CHUNK = 4096


@dataclass(frozen=True)
class MipsConfig:
    """Settings for classifier-based marginalized estimators."""

    l2: float = 1e-6
    max_iters: int = 200
    floor: float = 1e-10
    embedding_kind: str = "real"  # "real" feeds embeddings raw; "categorical" one-hot encodes
    cardinality: int | None = None

    def __post_init__(self) -> None:
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        if self.embedding_kind not in ("real", "categorical"):
            raise ValueError(f"unknown embedding_kind {self.embedding_kind!r}")


@dataclass(frozen=True)
class SlopeSelection:
    """Trace of the dimension-subset selection."""

    subsets: tuple[tuple[int, ...], ...]
    chosen: tuple[int, ...]
    estimates: tuple[float, ...]
    half_widths: tuple[float, ...]


def _check_target(dataset: LoggedDataset, target: PolicyMatrix) -> None:
    if target.n != dataset.n or target.n_actions != dataset.n_actions:
        raise ValueError(
            f"target policy matrix has shape {target.probs.shape}, "
            f"expected ({dataset.n}, {dataset.n_actions})"
        )


def vanilla_weights(dataset: LoggedDataset, target: PolicyMatrix) -> np.ndarray:
    """Per-sample importance weights pi(a_t|x_t) / pi_0(a_t|x_t)."""
    _check_target(dataset, target)
    idx = np.arange(dataset.n)
    return target.probs[idx, dataset.actions] / dataset.logging_propensities


def _weight_diagnostics(weights: np.ndarray) -> dict[str, float]:
    total = float(weights.sum())
    sq = float((weights * weights).sum())
    return {
        "mean_weight": total / weights.shape[0],
        "max_weight": float(weights.max()),
        "ess": (total * total / sq) if sq > 0 else 0.0,
    }


def ips(dataset: LoggedDataset, target: PolicyMatrix) -> EstimatorResult:
    """Inverse propensity scoring: mean of importance-weighted rewards."""
    w = vanilla_weights(dataset, target)
    return EstimatorResult(
        estimate=float(np.mean(w * dataset.rewards)),
        diagnostics=_weight_diagnostics(w),
    )


def snips(dataset: LoggedDataset, target: PolicyMatrix) -> EstimatorResult:
    """Self-normalized IPS: weighted rewards divided by the weight sum."""
    w = vanilla_weights(dataset, target)
    total = float(w.sum())
    if total <= 0:
        raise DegenerateInputError("all importance weights are zero")
    return EstimatorResult(
        estimate=float((w * dataset.rewards).sum() / total),
        diagnostics=_weight_diagnostics(w),
    )


def _dm_term(dataset: LoggedDataset, target: PolicyMatrix, model: RewardModel) -> float:
    if model.n_actions != dataset.n_actions:
        raise ValueError("reward model does not cover the action set")
    total = 0.0
    for start in range(0, dataset.n, _SAMPLE_CHUNK):
        chunk = slice(start, min(start + _SAMPLE_CHUNK, dataset.n))
        preds = model.predict_matrix(dataset.contexts[chunk])
        total += float((target.probs[chunk] * preds).sum())
    return total / dataset.n


def dm(dataset: LoggedDataset, target: PolicyMatrix, model: RewardModel) -> EstimatorResult:
    """Direct method: model predictions averaged under the target policy."""
    _check_target(dataset, target)
    return EstimatorResult(estimate=_dm_term(dataset, target, model), diagnostics={})


def _model_residuals(dataset: LoggedDataset, model: RewardModel) -> np.ndarray:
    preds = np.empty(dataset.n)
    emb = model.action_embeddings()
    proj = model.project_contexts(dataset.contexts)
    preds = (proj * emb[dataset.actions]).sum(axis=1) + model.bias
    return dataset.rewards - preds


def dr(dataset: LoggedDataset, target: PolicyMatrix, model: RewardModel) -> EstimatorResult:
    """Doubly robust: direct method plus importance-weighted residuals."""
    w = vanilla_weights(dataset, target)
    resid = _model_residuals(dataset, model)
    estimate = _dm_term(dataset, target, model) + float(np.mean(w * resid))
    return EstimatorResult(estimate=estimate, diagnostics=_weight_diagnostics(w))


def switch_dr(
    dataset: LoggedDataset, target: PolicyMatrix, model: RewardModel, tau: float
) -> EstimatorResult:
    """DR with the residual correction suppressed where the weight exceeds tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    w = vanilla_weights(dataset, target)
    resid = _model_residuals(dataset, model)
    keep = w <= tau
    estimate = _dm_term(dataset, target, model) + float(np.mean(w * resid * keep))
    diag = _weight_diagnostics(w)
    diag["switch_fraction"] = float(1.0 - keep.mean())
    return EstimatorResult(estimate=estimate, diagnostics=diag)


def _fallback_logging_row(dataset: LoggedDataset, floor: float) -> np.ndarray:
    """Context-free logging distribution reconstructed from logged propensities.

    Observed actions get their mean logged propensity; actions never logged
    share the residual probability mass uniformly (floored).
    """
    a = dataset.n_actions
    sums = np.zeros(a)
    counts = np.zeros(a)
    np.add.at(sums, dataset.actions, dataset.logging_propensities)
    np.add.at(counts, dataset.actions, 1.0)
    seen = counts > 0
    row = np.zeros(a)
    row[seen] = sums[seen] / counts[seen]
    n_unseen = int((~seen).sum())
    if n_unseen:
        residual = max(1.0 - row[seen].sum(), 0.0)
        row[~seen] = max(residual / n_unseen, floor)
    return np.maximum(row, floor)


def _marginal_weight_sum(
    posterior: np.ndarray,
    row_of: np.ndarray,
    target: PolicyMatrix,
    logging_probs,  # (n, a) matrix or (a,) row
    floor: float,
) -> np.ndarray:
    """w_t = sum_a posterior[row_of[t], a] * target[t, a] / logging[t, a]."""
    n = target.n
    weights = np.empty(n)
    logging_is_row = np.ndim(logging_probs) == 1
    for start in range(0, n, _SAMPLE_CHUNK):
        chunk = slice(start, min(start + _SAMPLE_CHUNK, n))
        denom = logging_probs if logging_is_row else logging_probs[chunk]
        ratio = target.probs[chunk] / np.maximum(denom, floor)
        weights[chunk] = (posterior[row_of[chunk]] * ratio).sum(axis=1)
    return weights


def _resolve_logging_probs(
    dataset: LoggedDataset, logging, floor: float
) -> np.ndarray:
    """Per-action logging probabilities for the weight denominator.

    Accepts a single marginal row (length n_actions), a full PolicyMatrix,
    or None, which reconstructs a marginal row from the logged propensities.
    The classifier's reverse distribution is fit marginally over contexts,
    so a marginal denominator is the consistent default; a full matrix is
    honored for context-independent logging policies.
    """
    if logging is None:
        return _fallback_logging_row(dataset, floor)
    if isinstance(logging, PolicyMatrix):
        _check_target(dataset, logging)
        return logging.probs
    row = np.asarray(logging, dtype=float)
    if row.shape != (dataset.n_actions,) or np.any(row < 0):
        raise ValueError("logging must be a PolicyMatrix, a probability row, or None")
    return row


def _mips_from_grouping(
    dataset: LoggedDataset,
    target: PolicyMatrix,
    unique_rows: np.ndarray,
    inverse: np.ndarray,
    cfg: MipsConfig,
    logging,
) -> EstimatorResult:
    """Shared tail of the classifier-based estimators.

    ``unique_rows`` are the distinct classifier inputs and ``inverse`` maps
    each logged sample to its row, so the reverse-distribution fit and the
    posterior predictions run on the deduplicated problem.
    """
    counts = np.zeros((unique_rows.shape[0], dataset.n_actions))
    np.add.at(counts, (inverse, dataset.actions), 1.0)
    clf = fit_multinomial_grouped(
        unique_rows, counts, l2=cfg.l2, max_iters=cfg.max_iters
    )
    posterior = np.maximum(clf.predict_proba(unique_rows), cfg.floor)
    logging_probs = _resolve_logging_probs(dataset, logging, cfg.floor)
    w = _marginal_weight_sum(posterior, inverse, target, logging_probs, cfg.floor)
    terms = w * dataset.rewards
    diag = _weight_diagnostics(w)
    if dataset.n > 1:
        diag["term_half_width"] = 2.0 * float(terms.std(ddof=1)) / np.sqrt(dataset.n)
    else:
        diag["term_half_width"] = float("inf")
    return EstimatorResult(estimate=float(terms.mean()), diagnostics=diag)


def _group_codes(codes: np.ndarray, cardinality: int) -> tuple[np.ndarray, np.ndarray]:
    """Group categorical code rows via an integer key; returns (rows, inverse)."""
    key = codes @ (cardinality ** np.arange(codes.shape[1], dtype=np.int64))
    _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    return codes[first], inverse.ravel()


def _embedding_grouping(sample_embeddings, cfg: MipsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Distinct classifier input rows and the per-sample row index."""
    emb = np.asarray(sample_embeddings)
    if emb.ndim != 2:
        raise ValueError("sample_embeddings must be a 2-d matrix")
    if cfg.embedding_kind == "categorical":
        cardinality = cfg.cardinality
        if cardinality is None:
            cardinality = int(emb.max()) + 1
        rows, inverse = _group_codes(emb.astype(np.int64), cardinality)
        return one_hot_codes(rows, cardinality), inverse
    unique_rows, inverse = np.unique(emb.astype(float), axis=0, return_inverse=True)
    return unique_rows, inverse.ravel()


def mips(
    dataset: LoggedDataset,
    target: PolicyMatrix,
    sample_embeddings,
    cfg: MipsConfig = MipsConfig(),
    logging=None,
) -> EstimatorResult:
    """Marginalized IPS with a classifier-estimated reverse distribution.

    Fits p(a | e) on the logged (embedding, action) pairs, then reweights
    each reward by the posterior-averaged importance ratio
    sum_a p(a | e_t) pi(a | x_t) / pi_0(a). The denominator comes from
    ``logging`` (a marginal probability row or a PolicyMatrix) when
    supplied; otherwise a marginal distribution is reconstructed from the
    logged propensities.
    """
    _check_target(dataset, target)
    emb = np.asarray(sample_embeddings)
    if emb.ndim != 2 or emb.shape[0] != dataset.n:
        raise ValueError("sample_embeddings must align with the dataset")
    unique_rows, inverse = _embedding_grouping(emb, cfg)
    return _mips_from_grouping(dataset, target, unique_rows, inverse, cfg, logging)


def mips_true(
    env,
    dataset: LoggedDataset,
    target: PolicyMatrix,
    logging: PolicyMatrix | None = None,
) -> EstimatorResult:
    """MIPS with exact embedding propensities from the environment.

    The weight is the ratio of the observed embedding's marginal probability
    under the target and logging policies, computed over the observed
    (un-hidden) dimensions only.
    """
    from .synth import logging_policy  # local import to avoid a cycle

    _check_target(dataset, target)
    codes = dataset.observed_embeddings
    if codes is None or codes.shape[1] == 0:
        raise ValueError("dataset has no observed embedding dimensions")
    if logging is None:
        logging = logging_policy(env, dataset.contexts)
    _check_target(dataset, logging)
    probs = env.embedding_probs  # (a, d_e, c)
    n = dataset.n
    weights = np.empty(n)
    for start in range(0, n, _SAMPLE_CHUNK):
        chunk = slice(start, min(start + _SAMPLE_CHUNK, n))
        block = codes[chunk]
        cond = np.ones((block.shape[0], dataset.n_actions))
        for k in range(block.shape[1]):
            cond *= probs[:, k, block[:, k]].T
        num = (target.probs[chunk] * cond).sum(axis=1)
        den = (logging.probs[chunk] * cond).sum(axis=1)
        if np.any(den <= 0):
            bad = start + int(np.argmax(den <= 0))
            raise DegenerateSupportError(
                f"observed embedding at row {bad} has zero logging marginal; "
                "common embedding support is violated"
            )
        weights[chunk] = num / den
    return EstimatorResult(
        estimate=float(np.mean(weights * dataset.rewards)),
        diagnostics=_weight_diagnostics(weights),
    )


def mips_slope(
    dataset: LoggedDataset,
    target: PolicyMatrix,
    table: CategoricalEmbeddingTable,
    cfg: MipsConfig = MipsConfig(),
    logging=None,
) -> tuple[EstimatorResult, SlopeSelection]:
    """MIPS with greedy dimension dropping and a Lepski-style accept rule.

    Starting from all observed dimensions, repeatedly drops the dimension
    whose removal most shrinks the estimate's confidence half-width
    (2 x standard error of the per-sample weighted terms), producing a
    nested subset sequence. Subsets are accepted while their interval
    intersects every earlier interval; the last accepted subset wins.
    """
    _check_target(dataset, target)
    codes = dataset.observed_embeddings
    if codes is None or codes.shape[1] == 0:
        raise ValueError("dataset has no observed embedding dimensions")
    cardinality = table.cardinality
    sub_cfg = MipsConfig(
        l2=cfg.l2,
        max_iters=cfg.max_iters,
        floor=cfg.floor,
        embedding_kind="categorical",
        cardinality=cardinality,
    )

    def evaluate(dims: tuple[int, ...]) -> EstimatorResult:
        rows, inverse = _group_codes(codes[:, list(dims)], cardinality)
        feats = one_hot_codes(rows, cardinality)
        return _mips_from_grouping(dataset, target, feats, inverse, sub_cfg, logging)

    current = tuple(range(codes.shape[1]))
    results = {current: evaluate(current)}
    order = [current]
    while len(current) > 1:
        candidates = [current[:i] + current[i + 1 :] for i in range(len(current))]
        for cand in candidates:
            if cand not in results:
                results[cand] = evaluate(cand)
        current = min(
            candidates, key=lambda c: (results[c].diagnostics["term_half_width"], c)
        )
        order.append(current)

    estimates = [results[s].estimate for s in order]
    half_widths = [results[s].diagnostics["term_half_width"] for s in order]
    chosen_idx = 0
    for j in range(1, len(order)):
        lo_j, hi_j = estimates[j] - half_widths[j], estimates[j] + half_widths[j]
        ok = all(
            lo_j <= estimates[i] + half_widths[i] and estimates[i] - half_widths[i] <= hi_j
            for i in range(j)
        )
        if not ok:
            break
        chosen_idx = j
    chosen = order[chosen_idx]
    selection = SlopeSelection(
        subsets=tuple(order),
        chosen=chosen,
        estimates=tuple(estimates),
        half_widths=tuple(half_widths),
    )
    return results[chosen], selection


def learned_mips(
    dataset: LoggedDataset,
    target: PolicyMatrix,
    repr: InputRepr = InputRepr.ONE_HOT,
    train_cfg: TrainConfig = TrainConfig(),
    mips_cfg: MipsConfig = MipsConfig(),
    table: CategoricalEmbeddingTable | None = None,
    logging=None,
    model: RewardModel | None = None,
) -> EstimatorResult:
    """MIPS on embeddings extracted from a trained reward model.

    Trains the dot-product reward model on the logged data (unless a
    pre-trained ``model`` is supplied), assigns each sample its action's
    embedding row, and runs the classifier-based marginalized estimator on
    those real-valued embeddings.
    """
    _check_target(dataset, target)
    if model is None:
        model = train_reward_model(dataset, repr, train_cfg, table)
    emb = model.action_embeddings()
    # Samples sharing an action share a classifier input row, so group by
    # the logged action instead of sorting embedding rows.
    present = np.unique(dataset.actions)
    inverse = np.searchsorted(present, dataset.actions)
    cfg = MipsConfig(
        l2=mips_cfg.l2,
        max_iters=mips_cfg.max_iters,
        floor=mips_cfg.floor,
        embedding_kind="real",
    )
    return _mips_from_grouping(dataset, target, emb[present], inverse, cfg, logging)
