"""Shared data model for logged bandit feedback, policies, and estimator results.

All container types are immutable after construction (frozen dataclasses
holding read-only numpy arrays), so they can be shared freely across
parallel workers. Policy operations are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_ATOL = 1e-9


class DegenerateSupportError(ValueError):
    """A required logging probability (or marginal) is zero."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested operation (e.g. all-zero weights)."""


def _frozen_array(values, dtype=float, ndim=None, name="array") -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PolicyMatrix:
    """Row-stochastic matrix of action probabilities, one row per context."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = _frozen_array(self.probs, ndim=2, name="probs")
        if np.any(probs < 0):
            raise ValueError("policy probabilities must be non-negative")
        row_sums = probs.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_ATOL):
            worst = int(np.argmax(np.abs(row_sums - 1.0)))
            raise ValueError(
                f"policy rows must sum to 1 within {ROW_SUM_ATOL}; "
                f"row {worst} sums to {row_sums[worst]!r}"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class LoggedDataset:
    """Logged bandit feedback: contexts, actions, rewards and logging propensities.

    ``observed_embeddings`` optionally carries per-sample categorical action
    embedding codes (integer codes per dimension); estimators that do not use
    embeddings ignore it.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logging_propensities: np.ndarray
    n_actions: int
    observed_embeddings: np.ndarray | None = None

    def __post_init__(self) -> None:
        contexts = _frozen_array(self.contexts, ndim=2, name="contexts")
        actions = _frozen_array(self.actions, dtype=np.int64, ndim=1, name="actions")
        rewards = _frozen_array(self.rewards, ndim=1, name="rewards")
        props = _frozen_array(
            self.logging_propensities, ndim=1, name="logging_propensities"
        )
        n = contexts.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        for name, arr in (
            ("actions", actions),
            ("rewards", rewards),
            ("logging_propensities", props),
        ):
            if arr.shape[0] != n:
                raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
        if self.n_actions < 1:
            raise ValueError("n_actions must be positive")
        if np.any(actions < 0) or np.any(actions >= self.n_actions):
            bad = int(np.argmax((actions < 0) | (actions >= self.n_actions)))
            raise ValueError(
                f"action index {actions[bad]} at row {bad} outside [0, {self.n_actions})"
            )
        if np.any(props <= 0.0) or np.any(props > 1.0):
            bad = int(np.argmax((props <= 0.0) | (props > 1.0)))
            raise ValueError(
                f"logging propensity {props[bad]!r} at row {bad} outside (0, 1]"
            )
        embeds = self.observed_embeddings
        if embeds is not None:
            embeds = _frozen_array(embeds, dtype=np.int64, ndim=2, name="observed_embeddings")
            if embeds.shape[0] != n:
                raise ValueError("observed_embeddings length mismatch")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "logging_propensities", props)
        object.__setattr__(self, "observed_embeddings", embeds)

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def d_context(self) -> int:
        return self.contexts.shape[1]


@dataclass(frozen=True)
class CategoricalEmbeddingTable:
    """Per-action categorical embedding codes, one row per action.

    Every dimension shares a single category cardinality.
    """

    codes: np.ndarray
    cardinality: int

    def __post_init__(self) -> None:
        codes = _frozen_array(self.codes, dtype=np.int64, ndim=2, name="codes")
        if self.cardinality < 1:
            raise ValueError("cardinality must be positive")
        if np.any(codes < 0) or np.any(codes >= self.cardinality):
            raise ValueError(f"embedding codes must lie in [0, {self.cardinality})")
        object.__setattr__(self, "codes", codes)

    @property
    def n_actions(self) -> int:
        return self.codes.shape[0]

    @property
    def n_dims(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class EstimatorResult:
    """A policy-value estimate plus named diagnostics (weight stats etc.)."""

    estimate: float
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.estimate):
            raise ValueError(f"estimate must be finite, got {self.estimate!r}")


def epsilon_greedy_policy(q_values, epsilon: float) -> PolicyMatrix:
    """Epsilon-greedy policy over per-context action values.

    Each row puts ``1 - epsilon`` on the argmax (ties broken by lowest
    action index) plus ``epsilon / n_actions`` everywhere.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon!r}")
    q = np.asarray(q_values, dtype=float)
    if q.ndim != 2:
        raise ValueError("q_values must be a 2-d matrix")
    if not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite")
    n, n_actions = q.shape
    probs = np.full((n, n_actions), epsilon / n_actions)
    best = q.argmax(axis=1)  # np.argmax returns the lowest index on ties
    probs[np.arange(n), best] += 1.0 - epsilon
    return PolicyMatrix(probs)


def softmax_policy(q_values, beta: float) -> PolicyMatrix:
    """Softmax policy with sharpness ``beta``, computed with max-subtraction."""
    q = np.asarray(q_values, dtype=float)
    if q.ndim != 2:
        raise ValueError("q_values must be a 2-d matrix")
    if not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite")
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    scores = beta * q
    scores = scores - scores.max(axis=1, keepdims=True)
    exps = np.exp(scores)
    return PolicyMatrix(exps / exps.sum(axis=1, keepdims=True))


def one_hot_codes(codes, cardinality: int) -> np.ndarray:
    """One-hot encode categorical codes per dimension and concatenate.

    ``codes`` has shape (n, d); the result has shape (n, d * cardinality) with
    dimension k occupying columns [k * cardinality, (k + 1) * cardinality).
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2:
        raise ValueError("codes must be a 2-d matrix")
    if np.any(codes < 0) or np.any(codes >= cardinality):
        raise ValueError(f"codes must lie in [0, {cardinality})")
    n, d = codes.shape
    out = np.zeros((n, d * cardinality))
    cols = codes + cardinality * np.arange(d)[None, :]
    out[np.arange(n)[:, None], cols] = 1.0
    return out
