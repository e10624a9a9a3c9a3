"""Non-contextual view of marginalized reweighting as a direct method.

For logged (action, embedding, reward) triples with a known action-level
logging distribution, the marginalized estimate can be rewritten as a
direct-method sum over actions with a data-driven expected-reward vector.
With a Gaussian class-conditional posterior this vector is a kernel
regression in embedding space. These functions make both sides of that
identity executable so the estimators module can be cross-validated
against them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateSupportError


@dataclass(frozen=True)
class NonContextualLog:
    """Logged data without contexts: actions, embeddings, rewards, logging probs."""

    actions: np.ndarray  # (n,) int
    embeddings: np.ndarray  # (n, d)
    rewards: np.ndarray  # (n,)
    logging_probs: np.ndarray  # (n_actions,)

    def __post_init__(self) -> None:
        actions = np.asarray(self.actions, dtype=np.int64)
        embeddings = np.asarray(self.embeddings, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        logging = np.asarray(self.logging_probs, dtype=float)
        if embeddings.ndim != 2 or actions.ndim != 1 or rewards.ndim != 1:
            raise ValueError("embeddings must be (n, d) with aligned actions/rewards")
        n = embeddings.shape[0]
        if actions.shape[0] != n or rewards.shape[0] != n:
            raise ValueError("length mismatch between log fields")
        if logging.ndim != 1 or np.any(logging < 0) or abs(logging.sum() - 1.0) > 1e-9:
            raise ValueError("logging_probs must be a probability vector over actions")
        if np.any(actions < 0) or np.any(actions >= logging.shape[0]):
            raise ValueError("action index outside the logging distribution")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "logging_probs", logging)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logging_probs.shape[0]


def _check_posterior(log: NonContextualLog, posterior) -> np.ndarray:
    post = np.asarray(posterior, dtype=float)
    if post.shape != (log.n, log.n_actions):
        raise ValueError(
            f"posterior must have shape ({log.n}, {log.n_actions}), got {post.shape}"
        )
    return post


def dm_equivalent_reward(log: NonContextualLog, posterior) -> np.ndarray:
    """Per-action expected-reward vector equivalent to the weight-form estimate.

    ``posterior`` holds p(a | e_t) per logged sample. Entry a of the result
    is the posterior-over-logging-probability weighted mean reward, so that
    sum_a pi(a) * result[a] reproduces the marginalized weight-form estimate
    for any target distribution pi.
    """
    post = _check_posterior(log, posterior)
    if np.any(log.logging_probs <= 0):
        bad = int(np.argmax(log.logging_probs <= 0))
        raise DegenerateSupportError(
            f"logging probability of action {bad} is zero; its reward value is undefined"
        )
    return (post.T @ log.rewards) / (log.n * log.logging_probs)


def mips_weight_form(log: NonContextualLog, target, posterior) -> float:
    """Marginalized estimate in weight form: mean of rewards times
    posterior-averaged importance ratios."""
    post = _check_posterior(log, posterior)
    pi = np.asarray(target, dtype=float)
    if pi.shape != (log.n_actions,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("target must be a probability vector over actions")
    support = pi > 0
    if np.any(log.logging_probs[support] <= 0):
        bad = int(np.argmax(support & (log.logging_probs <= 0)))
        raise DegenerateSupportError(
            f"target puts mass on action {bad} with zero logging probability"
        )
    ratio = np.zeros_like(pi)
    ratio[support] = pi[support] / log.logging_probs[support]
    weights = post @ ratio
    return float(np.mean(weights * log.rewards))


def kernel_reward(
    log: NonContextualLog, action_embeddings, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel weighted reward average per action.

    Returns ``(values, weights)`` where ``weights[a, t]`` is the unnormalized
    Gaussian kernel exp(-||e_t - f(a)||^2 / (2 sigma2)) and ``values[a]`` is
    the mean of kernel-weighted rewards. Samples closer to an action's
    embedding contribute more; the weights depend on the embeddings only
    through squared Euclidean distances.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    f = np.asarray(action_embeddings, dtype=float)
    if f.ndim != 2 or f.shape[1] != log.embeddings.shape[1]:
        raise ValueError("action_embeddings must be (n_actions, d) matching the log")
    diff = f[:, None, :] - log.embeddings[None, :, :]  # (a, n, d)
    sq = (diff * diff).sum(axis=2)
    weights = np.exp(-0.5 * sq / sigma2)
    values = weights @ log.rewards / log.n
    return values, weights
