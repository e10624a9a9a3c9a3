"""Synthetic stand-in fixture for the bootstrap CDF protocol.

The proprietary dataset behind the bootstrap protocol is not bundled; this
generates a schema-compatible logged dataset from the synthetic environment
(non-uniform logging, categorical embedding columns) along with the exact
uniform-target policy value needed for squared-error computation.
"""
from __future__ import annotations

import numpy as np

from ..ml import SeededRng, standard_normal
from ..synth import SynthConfig, build_env, marginal_reward_matrix, sample_logged_data
from .csvio import save_logged_csv


def generate_standin_csv(
    path: str,
    n_actions: int = 240,
    d_e: int = 4,
    n: int = 10_000,
    seed: int = 0,
    n_eval_contexts: int = 100_000,
) -> float:
    """Write a stand-in logged-data CSV; returns the uniform policy's true value."""
    cfg = SynthConfig(n_actions=n_actions, d_e=d_e, seed=seed)
    env = build_env(cfg)
    data = sample_logged_data(env, n, SeededRng(seed).stream("standin-data"))
    save_logged_csv(path, data)
    contexts = standard_normal(
        SeededRng(seed).stream("standin-eval"), (n_eval_contexts, cfg.d_x)
    )
    total = 0.0
    for start in range(0, n_eval_contexts, 8192):
        q = marginal_reward_matrix(env, contexts[start : start + 8192])
        total += float(q.mean(axis=1).sum())
    return total / n_eval_contexts
