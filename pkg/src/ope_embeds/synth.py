"""Synthetic data-generating processes and exact ground-truth policy values.

Two environments are provided:

* ``SynthEnvironment`` — contextual rewards driven by categorical action
  embeddings, with a softmax logging policy and epsilon-greedy target
  policy; supports a linear reward form and a randomly initialized
  two-hidden-layer neural form, plus masking of embedding dimensions
  after rewards are generated.
* ``ToyEnvironment`` — per-action logistic rewards with a context-free
  logging policy proportional to Exp(1) draws.

Everything is deterministic given the config seed; sampling uses derived
streams so independent runs can execute in parallel with results identical
to serial execution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CategoricalEmbeddingTable,
    LoggedDataset,
    PolicyMatrix,
    epsilon_greedy_policy,
    one_hot_codes,
    softmax_policy,
)
from .ml import SeededRng, categorical, dirichlet, exponential, standard_normal, uniform

_CONTEXT_CHUNK = 8192
_ENUMERATION_BUDGET = 1_000_000
_MC_DRAWS = 4096


@dataclass(frozen=True)
class SynthConfig:
    n_actions: int
    d_x: int = 10
    d_e: int = 3
    cardinality: int = 10
    beta: float = -1.0
    epsilon: float = 0.05
    reward_noise_sd: float = 2.5
    hidden_dims: int = 0
    reward_kind: str = "linear"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_actions < 2:
            raise ValueError("n_actions must be at least 2")
        if self.d_x < 1 or self.d_e < 1 or self.cardinality < 2:
            raise ValueError("d_x >= 1, d_e >= 1 and cardinality >= 2 required")
        if not 0 <= self.hidden_dims < self.d_e:
            raise ValueError("hidden_dims must lie in [0, d_e)")
        if self.reward_noise_sd < 0:
            raise ValueError("reward_noise_sd must be non-negative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.reward_kind not in ("linear", "neural"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")

    @property
    def observed_dims(self) -> int:
        return self.d_e - self.hidden_dims


@dataclass(frozen=True)
class NeuralRewardParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float


@dataclass(frozen=True)
class SynthEnvironment:
    config: SynthConfig
    alpha: np.ndarray  # (n_actions, d_e, cardinality) embedding logits
    m_matrix: np.ndarray  # (d_x, d_x)
    theta_x: np.ndarray  # (d_x,)
    theta_e: np.ndarray  # (d_x,)
    category_vectors: np.ndarray  # (d_e, cardinality, d_x)
    eta: np.ndarray  # (d_e,) simplex weights per embedding dimension
    embedding_probs: np.ndarray  # (n_actions, d_e, cardinality) softmax of alpha
    embedding_table: CategoricalEmbeddingTable  # one realized code per (action, dim)
    neural: NeuralRewardParams | None = None

    @property
    def n_actions(self) -> int:
        return self.config.n_actions


def build_env(config: SynthConfig) -> SynthEnvironment:
    """Draw all environment parameters from their stated distributions."""
    rng = SeededRng(config.seed)
    r_alpha = rng.stream("env-alpha")
    r_reward = rng.stream("env-reward")
    r_eta = rng.stream("env-eta")
    r_table = rng.stream("env-table")
    a, d_e, c, d_x = config.n_actions, config.d_e, config.cardinality, config.d_x

    alpha = standard_normal(r_alpha, (a, d_e, c))
    m_matrix = uniform(r_reward, -1.0, 1.0, (d_x, d_x))
    theta_x = uniform(r_reward, -1.0, 1.0, d_x)
    theta_e = uniform(r_reward, -1.0, 1.0, d_x)
    category_vectors = standard_normal(r_reward, (d_e, c, d_x))
    concentration = np.maximum(uniform(r_eta, 0.0, 1.0, d_e), 1e-12)
    eta = dirichlet(r_eta, concentration)

    shifted = alpha - alpha.max(axis=2, keepdims=True)
    exps = np.exp(shifted)
    embedding_probs = exps / exps.sum(axis=2, keepdims=True)

    codes = np.empty((a, d_e), dtype=np.int64)
    for k in range(d_e):
        codes[:, k] = categorical(r_table, embedding_probs[:, k, :])
    table = CategoricalEmbeddingTable(codes=codes, cardinality=c)

    neural = None
    if config.reward_kind == "neural":
        r_net = rng.stream("env-net")
        width = 50
        d_in = d_x + d_e * c
        neural = NeuralRewardParams(
            w1=standard_normal(r_net, (d_in, width)) / np.sqrt(d_in),
            b1=standard_normal(r_net, width) / np.sqrt(d_in),
            w2=standard_normal(r_net, (width, width)) / np.sqrt(width),
            b2=standard_normal(r_net, width) / np.sqrt(width),
            w3=standard_normal(r_net, (width, 1))[:, 0] / np.sqrt(width),
            b3=float(standard_normal(r_net, 1)[0] / np.sqrt(width)),
        )
    return SynthEnvironment(
        config=config,
        alpha=alpha,
        m_matrix=m_matrix,
        theta_x=theta_x,
        theta_e=theta_e,
        category_vectors=category_vectors,
        eta=eta,
        embedding_probs=embedding_probs,
        embedding_table=table,
        neural=neural,
    )


def embedding_distribution(env: SynthEnvironment, action: int) -> np.ndarray:
    """Per-dimension categorical distribution of the embedding given an action."""
    if not 0 <= action < env.n_actions:
        raise ValueError(f"action {action} outside [0, {env.n_actions})")
    return env.embedding_probs[action].copy()


def _neural_forward(params: NeuralRewardParams, features: np.ndarray) -> np.ndarray:
    h = np.tanh(features @ params.w1 + params.b1)
    h = np.tanh(h @ params.w2 + params.b2)
    return h @ params.w3 + params.b3


def _dimension_terms(env: SynthEnvironment, contexts: np.ndarray) -> np.ndarray:
    """Per-category reward terms: (n, d_e, cardinality).

    Entry (t, k, c) is the contribution of category c in dimension k at
    context t, before weighting by the dimension importances. Terms are
    variance-normalized by the context dimension (bilinear term by d_x,
    linear terms by sqrt(d_x)) so the reward scale, and with it the
    sharpness of the softmax logging policy, does not grow with d_x.
    """
    d_x = contexts.shape[1]
    xm = contexts @ env.m_matrix / d_x  # (n, d_x)
    lin_x = contexts @ env.theta_x / np.sqrt(d_x)  # (n,)
    cross = np.einsum("nd,kcd->nkc", xm, env.category_vectors)
    lin_e = env.category_vectors @ env.theta_e / np.sqrt(d_x)  # (d_e, cardinality)
    return cross + lin_x[:, None, None] + lin_e[None, :, :]


def expected_reward(env: SynthEnvironment, context, embedding) -> float:
    """Expected reward at a context for a full categorical embedding."""
    x = np.asarray(context, dtype=float).reshape(1, -1)
    codes = np.asarray(embedding, dtype=np.int64).reshape(1, -1)
    if codes.shape[1] != env.config.d_e:
        raise ValueError("embedding must cover every dimension")
    return float(_expected_reward_rows(env, x, codes)[0])


def _expected_reward_rows(
    env: SynthEnvironment, contexts: np.ndarray, codes: np.ndarray
) -> np.ndarray:
    if env.config.reward_kind == "neural":
        feats = np.hstack([contexts, one_hot_codes(codes, env.config.cardinality)])
        return _neural_forward(env.neural, feats)
    terms = _dimension_terms(env, contexts)  # (n, d_e, c)
    n = contexts.shape[0]
    rows = np.arange(n)[:, None]
    dims = np.arange(env.config.d_e)[None, :]
    picked = terms[rows, dims, codes]  # (n, d_e)
    return picked @ env.eta


def marginal_reward_matrix(env: SynthEnvironment, contexts) -> np.ndarray:
    """Expected reward marginalized over the embedding: (n, n_actions).

    Exact per-dimension expectation for the linear reward; exact joint
    enumeration for the neural reward when the embedding space is small
    enough, otherwise seeded Monte Carlo.
    """
    contexts = np.asarray(contexts, dtype=float)
    out = np.empty((contexts.shape[0], env.n_actions))
    for start in range(0, contexts.shape[0], _CONTEXT_CHUNK):
        chunk = contexts[start : start + _CONTEXT_CHUNK]
        out[start : start + _CONTEXT_CHUNK] = _marginal_chunk(env, chunk)
    return out


def _all_code_combos(d_e: int, cardinality: int) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(cardinality)] * d_e), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _marginal_chunk(env: SynthEnvironment, contexts: np.ndarray) -> np.ndarray:
    cfg = env.config
    if cfg.reward_kind == "linear":
        terms = _dimension_terms(env, contexts)  # (n, d_e, c)
        weighted = terms * env.eta[None, :, None]
        return np.einsum("nkc,akc->na", weighted, env.embedding_probs)
    n_combo = cfg.cardinality**cfg.d_e
    if n_combo <= _ENUMERATION_BUDGET:
        combos = _all_code_combos(cfg.d_e, cfg.cardinality)
        values = np.empty((contexts.shape[0], n_combo))
        for cs in range(0, n_combo, 256):
            block = combos[cs : cs + 256]
            feats = one_hot_codes(block, cfg.cardinality)
            for xs in range(0, contexts.shape[0], 256):
                xb = contexts[xs : xs + 256]
                rep_x = np.repeat(xb, block.shape[0], axis=0)
                rep_f = np.tile(feats, (xb.shape[0], 1))
                vals = _neural_forward(env.neural, np.hstack([rep_x, rep_f]))
                values[xs : xs + xb.shape[0], cs : cs + block.shape[0]] = vals.reshape(
                    xb.shape[0], block.shape[0]
                )
        combo_probs = np.ones((env.n_actions, n_combo))
        for k in range(cfg.d_e):
            combo_probs *= env.embedding_probs[:, k, combos[:, k]]
        return values @ combo_probs.T
    # Monte Carlo fallback for enormous embedding spaces.
    rng = SeededRng(cfg.seed).stream("marginal-mc")
    total = np.zeros((contexts.shape[0], env.n_actions))
    for _ in range(_MC_DRAWS):
        codes = np.empty((env.n_actions, cfg.d_e), dtype=np.int64)
        for k in range(cfg.d_e):
            codes[:, k] = categorical(rng, env.embedding_probs[:, k, :])
        feats = one_hot_codes(codes, cfg.cardinality)  # (a, f)
        for t in range(contexts.shape[0]):
            rep = np.hstack([np.tile(contexts[t], (env.n_actions, 1)), feats])
            total[t] += _neural_forward(env.neural, rep)
    return total / _MC_DRAWS


def marginal_expected_reward(env: SynthEnvironment, context, action: int) -> float:
    if not 0 <= action < env.n_actions:
        raise ValueError(f"action {action} outside [0, {env.n_actions})")
    x = np.asarray(context, dtype=float).reshape(1, -1)
    return float(_marginal_chunk(env, x)[0, action])


def logging_policy(env: SynthEnvironment, contexts) -> PolicyMatrix:
    """Softmax policy over marginal expected rewards with sharpness beta."""
    return softmax_policy(marginal_reward_matrix(env, contexts), env.config.beta)


def target_policy(env: SynthEnvironment, contexts) -> PolicyMatrix:
    """Epsilon-greedy policy on the true marginal expected rewards."""
    return epsilon_greedy_policy(marginal_reward_matrix(env, contexts), env.config.epsilon)


def sample_logged_data(
    env: SynthEnvironment,
    n: int,
    stream: np.random.Generator,
    logging: PolicyMatrix | None = None,
    return_logging: bool = False,
):
    """Sample a logged dataset of size n.

    Contexts are standard normal; actions follow the softmax logging policy
    (or the supplied ``logging`` matrix); embeddings follow the per-action
    categorical distributions; rewards are normal around the expected reward
    of the sampled embedding. ``observed_embeddings`` keeps only the first
    ``d_e - hidden_dims`` dimensions; rewards and propensities are generated
    before masking and are unaffected by it.
    """
    if n < 1:
        raise ValueError("n must be positive")
    cfg = env.config
    contexts = standard_normal(stream, (n, cfg.d_x))
    pi0 = logging if logging is not None else logging_policy(env, contexts)
    if pi0.n != n or pi0.n_actions != env.n_actions:
        raise ValueError("logging policy matrix shape mismatch")
    actions = categorical(stream, pi0.probs)
    codes = np.empty((n, cfg.d_e), dtype=np.int64)
    for k in range(cfg.d_e):
        codes[:, k] = categorical(stream, env.embedding_probs[actions, k, :])
    mean_rewards = _expected_reward_rows(env, contexts, codes)
    noise = standard_normal(stream, n) * cfg.reward_noise_sd
    dataset = LoggedDataset(
        contexts=contexts,
        actions=actions,
        rewards=mean_rewards + noise,
        logging_propensities=pi0.probs[np.arange(n), actions],
        n_actions=env.n_actions,
        observed_embeddings=codes[:, : cfg.observed_dims],
    )
    return (dataset, pi0) if return_logging else dataset


def true_policy_value(env: SynthEnvironment, policy: PolicyMatrix, contexts) -> float:
    """Exact policy value over the given evaluation contexts (noise-free)."""
    contexts = np.asarray(contexts, dtype=float)
    if policy.n != contexts.shape[0]:
        raise ValueError("policy matrix must cover every evaluation context")
    total = 0.0
    for start in range(0, contexts.shape[0], _CONTEXT_CHUNK):
        chunk = contexts[start : start + _CONTEXT_CHUNK]
        q = _marginal_chunk(env, chunk)
        total += float((policy.probs[start : start + chunk.shape[0]] * q).sum())
    return total / contexts.shape[0]


def target_policy_value(env: SynthEnvironment, contexts) -> float:
    """Exact value of the epsilon-greedy target policy, computed chunk-wise.

    Equivalent to ``true_policy_value(env, target_policy(env, contexts),
    contexts)`` without materializing the full policy matrix.
    """
    contexts = np.asarray(contexts, dtype=float)
    eps = env.config.epsilon
    total = 0.0
    for start in range(0, contexts.shape[0], _CONTEXT_CHUNK):
        chunk = contexts[start : start + _CONTEXT_CHUNK]
        q = _marginal_chunk(env, chunk)
        best = q[np.arange(q.shape[0]), q.argmax(axis=1)]
        total += float(((1.0 - eps) * best + eps * q.mean(axis=1)).sum())
    return total / contexts.shape[0]


# ---------------------------------------------------------------------------
# Toy environment: per-action logistic rewards, context-free logging.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    n_actions: int
    d_x: int = 5
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_actions < 2 or self.d_x < 1 or self.noise_sd < 0:
            raise ValueError("invalid toy configuration")


@dataclass(frozen=True)
class ToyEnvironment:
    config: ToyConfig
    theta: np.ndarray  # (n_actions, d_x)
    mu: np.ndarray  # (n_actions,)
    nu: np.ndarray  # (n_actions,) positive logging weights

    @property
    def n_actions(self) -> int:
        return self.config.n_actions


def build_toy(config: ToyConfig) -> ToyEnvironment:
    rng = SeededRng(config.seed)
    r_env = rng.stream("toy-env")
    theta = standard_normal(r_env, (config.n_actions, config.d_x))
    mu = standard_normal(r_env, config.n_actions)
    nu = exponential(r_env, config.n_actions)
    return ToyEnvironment(config=config, theta=theta, mu=mu, nu=nu)


def toy_reward_matrix(env: ToyEnvironment, contexts) -> np.ndarray:
    """Per-action logistic expected rewards: (n, n_actions), each in (0, 1)."""
    contexts = np.asarray(contexts, dtype=float)
    logits = contexts @ env.theta.T + env.mu
    return 1.0 / (1.0 + np.exp(-logits))


def toy_logging_policy(env: ToyEnvironment, n: int) -> PolicyMatrix:
    probs = env.nu / env.nu.sum()
    return PolicyMatrix(np.tile(probs, (n, 1)))


def sample_toy_logged_data(
    env: ToyEnvironment, n: int, stream: np.random.Generator
) -> LoggedDataset:
    if n < 1:
        raise ValueError("n must be positive")
    cfg = env.config
    contexts = standard_normal(stream, (n, cfg.d_x))
    probs = env.nu / env.nu.sum()
    actions = categorical(stream, np.tile(probs, (n, 1)))
    means = toy_reward_matrix(env, contexts)[np.arange(n), actions]
    rewards = means + standard_normal(stream, n) * cfg.noise_sd
    return LoggedDataset(
        contexts=contexts,
        actions=actions,
        rewards=rewards,
        logging_propensities=probs[actions],
        n_actions=env.n_actions,
    )


def toy_true_policy_value(env: ToyEnvironment, policy: PolicyMatrix, contexts) -> float:
    contexts = np.asarray(contexts, dtype=float)
    if policy.n != contexts.shape[0]:
        raise ValueError("policy matrix must cover every evaluation context")
    return float((policy.probs * toy_reward_matrix(env, contexts)).sum() / contexts.shape[0])


def toy_uniform_value(env: ToyEnvironment, contexts) -> float:
    """Exact value of the uniform-random target policy, computed chunk-wise."""
    contexts = np.asarray(contexts, dtype=float)
    total = 0.0
    for start in range(0, contexts.shape[0], _CONTEXT_CHUNK):
        total += float(toy_reward_matrix(env, contexts[start : start + _CONTEXT_CHUNK]).sum())
    return total / (contexts.shape[0] * env.n_actions)
