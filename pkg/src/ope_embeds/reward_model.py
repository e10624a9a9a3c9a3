"""Dot-product reward model whose linear layer doubles as action embeddings.

The model maps an action to a feature row (one-hot identity, one-hot
encoded categorical embedding, or both concatenated), multiplies it by an
embedding layer, and predicts the reward as the dot product with the
(optionally projected) context plus a bias. Its per-action embedding rows
feed the marginalized estimators; its predictions feed DM/DR.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import CategoricalEmbeddingTable, LoggedDataset, one_hot_codes


class TrainingDivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


class InputRepr(str, Enum):
    """Which action representation the reward model consumes."""

    ONE_HOT = "onehot"
    PREDEFINED = "predefined"
    COMBINED = "combined"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 256
    l2: float = 0.0
    seed: int = 0
    d_emb: int = 0  # 0 means full rank: embeddings live in context space

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.l2 < 0 or self.d_emb < 0:
            raise ValueError("invalid training configuration")


@dataclass(frozen=True)
class TrainInfo:
    epochs_run: int
    final_mse: float
    epoch_losses: tuple[float, ...]


@dataclass(frozen=True)
class RewardModel:
    action_features: np.ndarray  # (n_actions, f)
    embedding_layer: np.ndarray  # (f, d_emb)
    context_projection: np.ndarray | None  # (d_x, d_emb); None means identity
    bias: float
    train_info: TrainInfo

    @property
    def n_actions(self) -> int:
        return self.action_features.shape[0]

    @property
    def d_emb(self) -> int:
        return self.embedding_layer.shape[1]

    def action_embeddings(self) -> np.ndarray:
        """Learned embedding per action: feature row times embedding layer."""
        return self.action_features @ self.embedding_layer

    def project_contexts(self, contexts) -> np.ndarray:
        x = np.asarray(contexts, dtype=float)
        return x if self.context_projection is None else x @ self.context_projection

    def predict(self, contexts, action: int) -> np.ndarray:
        """Predicted rewards for one action across contexts."""
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        emb = self.action_features[action] @ self.embedding_layer
        return self.project_contexts(contexts) @ emb + self.bias

    def predict_matrix(self, contexts) -> np.ndarray:
        """Predicted rewards for every action: (n, n_actions)."""
        return self.project_contexts(contexts) @ self.action_embeddings().T + self.bias

    def to_json(self) -> str:
        doc = {
            "action_features_shape": list(self.action_features.shape),
            "embedding_layer": self.embedding_layer.tolist(),
            "context_projection": None
            if self.context_projection is None
            else self.context_projection.tolist(),
            "bias": self.bias,
            "train_info": {
                "epochs_run": self.train_info.epochs_run,
                "final_mse": self.train_info.final_mse,
            },
        }
        return json.dumps(doc, sort_keys=True)


def build_action_features(
    repr: InputRepr,
    n_actions: int,
    table: CategoricalEmbeddingTable | None = None,
) -> np.ndarray:
    """Per-action model input features for the chosen representation."""
    repr = InputRepr(repr)
    if repr is InputRepr.ONE_HOT:
        return np.eye(n_actions)
    if table is None:
        raise ValueError(f"{repr.value!r} representation requires an embedding table")
    if table.n_actions != n_actions:
        raise ValueError("embedding table does not cover the action set")
    encoded = one_hot_codes(table.codes, table.cardinality)
    if repr is InputRepr.PREDEFINED:
        return encoded
    return np.hstack([np.eye(n_actions), encoded])


def train_reward_model(
    dataset: LoggedDataset,
    repr: InputRepr = InputRepr.ONE_HOT,
    cfg: TrainConfig = TrainConfig(),
    table: CategoricalEmbeddingTable | None = None,
) -> RewardModel:
    """Fit the dot-product model by seeded mini-batch gradient descent.

    Minimizes the mean squared error between predicted and logged rewards
    with a fixed shuffling schedule, so identical inputs give bit-identical
    models. Raises :class:`TrainingDivergenceError` if the loss leaves the
    finite range (learning rate too high).
    """
    feats = build_action_features(repr, dataset.n_actions, table)
    x = dataset.contexts
    rewards = dataset.rewards
    actions = dataset.actions
    n, d_x = x.shape
    f = feats.shape[1]
    low_rank = cfg.d_emb > 0
    d_emb = cfg.d_emb if low_rank else d_x

    rng = np.random.default_rng(cfg.seed)
    embedding = rng.normal(0.0, 0.01, (f, d_emb))
    projection = rng.normal(0.0, 0.01, (d_x, d_emb)) if low_rank else None
    bias = 0.0

    # Every representation yields 0/1 feature rows with a fixed number of
    # active columns per action, so batched gathers/scatters on the active
    # columns replace dense feature matmuls.
    active_cols = np.stack([np.flatnonzero(feats[a]) for a in range(feats.shape[0])])
    sample_cols = active_cols[actions]  # (n, nnz)
    nnz = sample_cols.shape[1]

    order = np.arange(n)
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        sq_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            cols = sample_cols[idx]  # (b, nnz)
            xb = x[idx] if projection is None else x[idx] @ projection
            emb = embedding[cols].sum(axis=1)  # (b, d_emb)
            err = (emb * xb).sum(axis=1) + bias - rewards[idx]
            batch = idx.shape[0]
            with np.errstate(over="ignore"):  # overflow surfaces as divergence below
                sq_sum += float(err @ err)
            grad_rows = (err[:, None] * xb) * (cfg.learning_rate / batch)
            if projection is not None:
                grad_proj = x[idx].T @ (err[:, None] * emb) / batch
                if cfg.l2 > 0:
                    grad_proj += cfg.l2 * projection
            if cfg.l2 > 0:
                embedding *= 1.0 - cfg.learning_rate * cfg.l2
            np.subtract.at(
                embedding, cols.ravel(), np.repeat(grad_rows, nnz, axis=0)
            )
            if projection is not None:
                projection -= cfg.learning_rate * grad_proj
            bias -= cfg.learning_rate * float(err.mean())
        epoch_loss = sq_sum / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergenceError(
                f"training diverged at epoch {epoch}: loss became non-finite "
                f"(learning_rate={cfg.learning_rate})"
            )
        epoch_losses.append(epoch_loss)

    emb_all = feats @ embedding
    proj_x = x if projection is None else x @ projection
    final_pred = (emb_all[actions] * proj_x).sum(axis=1) + bias
    final_mse = float(np.mean((final_pred - rewards) ** 2))
    if not np.isfinite(final_mse):
        raise TrainingDivergenceError(
            f"training diverged by epoch {cfg.epochs}: final loss non-finite"
        )
    return RewardModel(
        action_features=feats,
        embedding_layer=embedding,
        context_projection=projection,
        bias=bias,
        train_info=TrainInfo(
            epochs_run=cfg.epochs,
            final_mse=final_mse,
            epoch_losses=tuple(epoch_losses),
        ),
    )


def training_loss_and_gradients(
    dataset: LoggedDataset,
    action_features: np.ndarray,
    embedding: np.ndarray,
    projection: np.ndarray | None,
    bias: float,
    l2: float = 0.0,
):
    """Full-batch training objective and its exact gradients.

    The objective is half the mean squared error plus half the L2 penalty,
    matching the per-batch gradients used by :func:`train_reward_model`.
    """
    x = dataset.contexts
    feats = action_features[dataset.actions]
    xb = x if projection is None else x @ projection
    emb = feats @ embedding
    err = (emb * xb).sum(axis=1) + bias - dataset.rewards
    n = dataset.n
    loss = 0.5 * float(err @ err) / n + 0.5 * l2 * float((embedding * embedding).sum())
    grad_emb = feats.T @ (err[:, None] * xb) / n + l2 * embedding
    grad_bias = float(err.mean())
    if projection is None:
        grad_proj = None
    else:
        loss += 0.5 * l2 * float((projection * projection).sum())
        grad_proj = x.T @ (err[:, None] * (feats @ embedding)) / n + l2 * projection
    return loss, grad_emb, grad_proj, grad_bias


def extract_embeddings(model: RewardModel) -> np.ndarray:
    return model.action_embeddings()


def predict_reward(model: RewardModel, contexts, action: int) -> np.ndarray:
    return model.predict(contexts, action)
