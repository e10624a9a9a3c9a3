"""Off-policy evaluation for contextual bandits with learned action embeddings."""

from .core import (
    CategoricalEmbeddingTable,
    DegenerateInputError,
    DegenerateSupportError,
    EstimatorResult,
    LoggedDataset,
    PolicyMatrix,
    epsilon_greedy_policy,
    one_hot_codes,
    softmax_policy,
)
from .estimators import (
    MipsConfig,
    SlopeSelection,
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
from .ml import SeededRng, fit_lda, fit_multinomial, lda_posterior, predict_proba
from .reward_model import (
    InputRepr,
    RewardModel,
    TrainConfig,
    TrainingDivergenceError,
    build_action_features,
    extract_embeddings,
    predict_reward,
    train_reward_model,
)

__all__ = [
    "CategoricalEmbeddingTable",
    "DegenerateInputError",
    "DegenerateSupportError",
    "EstimatorResult",
    "InputRepr",
    "LoggedDataset",
    "MipsConfig",
    "PolicyMatrix",
    "RewardModel",
    "SeededRng",
    "SlopeSelection",
    "TrainConfig",
    "TrainingDivergenceError",
    "build_action_features",
    "dm",
    "dr",
    "epsilon_greedy_policy",
    "extract_embeddings",
    "fit_lda",
    "fit_multinomial",
    "ips",
    "lda_posterior",
    "learned_mips",
    "mips",
    "mips_slope",
    "mips_true",
    "one_hot_codes",
    "predict_proba",
    "predict_reward",
    "snips",
    "softmax_policy",
    "switch_dr",
    "train_reward_model",
]
