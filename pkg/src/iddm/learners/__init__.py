"""Scorers, adversarial components, policy gradient and the imitation learners."""
from .adversarial import (
    Discriminator,
    MineEstimator,
    compose_reward,
    discriminator_update,
    fit_mine_on_joint,
    mine_update,
    shuffle_marginal,
)
from .estimator import ImitationLearner
from .policy_gradient import exact_entropy_gradient, policy_update, sampled_gradient
from .scorer import Scorer, scorer_eval
from .training import ALGORITHMS, RunRecord, TrainConfig, bco_train, train

__all__ = [
    "ALGORITHMS",
    "Discriminator",
    "MineEstimator",
    "RunRecord",
    "Scorer",
    "TrainConfig",
    "bco_train",
    "compose_reward",
    "discriminator_update",
    "fit_mine_on_joint",
    "ImitationLearner",
    "exact_entropy_gradient",
    "mine_update",
    "policy_update",
    "sampled_gradient",
    "scorer_eval",
    "shuffle_marginal",
    "train",
]
