"""scikit-learn style wrapper around :func:`train`."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..gridworld import Demonstration, Gridworld, GridSpec
from ..mdp import TabularPolicy
from .training import TrainConfig, evaluate, train, _streams


class ImitationLearner(BaseEstimator):
    """Learn a tabular policy for ``grid`` from expert demonstrations.

    ``fit`` takes a :class:`Demonstration` (with actions for GAIL, state-only
    otherwise). ``predict``/``predict_proba`` map state indices to actions and
    action distributions; ``score`` is the mean true return over fresh
    evaluation rollouts.

    >>> learner = ImitationLearner(algorithm="GAIfO", iterations=5)  # doctest: +SKIP
    >>> learner.fit(demos).score()  # doctest: +SKIP
    """

    def __init__(self, algorithm="IDDM", grid=None, lambda_p=0.01, lambda_s=0.1, iterations=100,
                 rollout_steps=1000, batch=512, lr=3e-4, policy_lr=None, disc_lr=None, mine_lr=None,
                 optimizer="sgd", mi_pretrain_steps=10_000, mi_update_steps=50, seed=0,
                 eval_rollouts=50, expert=None):
        self.algorithm = algorithm
        self.grid = grid
        self.lambda_p = lambda_p
        self.lambda_s = lambda_s
        self.iterations = iterations
        self.rollout_steps = rollout_steps
        self.batch = batch
        self.lr = lr
        self.policy_lr = policy_lr
        self.disc_lr = disc_lr
        self.mine_lr = mine_lr
        self.optimizer = optimizer
        self.mi_pretrain_steps = mi_pretrain_steps
        self.mi_update_steps = mi_update_steps
        self.seed = seed
        self.eval_rollouts = eval_rollouts
        self.expert = expert

    def _config(self):
        names = ("algorithm", "lambda_p", "lambda_s", "iterations", "rollout_steps", "batch", "lr",
                 "policy_lr", "disc_lr", "mine_lr", "optimizer", "mi_pretrain_steps",
                 "mi_update_steps", "seed")
        return TrainConfig(**{n: getattr(self, n) for n in names})

    def fit(self, X: Demonstration, y=None):
        cfg = self._config()
        self.world_ = Gridworld(self.grid if self.grid is not None else GridSpec.reference())
        self.policy_, self.record_ = train(cfg.algorithm, self.world_, X, cfg, expert=self.expert,
                                           eval_rollouts=self.eval_rollouts)
        self.n_states_, self.n_actions_ = self.world_.n_states, self.world_.n_actions
        return self

    def _states(self, X):
        s = np.asarray(X, dtype=np.int64).reshape(-1)
        if s.size and (s.min() < 0 or s.max() >= self.n_states_):
            raise ValueError(f"state indices must lie in [0, {self.n_states_})")
        return s

    def predict_proba(self, X):
        check_is_fitted(self, "policy_")
        return self.policy_.probs[self._states(X)]

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X=None, y=None):
        """Mean environment return of the learned policy (``X`` and ``y`` are ignored)."""
        check_is_fitted(self, "policy_")
        rng = _streams(self.seed)[4]
        return evaluate(self.world_, self.policy_, self.eval_rollouts, rng)["mean"]

    @property
    def policy(self) -> TabularPolicy:
        check_is_fitted(self, "policy_")
        return self.policy_
