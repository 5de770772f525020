"""Discriminator, Donsker-Varadhan MI estimator and the per-step reward."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..exceptions import ValidationError
from ..mdp import TabularPolicy
from .optim import make_optimizer
from .scorer import Scorer

_TINY = np.nextafter(0.0, 1.0)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


class Discriminator:
    """``D = sigmoid(f)``; trained to be high on agent inputs and low on expert inputs."""

    def __init__(self, scorer: Scorer, l2=1e-4, optimizer="sgd", momentum=0.9):
        self.scorer = scorer
        self.l2 = l2
        self.optimizer = make_optimizer(optimizer, momentum)

    def logits(self, X):
        return self.scorer.forward(X)

    def prob(self, X):
        d = np.exp(_log_sigmoid(self.logits(X)))
        return np.clip(d, _TINY, np.nextafter(1.0, 0.0))

    def cost(self, X):
        """``-log D``, computed stably from the logits."""
        return -_log_sigmoid(self.logits(X))

    def objective(self, agent_X, expert_X):
        fa, fe = self.logits(agent_X), self.logits(expert_X)
        penalty = 0.5 * self.l2 * float(self.scorer.params @ self.scorer.params)
        return float(_log_sigmoid(fa).mean() + _log_sigmoid(-fe).mean()) - penalty


def discriminator_update(disc: Discriminator, agent_batch, expert_batch, lr) -> float:
    """One ascent step on ``mean_A log D + mean_E log(1 - D) - l2/2 |phi|^2``; returns the pre-step objective."""
    A = disc.scorer._check(agent_batch)
    E = disc.scorer._check(expert_batch)
    fa, fe = disc.logits(A), disc.logits(E)
    value = disc.objective(A, E)
    da = expit(-fa) / len(fa)  # d/df log sigmoid(f)
    de = -expit(fe) / len(fe)  # d/df log(1 - sigmoid(f))
    grad = disc.scorer.backward(A, da) + disc.scorer.backward(E, de) - disc.l2 * disc.scorer.params
    disc.optimizer.step(disc.scorer.params, grad, lr)
    return value


class MineEstimator:
    """Donsker-Varadhan lower bound on ``I(s; (s', a))`` with a moving-average partition estimate."""

    def __init__(self, scorer: Scorer, ema_decay=0.99, optimizer="sgd", momentum=0.9):
        self.scorer = scorer
        self.ema_decay = ema_decay
        self.optimizer = make_optimizer(optimizer, momentum)
        self.log_ema = None
        self.steps = 0

    @property
    def ema_partition(self):
        return None if self.log_ema is None else float(np.exp(self.log_ema))

    def score(self, X):
        return self.scorer.forward(X)

    def pointwise(self, X):
        """``T - log Z``: per-sample MI estimate whose joint mean is the DV bound.

        DV is invariant to shifting ``T``, so the raw score carries an arbitrary
        offset; subtracting the moving log-partition removes it.
        """
        return self.score(X) - (0.0 if self.log_ema is None else self.log_ema)

    @staticmethod
    def _log_mean_exp(t):
        m = t.max()
        return float(m + np.log(np.mean(np.exp(t - m))))

    def estimate(self, joint, marginal) -> float:
        return float(self.score(joint).mean()) - self._log_mean_exp(self.score(marginal))

    def update(self, joint, marginal, lr) -> float:
        J = self.scorer._check(joint)
        M = self.scorer._check(marginal)
        tj, tm = self.score(J), self.score(M)
        log_batch = self._log_mean_exp(tm)
        bound = float(tj.mean()) - log_batch
        if self.log_ema is None:
            self.log_ema = log_batch
        else:
            self.log_ema = float(np.logaddexp(np.log(self.ema_decay) + self.log_ema,
                                              np.log1p(-self.ema_decay) + log_batch))
        # bias-corrected log-partition gradient: E_m[e^T grad T] / ema(E_m[e^T])
        w = np.exp(tm - np.log(len(tm)) - self.log_ema)
        grad = self.scorer.backward(J, np.full(len(tj), 1.0 / len(tj))) - self.scorer.backward(M, w)
        self.optimizer.step(self.scorer.params, grad, lr)
        self.steps += 1
        return bound


def shuffle_marginal(joint, rng):
    """Break the dependence between ``s`` (column 0) and the rest by permuting ``s``."""
    joint = np.asarray(joint)
    out = joint.copy()
    out[:, 0] = joint[rng.permutation(len(joint)), 0]
    return out


def mine_update(est: MineEstimator, joint_batch, marginal_batch, lr) -> float:
    if len(joint_batch) == 0 or len(marginal_batch) == 0:
        raise ValidationError("MINE update needs non-empty batches")
    return est.update(joint_batch, marginal_batch, lr)


def fit_mine_on_joint(joint, n_updates=5000, batch=512, lr=0.01, seed=0, optimizer="adam",
                      eval_samples=100_000, **scorer_kw):
    """Train a tabular-input MINE on samples of a 2-D joint ``p(x, y)`` and return ``(est, bound)``.

    ``bound`` is the DV estimate on a fresh sample of ``eval_samples`` pairs,
    so it carries no fitting bias from the training batches.
    """
    p = np.asarray(joint, dtype=np.float64)
    if p.ndim != 2 or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
        raise ValidationError("joint must be a 2-D probability table")
    rng = np.random.default_rng(seed)
    flat = p.ravel() / p.sum()

    def draw(n):
        idx = rng.choice(flat.size, size=n, p=flat)
        return np.stack(np.unravel_index(idx, p.shape), axis=1)

    scorer_kw.setdefault("kind", "tabular")
    if scorer_kw["kind"] == "mlp":
        scorer_kw.setdefault("rng", rng)
    est = MineEstimator(Scorer(p.shape, **scorer_kw), optimizer=optimizer)
    for _ in range(n_updates):
        J = draw(batch)
        mine_update(est, J, shuffle_marginal(J, rng), lr)
    J = draw(eval_samples)
    return est, est.estimate(J, shuffle_marginal(J, rng))


DISC_SIGNATURE = {"GAIL": "sa", "GAIfO": "ss", "GAIfO-s": "s", "IDDM": "ss"}


def disc_inputs(transitions, signature):
    """Select discriminator columns from ``(s, a, s')`` records."""
    X = np.asarray(transitions)
    cols = {"sa": [0, 1], "ss": [0, 2], "s": [0], "s_sa": [0, 2, 1]}[signature]
    return X[:, cols]


def compose_reward(transitions, disc: Discriminator, signature, policy: TabularPolicy | None = None,
                   mine: MineEstimator | None = None, lambda_p=0.0, lambda_s=0.0):
    """Per-step reward ``-log D + lambda_p (-log pi(a|s)) + lambda_s (T(s, (s', a)) - log Z)``."""
    X = np.asarray(transitions)
    r = disc.cost(disc_inputs(X, signature))
    if lambda_p:
        r = r + lambda_p * -policy.log_probs[X[:, 0], X[:, 1]]
    if lambda_s:
        r = r + lambda_s * mine.pointwise(disc_inputs(X, "s_sa"))
    return r
