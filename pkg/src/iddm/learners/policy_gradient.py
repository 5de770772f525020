"""Score-function policy gradient for tabular softmax policies."""
from __future__ import annotations

import numpy as np

from ..exceptions import ValidationError
from ..gridworld import Rollouts
from ..mdp import TabularMdp, TabularPolicy, action_log_probs, action_probs, derive_occupancies


def returns_to_go(rewards, mask, gamma, tail=None):
    """Discounted return-to-go per step of a padded ``(episodes, horizon)`` batch.

    ``tail[e]`` is added as the value after the last step of episode ``e``.
    """
    E, H = rewards.shape
    G = np.zeros((E, H))
    acc = np.zeros(E) if tail is None else np.asarray(tail, dtype=np.float64).copy()
    r = np.where(mask, rewards, 0.0)
    for t in range(H - 1, -1, -1):
        acc = np.where(mask[:, t], r[:, t] + gamma * acc, acc)
        G[:, t] = acc
    return G


def state_baseline(states, values, n_states):
    """Per-state empirical mean of ``values``."""
    tot = np.bincount(states, weights=values, minlength=n_states)
    cnt = np.bincount(states, minlength=n_states)
    return tot / np.maximum(cnt, 1)


def score_gradient(policy: TabularPolicy, states, actions, weights):
    """``sum_i w_i grad log pi(a_i | s_i)`` for tabular softmax logits."""
    S, A = policy.logits.shape
    g = np.zeros((S, A))
    np.add.at(g, (states, actions), weights)
    g -= np.bincount(states, weights=weights, minlength=S)[:, None] * policy.probs
    return g


def sampled_gradient(policy: TabularPolicy, rollouts: Rollouts, rewards, gamma, tail=None,
                     time_discount=False, normalize=False):
    """Return-to-go minus per-state baseline, averaged over collected steps.

    With ``time_discount`` each step is weighted by ``(1 - gamma) gamma^t`` and
    the sum is averaged over episodes, which is unbiased for the gradient of
    the normalized discounted objective.
    """
    m = rollouts.mask
    if not m.any():
        raise ValidationError("policy update needs at least one rollout step")
    G = returns_to_go(rewards, m, gamma, tail)
    s, a, g = rollouts.s[m], rollouts.a[m], G[m]
    adv = g - state_baseline(s, g, policy.n_states)[s]
    if normalize:
        sd = adv.std()
        if sd > 0:
            adv = adv / sd
    if time_discount:
        t = np.broadcast_to(np.arange(m.shape[1]), m.shape)[m]
        w = adv * (1.0 - gamma) * gamma ** t / m.shape[0]
    else:
        w = adv / len(adv)
    return score_gradient(policy, s, a, w)


def policy_update(policy: TabularPolicy, rollouts: Rollouts, rewards, optimizer, lr, gamma,
                  tail=None, normalize=True):
    """One ascent step; returns the new policy and the gradient used."""
    grad = sampled_gradient(policy, rollouts, rewards, gamma, tail, normalize=normalize)
    logits = policy.logits.copy().reshape(-1)
    optimizer.step(logits, grad.reshape(-1), lr)
    return TabularPolicy(logits.reshape(policy.logits.shape)), grad


def soft_q(mdp: TabularMdp, policy: TabularPolicy, reward):
    """``Q(s,a) = r(s,a) + gamma E[V(s')]`` with ``V = sum_a pi Q``, solved exactly."""
    P = action_probs(mdp, policy)
    r_pi = (P * reward).sum(axis=1)
    P_ss = np.einsum("sa,sat->st", P, mdp.transition)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_ss, r_pi)
    return reward + mdp.gamma * mdp.transition @ V, V


def exact_entropy_gradient(mdp: TabularMdp, policy: TabularPolicy):
    """Exact gradient of ``H(a|s)`` under the normalized occupancy with respect to the logits.

    ``grad[s, b] = rho(s) pi(b|s) (Q_H(s,b) - V_H(s))`` where ``Q_H`` is the
    value of the per-step reward ``-log pi(a|s)``. Terminal rows have no
    decision and get zero gradient.
    """
    Q, V = soft_q(mdp, policy, -action_log_probs(mdp, policy))
    occ = derive_occupancies(mdp, policy)
    grad = occ.rho_s[:, None] * action_probs(mdp, policy) * (Q - V[:, None])
    grad[mdp.terminal] = 0.0
    return grad
