"""Random and structured MDP/policy generators used by the theory checks."""
from __future__ import annotations

import numpy as np

from .mdp import TabularMdp, TabularPolicy


def random_mdp(rng, n_states, n_actions, gamma=0.9, branching=None, reward=True):
    """Garnet-style MDP: each (s, a) row has ``branching`` Dirichlet-weighted successors."""
    b = n_states if branching is None else min(branching, n_states)
    T = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            nxt = rng.choice(n_states, size=b, replace=False)
            T[s, a, nxt] = rng.dirichlet(np.ones(b))
    T /= T.sum(axis=2, keepdims=True)
    mu = rng.dirichlet(np.ones(n_states))
    r = rng.normal(size=(n_states, n_actions)) if reward else None
    return TabularMdp(transition=T, init=mu, gamma=gamma, reward=r)


def random_policy(rng, n_states, n_actions, scale=1.0):
    return TabularPolicy(rng.normal(scale=scale, size=(n_states, n_actions)))


def random_instance(rng, max_states=10, max_actions=5, gamma=0.9):
    """Random MDP with |S| <= max_states, |A| <= max_actions and two random softmax policies."""
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    branching = int(rng.integers(1, S + 1))
    mdp = random_mdp(rng, S, A, gamma=gamma, branching=branching)
    return mdp, random_policy(rng, S, A), random_policy(rng, S, A)


def permutation_mdp(rng, n_states, n_actions, gamma=0.9):
    """Deterministic MDP whose actions are permutations that disagree on every row.

    ``sigma_a(s) = tau2[(tau1[s] + c_a) mod S]`` with distinct offsets ``c_a``, so
    each transition (s, s') has one generating action and (s', a) determines s.
    """
    if n_actions > n_states:
        raise ValueError("need n_actions <= n_states for row-disjoint permutations")
    tau1 = rng.permutation(n_states)
    tau2 = rng.permutation(n_states)
    offsets = rng.choice(n_states, size=n_actions, replace=False)
    T = np.zeros((n_states, n_actions, n_states))
    for a, c in enumerate(offsets):
        T[np.arange(n_states), a, tau2[(tau1 + c) % n_states]] = 1.0
    mu = rng.dirichlet(np.ones(n_states))
    return TabularMdp(transition=T, init=mu, gamma=gamma)


def chain_mdp(n_states, gamma=0.9):
    """Deterministic ring with two actions: step forward or step back.

    Injective for ``n_states >= 3``.
    """
    T = np.zeros((n_states, 2, n_states))
    idx = np.arange(n_states)
    T[idx, 0, (idx + 1) % n_states] = 1.0
    T[idx, 1, (idx - 1) % n_states] = 1.0
    mu = np.zeros(n_states)
    mu[0] = 1.0
    return TabularMdp(transition=T, init=mu, gamma=gamma)


def random_deterministic_mdp(rng, n_states, n_actions, gamma=0.9):
    """Deterministic MDP with arbitrary (possibly colliding) successor maps."""
    T = np.zeros((n_states, n_actions, n_states))
    nxt = rng.integers(0, n_states, size=(n_states, n_actions))
    T[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    mu = rng.dirichlet(np.ones(n_states))
    return TabularMdp(transition=T, init=mu, gamma=gamma)
