"""Finite MDPs, softmax policies and their exact occupancy measures.

All occupancy measures returned here are normalized to sum to one, i.e. the
discounted visitation frequencies scaled by ``1 - gamma``. Logarithms are natural.

Terminal states are absorbing: every action self-loops there and no decision is
taken, so occupancies use a uniform action distribution on terminal rows
regardless of the policy's logits (see :func:`action_probs`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .exceptions import SupportMismatchError, ValidationError
from .validation import check_array, check_distribution

MAX_DENSE_STATES = 10_000
# exp(-700) ~ 1e-304 keeps every softmax entry strictly positive in float64
_LOGIT_FLOOR = -700.0
_INV_ATOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP ``(S, A, r, T, mu, gamma)``.

    Parameters
    ----------
    transition : array of shape (S, A, S)
        ``transition[s, a, s2]`` is the probability of moving to ``s2``.
    init : array of shape (S,)
        Initial state distribution.
    gamma : float
        Discount factor in (0, 1).
    reward : array of shape (S, A), optional
        Only used for evaluation and expert training, never by imitation learners.
    terminal : bool array of shape (S,), optional
        Absorbing states; they must self-loop with probability one under every action.
    """

    transition: np.ndarray
    init: np.ndarray
    gamma: float
    reward: np.ndarray | None = None
    terminal: np.ndarray | None = None

    def __post_init__(self):
        T = check_array(self.transition, ndim=3, name="transition")
        S, A, S2 = T.shape
        if S != S2 or S == 0 or A == 0:
            raise ValidationError(f"transition: expected shape (S, A, S) with S, A > 0, got {T.shape}")
        if S > MAX_DENSE_STATES:
            raise ValidationError(f"dense solver is capped at {MAX_DENSE_STATES} states, got {S}")
        check_distribution(T, name="transition")
        mu = check_distribution(check_array(self.init, shape=(S,), name="init"), name="init")
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
        term = np.zeros(S, dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if term.shape != (S,):
            raise ValidationError(f"terminal: expected shape ({S},), got {term.shape}")
        for s in np.flatnonzero(term):
            if not np.all(T[s, :, s] == 1.0):
                raise ValidationError(f"terminal state {s} must self-loop with probability 1 under every action")
        if self.reward is not None:
            r = check_array(self.reward, shape=(S, A), name="reward")
            object.__setattr__(self, "reward", _frozen(r))
        term = term.copy()
        term.setflags(write=False)
        object.__setattr__(self, "transition", _frozen(T))
        object.__setattr__(self, "init", _frozen(mu))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def reachable(self) -> np.ndarray:
        """Boolean mask of states reachable from the support of ``init``."""
        adj = self.transition.sum(axis=1) > 0
        seen = self.init > 0
        frontier = seen.copy()
        while frontier.any():
            nxt = adj[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        return seen

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "init": self.init.tolist(),
            "terminal": self.terminal.tolist(),
            "transition": self.transition.tolist(),
            "reward": None if self.reward is None else self.reward.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        missing = {"n_states", "n_actions", "gamma", "init", "terminal", "transition"} - set(d)
        if missing:
            raise ValidationError(f"mdp document is missing fields: {sorted(missing)}")
        mdp = cls(
            transition=d["transition"],
            init=d["init"],
            gamma=d["gamma"],
            reward=d.get("reward"),
            terminal=d["terminal"],
        )
        if (mdp.n_states, mdp.n_actions) != (d["n_states"], d["n_actions"]):
            raise ValidationError(
                f"declared size ({d['n_states']}, {d['n_actions']}) does not match "
                f"transition shape ({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    z = np.maximum(z, _LOGIT_FLOOR)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Stationary softmax policy ``pi(a|s) = softmax(logits[s])``."""

    logits: np.ndarray

    def __post_init__(self):
        z = check_array(self.logits, ndim=2, name="logits")
        object.__setattr__(self, "logits", _frozen(z))

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs):
        p = check_distribution(probs, name="probs")
        if np.any(p <= 0):
            raise ValidationError("softmax policies need strictly positive probabilities")
        return cls(np.log(p))

    @cached_property
    def probs(self) -> np.ndarray:
        p = softmax(self.logits)
        p.setflags(write=False)
        return p

    @cached_property
    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        z = np.maximum(z, _LOGIT_FLOOR)
        out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        out.setflags(write=False)
        return out

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def to_dict(self) -> dict:
        return {"logits": self.logits.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularPolicy":
        return cls(d["logits"])


def _check_pair(mdp: TabularMdp, policy: TabularPolicy):
    if (policy.n_states, policy.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValidationError(
            f"policy shape ({policy.n_states}, {policy.n_actions}) does not match "
            f"mdp ({mdp.n_states}, {mdp.n_actions})"
        )


def action_probs(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Action distribution used for occupancies: the policy, uniform on terminal rows."""
    _check_pair(mdp, policy)
    p = np.array(policy.probs)
    if mdp.terminal.any():
        p[mdp.terminal] = 1.0 / mdp.n_actions
    return p


def action_log_probs(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    _check_pair(mdp, policy)
    lp = np.array(policy.log_probs)
    if mdp.terminal.any():
        lp[mdp.terminal] = -np.log(mdp.n_actions)
    return lp


def state_transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``P[s, s2] = sum_a pi(a|s) T[s, a, s2]``."""
    return np.einsum("sa,sat->st", action_probs(mdp, policy), mdp.transition)


def solve_state_occupancy(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Normalized discounted state occupancy via a dense LU solve of ``(I - gamma P^T) x = mu``."""
    P = state_transition_matrix(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.gamma * P.T
    x = lu_solve(lu_factor(A, check_finite=False), mdp.init, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("occupancy solve produced non-finite values")
    rho = (1.0 - mdp.gamma) * x
    # round-off can leave tiny negatives on unreachable states
    rho = np.clip(rho, 0.0, None)
    return rho / rho.sum()


@dataclass(frozen=True, eq=False)
class OccupancySet:
    """Normalized occupancies over s, (s,a), (s,s') and (s,a,s')."""

    rho_s: np.ndarray
    rho_sa: np.ndarray
    rho_ss: np.ndarray
    rho_sas: np.ndarray
    gamma_used: float = float("nan")

    def __post_init__(self):
        for name in ("rho_s", "rho_sa", "rho_ss", "rho_sas"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def from_joint(cls, rho_sas, gamma_used=float("nan")) -> "OccupancySet":
        """Build every marginal from a joint table over (s, a, s')."""
        j = check_array(rho_sas, ndim=3, name="rho_sas")
        if np.any(j < 0):
            raise ValidationError("rho_sas: negative entries")
        j = j / j.sum()
        rho_sa = j.sum(axis=2)
        return cls(rho_s=rho_sa.sum(axis=1), rho_sa=rho_sa, rho_ss=j.sum(axis=1), rho_sas=j,
                   gamma_used=gamma_used)

    def check(self, atol=1e-10):
        """Raise :class:`ValidationError` if any marginalization identity is violated."""
        checks = {
            "sum_a rho_sa = rho_s": np.abs(self.rho_sa.sum(1) - self.rho_s).max(),
            "sum_a rho_sas = rho_ss": np.abs(self.rho_sas.sum(1) - self.rho_ss).max(),
            "sum_s' rho_sas = rho_sa": np.abs(self.rho_sas.sum(2) - self.rho_sa).max(),
        }
        for name in ("rho_s", "rho_sa", "rho_ss", "rho_sas"):
            arr = getattr(self, name)
            checks[f"sum {name} = 1"] = abs(arr.sum() - 1.0)
            if arr.min() < 0:
                raise ValidationError(f"{name} has negative entries")
        for name, err in checks.items():
            if err > atol:
                raise ValidationError(f"occupancy identity '{name}' violated by {err:.3e}")
        return self


def derive_occupancies(mdp: TabularMdp, policy: TabularPolicy) -> OccupancySet:
    rho_s = solve_state_occupancy(mdp, policy)
    rho_sa = rho_s[:, None] * action_probs(mdp, policy)
    rho_sas = rho_sa[:, :, None] * mdp.transition
    return OccupancySet(rho_s=rho_s, rho_sa=rho_sa, rho_ss=rho_sas.sum(axis=1), rho_sas=rho_sas,
                        gamma_used=mdp.gamma)


@dataclass(frozen=True, eq=False)
class InverseDynamicsTable:
    """``cond[s, s2, a] = rho(a | s, s2)``; NaN wherever ``support[s, s2]`` is False."""

    cond: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cond", _frozen(self.cond))
        sup = np.array(self.support, dtype=bool)
        sup.setflags(write=False)
        object.__setattr__(self, "support", sup)


def inverse_dynamics(mdp: TabularMdp, policy: TabularPolicy, occ: OccupancySet) -> InverseDynamicsTable:
    """Posterior over actions given a transition, defined where ``occ.rho_ss > 0``."""
    pi = action_probs(mdp, policy)
    if occ.rho_ss.shape != (mdp.n_states, mdp.n_states):
        raise ValidationError("occupancy set does not match the mdp")
    num = np.transpose(mdp.transition * pi[:, :, None], (0, 2, 1))  # (s, s2, a)
    den = num.sum(axis=2)
    support = (occ.rho_ss > 0) & (den > 0)
    cond = np.full_like(num, np.nan)
    cond[support] = num[support] / den[support][:, None]
    return InverseDynamicsTable(cond=cond, support=support)


def divergence(p, q, kind="KL") -> float:
    """KL or Jensen-Shannon divergence in nats between two same-shaped distributions.

    Uses ``0 log(0/q) = 0``. For KL, ``p > 0`` where ``q == 0`` raises
    :class:`SupportMismatchError` naming the first offending index.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {q.shape}")
    kind = kind.upper()
    if kind == "KL":
        return _kl(p, q)
    if kind == "JS":
        m = 0.5 * (p + q)
        return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    raise ValidationError(f"unknown divergence kind {kind!r}; expected 'KL' or 'JS'")


def _kl(p, q):
    mask = p > 0
    bad = mask & ~(q > 0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SupportMismatchError(f"KL support mismatch: p > 0 but q == 0 at index {idx}", index=idx)
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def entropies(occ: OccupancySet, policy: TabularPolicy, mdp: TabularMdp | None = None) -> dict:
    """Return ``H_sa``, ``H_a_given_s`` and ``H_s`` in nats.

    ``mdp`` is needed only when it has terminal states, whose action
    distribution is uniform for occupancy purposes.
    """
    if occ.rho_sa.shape != policy.logits.shape:
        raise ValidationError("occupancy and policy shapes differ")
    logp = policy.log_probs if mdp is None else action_log_probs(mdp, policy)
    return {
        "H_sa": _entropy(occ.rho_sa),
        "H_a_given_s": float(-np.sum(occ.rho_sa * logp)),
        "H_s": _entropy(occ.rho_s),
    }


def exact_mutual_information(occ: OccupancySet) -> float:
    """``I(s; (s', a))`` of the joint occupancy ``rho_sas``."""
    j = occ.rho_sas
    p_s = j.sum(axis=(1, 2))
    p_as2 = j.sum(axis=0)  # (a, s2)
    mask = j > 0
    outer = p_s[:, None, None] * p_as2[None, :, :]
    mi = float(np.sum(j[mask] * (np.log(j[mask]) - np.log(outer[mask]))))
    return max(mi, 0.0)


def inverse_dynamics_disagreement(occ_pi: OccupancySet, id_pi: InverseDynamicsTable,
                                  id_E: InverseDynamicsTable) -> float:
    """``sum rho_pi(s,a,s') log(rho_pi(a|s,s') / rho_E(a|s,s'))``."""
    w = np.transpose(occ_pi.rho_sas, (0, 2, 1))  # (s, s2, a)
    mask = w > 0
    sup_missing = mask.any(axis=2) & ~id_E.support
    if sup_missing.any():
        idx = tuple(int(i) for i in np.argwhere(sup_missing)[0])
        raise SupportMismatchError(f"expert inverse dynamics undefined on agent transition {idx}", index=idx)
    c_pi = id_pi.cond[mask]
    c_E = id_E.cond[mask]
    if np.any(c_E <= 0):
        flat = np.argwhere(mask)[np.flatnonzero(c_E <= 0)[0]]
        raise SupportMismatchError(
            f"expert inverse dynamics is zero at (s, s', a) = {tuple(int(i) for i in flat)}",
            index=tuple(int(i) for i in flat),
        )
    return float(np.sum(w[mask] * (np.log(c_pi) - np.log(c_E))))
