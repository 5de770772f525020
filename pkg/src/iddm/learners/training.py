"""Training loops for GAIL, GAIfO, GAIfO-s, IDDM and BCO on tabular environments."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.utils import check_scalar

from ..exceptions import SupportMismatchError, ValidationError
from ..gridworld import Demonstration, Gridworld, Rollouts, collect_rollouts
from ..mdp import TabularPolicy, derive_occupancies, divergence, entropies, inverse_dynamics, \
    inverse_dynamics_disagreement
from .adversarial import (
    DISC_SIGNATURE,
    Discriminator,
    MineEstimator,
    compose_reward,
    discriminator_update,
    disc_inputs,
    shuffle_marginal,
)
from .optim import make_optimizer
from .policy_gradient import policy_update
from .scorer import Scorer

logger = logging.getLogger(__name__)

ALGORITHMS = ("GAIL", "GAIfO", "GAIfO-s", "BCO", "IDDM")
CSV_HEADER = ("iter", "mean_return", "disc_loss", "mi_estimate", "policy_entropy",
              "diag_kl_ss", "diag_kl_sa", "diag_idd")


@dataclass
class TrainConfig:
    algorithm: str = "IDDM"
    lambda_p: float = 0.01
    lambda_s: float = 0.1
    lr: float = 3e-4
    batch: int = 512
    iterations: int = 100
    rollout_steps: int = 1000
    mi_pretrain_steps: int = 10_000
    mi_update_steps: int = 50
    seed: int = 0
    divergence: str = "KL"
    # per-component learning rates; None falls back to lr
    policy_lr: float | None = None
    disc_lr: float | None = None
    mine_lr: float | None = None
    disc_steps: int = 1
    optimizer: str = "sgd"
    momentum: float = 0.9
    scorer: str = "tabular"
    hidden: tuple = (64, 64)
    l2: float = 1e-4
    ema_decay: float = 0.99
    absorbing: bool = True
    normalize_advantages: bool = True
    bco_smoothing: float = 1.0
    log_every: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        self.hidden = tuple(self.hidden)
        try:
            for name in ("lambda_p", "lambda_s", "bco_smoothing", "l2"):
                check_scalar(getattr(self, name), name, (int, float), min_val=0.0)
            check_scalar(self.lr, "lr", (int, float), min_val=0.0, include_boundaries="neither")
            for name in ("policy_lr", "disc_lr", "mine_lr"):
                if getattr(self, name) is not None:
                    check_scalar(getattr(self, name), name, (int, float), min_val=0.0)
            for name in ("batch", "iterations", "rollout_steps", "disc_steps", "log_every"):
                check_scalar(getattr(self, name), name, int, min_val=1)
            for name in ("mi_pretrain_steps", "mi_update_steps"):
                check_scalar(getattr(self, name), name, int, min_val=0)
            check_scalar(self.ema_decay, "ema_decay", float, min_val=0.0, max_val=1.0,
                         include_boundaries="neither")
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from None
        if self.divergence.upper() not in ("KL", "JS"):
            raise ValidationError(f"divergence must be 'KL' or 'JS', got {self.divergence!r}")
        if self.scorer not in ("tabular", "mlp"):
            raise ValidationError(f"scorer must be 'tabular' or 'mlp', got {self.scorer!r}")
        make_optimizer(self.optimizer)

    @property
    def policy_lr_(self):
        return self.lr if self.policy_lr is None else self.policy_lr

    @property
    def disc_lr_(self):
        return self.lr if self.disc_lr is None else self.disc_lr

    @property
    def mine_lr_(self):
        return self.lr if self.mine_lr is None else self.mine_lr

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([row["iter"]] + [repr(float(row[k])) for k in CSV_HEADER[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValidationError(f"unexpected run CSV header {reader.fieldnames}")
        rows = [{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()} for r in reader]
        return cls(rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


def _streams(seed):
    """Independent generators: rollouts, discriminator batches, MINE, init, evaluation."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def _collect(world: Gridworld, policy, n_steps, rng) -> Rollouts:
    """Lockstep episode chunks until at least ``n_steps`` transitions are collected."""
    H = world.spec.max_steps
    chunk = max(1, math.ceil(n_steps / H))
    parts, total = [], 0
    while total < n_steps:
        ro = collect_rollouts(world.mdp, policy, chunk, H, rng)
        parts.append(ro)
        total += ro.n_steps
    if len(parts) == 1:
        return parts[0]
    return Rollouts(*(np.concatenate([getattr(p, f.name) for p in parts])
                      for f in fields(Rollouts)))


def _absorbing_record(world: Gridworld):
    return np.array([[world.sink, 0, world.sink]], dtype=np.int64)


def _expert_transitions(demos: Demonstration, world: Gridworld, absorbing):
    X = demos.transitions()
    if absorbing:
        ends = sum(1 for ep in demos.episodes if world.mdp.terminal[ep[-1][2]])
        X = np.concatenate([X, np.repeat(_absorbing_record(world), ends, axis=0)])
    return X


def _agent_transitions(ro: Rollouts, world: Gridworld, absorbing):
    X = ro.flat()
    if absorbing:
        X = np.concatenate([X, np.repeat(_absorbing_record(world), int(ro.terminated.sum()), axis=0)])
    return X


def diagnostics(world: Gridworld, policy: TabularPolicy, expert: TabularPolicy | None, kind="KL"):
    """Exact causal policy entropy plus KL_ss, KL_sa and IDD of ``policy`` against ``expert``."""
    mdp = world.mdp
    occ = derive_occupancies(mdp, policy)
    out = {"policy_entropy": entropies(occ, policy, mdp)["H_a_given_s"]}
    nan = {"diag_kl_ss": math.nan, "diag_kl_sa": math.nan, "diag_idd": math.nan}
    if expert is None:
        return {**out, **nan}
    occ_E = derive_occupancies(mdp, expert)
    try:
        kl_ss = divergence(occ.rho_ss, occ_E.rho_ss, kind)
        kl_sa = divergence(occ.rho_sa, occ_E.rho_sa, kind)
        id_pi, id_E = inverse_dynamics(mdp, policy, occ), inverse_dynamics(mdp, expert, occ_E)
        if kind.upper() == "KL":
            idd = inverse_dynamics_disagreement(occ, id_pi, id_E)
        else:
            from ..theory import _Pair, js_inverse_dynamics

            idd = js_inverse_dynamics(_Pair(occ, occ_E, id_pi, id_E))
    except SupportMismatchError as exc:
        logger.warning("diagnostics undefined: %s", exc)
        return {**out, **nan}
    return {**out, "diag_kl_ss": kl_ss, "diag_kl_sa": kl_sa, "diag_idd": idd}


def evaluate(world: Gridworld, policy: TabularPolicy, n_episodes, rng):
    returns = collect_rollouts(world.mdp, policy, n_episodes, world.spec.max_steps, rng).returns
    return {"mean": float(returns.mean()), "std": float(returns.std()), "n": int(n_episodes)}


def _check_demos(algorithm, demos: Demonstration, world: Gridworld):
    if algorithm == "GAIL" and not demos.includes_actions:
        raise ValidationError("GAIL needs demonstrations with actions")
    if algorithm != "GAIL" and demos.includes_actions:
        raise ValidationError(f"{algorithm} learns from observations; pass state-only demonstrations")
    X = demos.transitions()
    if X.size == 0:
        raise ValidationError("empty demonstrations")
    if X[:, [0, 2]].max() >= world.n_states or X[:, 1].max() >= world.n_actions:
        raise ValidationError("demonstrations do not match the environment")


def _sample(X, n, rng):
    return X[rng.integers(0, len(X), size=n)]


class _Trace:
    """Optional hook recording every update for reduction tests."""

    def __init__(self):
        self.events = []

    def __call__(self, name, *arrays):
        self.events.append((name,) + tuple(np.array(a, copy=True) for a in arrays))


def train(algorithm, env: Gridworld, demos: Demonstration, config: TrainConfig, expert=None,
          eval_rollouts=50, trace=None):
    """Run one imitation learner; returns ``(policy, RunRecord)``."""
    if algorithm != config.algorithm:
        config = TrainConfig.from_dict({**config.to_dict(), "algorithm": algorithm})
    _check_demos(algorithm, demos, env)
    if algorithm == "BCO":
        return bco_train(env, demos, config, expert=expert, eval_rollouts=eval_rollouts)
    world, cfg = env, config
    S, A = world.n_states, world.n_actions
    rng_roll, rng_disc, rng_mine, rng_init, rng_eval = _streams(cfg.seed)
    sig = DISC_SIGNATURE[algorithm]
    scorer_kw = dict(kind=cfg.scorer, hidden=cfg.hidden)
    disc = Discriminator(Scorer.for_signature(sig, S, A, rng=rng_init, **scorer_kw), l2=cfg.l2,
                         optimizer=cfg.optimizer, momentum=cfg.momentum)
    opt_pi = make_optimizer(cfg.optimizer, cfg.momentum)
    policy = TabularPolicy(np.zeros((S, A)))
    X_E = _expert_transitions(demos, world, cfg.absorbing)
    mine = None
    if algorithm == "IDDM":
        mine = MineEstimator(Scorer.for_signature("s_sa", S, A, rng=rng_mine, **scorer_kw),
                             ema_decay=cfg.ema_decay, optimizer=cfg.optimizer, momentum=cfg.momentum)
        if cfg.mi_pretrain_steps:
            X0 = _agent_transitions(_collect(world, policy, cfg.rollout_steps, rng_mine), world,
                                    cfg.absorbing)
            _mine_steps(mine, X0, cfg.mi_pretrain_steps, cfg, rng_mine)
    record = RunRecord()
    for it in range(cfg.iterations):
        ro = _collect(world, policy, cfg.rollout_steps, rng_roll)
        X_A = _agent_transitions(ro, world, cfg.absorbing)
        mi = math.nan
        if mine is not None:
            mi = _mine_steps(mine, X_A, cfg.mi_update_steps, cfg, rng_mine)
        for _ in range(cfg.disc_steps):
            bA = disc_inputs(_sample(X_A, cfg.batch, rng_disc), sig)
            bE = disc_inputs(_sample(X_E, cfg.batch, rng_disc), sig)
            loss = discriminator_update(disc, bA, bE, cfg.disc_lr_)
        if trace is not None:
            trace("disc", disc.scorer.params)
        m = ro.mask
        rewards = np.zeros(m.shape)
        weights = dict(policy=policy, mine=mine, lambda_p=cfg.lambda_p,
                       lambda_s=cfg.lambda_s if algorithm == "IDDM" else 0.0)
        rewards[m] = compose_reward(ro.flat(), disc, sig, **weights)
        tail = None
        if cfg.absorbing:
            # the sink self-loop is part of the occupancy, so it earns the full composed reward
            r_abs = float(compose_reward(_absorbing_record(world), disc, sig, **weights)[0])
            tail = np.where(ro.terminated, r_abs / (1.0 - world.mdp.gamma), 0.0)
        row = {"iter": it, "mean_return": float(ro.returns.mean()), "disc_loss": loss, "mi_estimate": mi}
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            row.update(diagnostics(world, policy, expert, cfg.divergence))
        else:
            row.update(dict.fromkeys(CSV_HEADER[4:], math.nan))
        record.rows.append(row)
        policy, _ = policy_update(policy, ro, rewards, opt_pi, cfg.policy_lr_, world.mdp.gamma,
                                  tail=tail, normalize=cfg.normalize_advantages)
        if trace is not None:
            trace("policy", policy.logits)
    record.summary = evaluate(world, policy, eval_rollouts, rng_eval)
    return policy, record


def _mine_steps(mine: MineEstimator, X, n_steps, cfg: TrainConfig, rng):
    """``n_steps`` MINE updates on batches of ``(s, (s', a))`` drawn from ``X``; returns the last bound."""
    bound = math.nan
    for _ in range(n_steps):
        joint = disc_inputs(_sample(X, cfg.batch, rng), "s_sa")
        bound = mine.update(joint, shuffle_marginal(joint, rng), cfg.mine_lr_)
    return bound


def bco_train(env: Gridworld, demos: Demonstration, config: TrainConfig, expert=None, eval_rollouts=50):
    """Behaviour cloning from observation with a count-based inverse dynamics model.

    Each iteration adds the agent's rollouts to ``(s, s') -> a`` counts,
    labels the expert transitions with the argmax action (ties broken at
    random) and refits the policy to the labels in closed form.
    """
    world, cfg = env, config
    if demos.includes_actions:
        raise ValidationError("BCO learns from observations; pass state-only demonstrations")
    S, A = world.n_states, world.n_actions
    rng_roll, rng_label, _, _, rng_eval = _streams(cfg.seed)
    counts = np.zeros((S, S, A))
    X_E = demos.transitions()
    policy = TabularPolicy(np.zeros((S, A)))
    record = RunRecord()
    for it in range(cfg.iterations):
        ro = _collect(world, policy, cfg.rollout_steps, rng_roll)
        X = ro.flat()
        np.add.at(counts, (X[:, 0], X[:, 2], X[:, 1]), 1.0)
        row = {"iter": it, "mean_return": float(ro.returns.mean()), "disc_loss": math.nan,
               "mi_estimate": math.nan}
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            row.update(diagnostics(world, policy, expert, cfg.divergence))
        else:
            row.update(dict.fromkeys(CSV_HEADER[4:], math.nan))
        record.rows.append(row)
        labels = label_transitions(counts, X_E, cfg.bco_smoothing, rng_label)
        policy = clone_policy(policy, X_E[:, 0], labels)
    record.summary = evaluate(world, policy, eval_rollouts, rng_eval)
    return policy, record


def label_transitions(counts, X, smoothing, rng):
    """Argmax action of the smoothed inverse model for each ``(s, s')`` in ``X``."""
    raw = counts[X[:, 0], X[:, 2]]
    c = raw + smoothing
    labels = np.empty(len(X), dtype=np.int64)
    unseen = raw.sum(axis=1) == 0
    if unseen.any():
        logger.warning("%d expert transitions never seen in rollouts; labelling uniformly at random",
                       int(unseen.sum()))
    for i, row in enumerate(c):
        best = np.flatnonzero(row == row.max())
        labels[i] = best[0] if len(best) == 1 else rng.choice(best)
    return labels


def clone_policy(policy: TabularPolicy, states, labels, alpha=0.01):
    """Maximum-likelihood tabular policy on labelled states (add-``alpha`` smoothing); others unchanged."""
    S, A = policy.logits.shape
    c = np.zeros((S, A))
    np.add.at(c, (states, labels), 1.0)
    seen = c.sum(axis=1) > 0
    logits = policy.logits.copy()
    logits[seen] = np.log(c[seen] + alpha)
    return TabularPolicy(logits)


def save_policy(policy: TabularPolicy, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(policy.to_dict(), f)
