"""Numerical certificates for the occupancy-measure identities.

Each ``check_*`` function evaluates the terms of one identity exactly on a
tabular instance and returns a :class:`TheoremReport`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import PreconditionError
from .mdp import (
    OccupancySet,
    TabularMdp,
    TabularPolicy,
    action_probs,
    derive_occupancies,
    divergence,
    entropies,
    exact_mutual_information,
    inverse_dynamics,
    inverse_dynamics_disagreement,
)

IDENTITY_TOL = 1e-8
ALGEBRAIC_TOL = 1e-10
THEOREM2_TOL = 1e-6
NONNEG_SLACK = 1e-12


@dataclass
class TheoremReport:
    name: str
    terms: dict
    residual: float
    tolerance: float
    # extra asserted conditions (e.g. IDD <= tol for the injective case)
    side_conditions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(abs(self.residual) <= self.tolerance and all(self.side_conditions.values()))

    def to_dict(self):
        return {
            "name": self.name,
            "terms": {k: float(v) for k, v in self.terms.items()},
            "residual": float(self.residual),
            "tolerance": float(self.tolerance),
            "passed": self.passed,
            "side_conditions": {k: bool(v) for k, v in self.side_conditions.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class _Pair:
    occ_pi: OccupancySet
    occ_E: OccupancySet
    id_pi: object
    id_E: object


def _pair(mdp, pi, piE) -> _Pair:
    occ_pi = derive_occupancies(mdp, pi)
    occ_E = derive_occupancies(mdp, piE)
    return _Pair(occ_pi, occ_E, inverse_dynamics(mdp, pi, occ_pi), inverse_dynamics(mdp, piE, occ_E))


def _nonneg(idd):
    return {"idd_nonnegative": idd >= -NONNEG_SLACK}


def check_theorem1(mdp: TabularMdp, pi: TabularPolicy, piE: TabularPolicy, name="theorem1") -> TheoremReport:
    """IDD = KL(rho_sa) - KL(rho_ss)."""
    p = _pair(mdp, pi, piE)
    idd = inverse_dynamics_disagreement(p.occ_pi, p.id_pi, p.id_E)
    kl_sa = divergence(p.occ_pi.rho_sa, p.occ_E.rho_sa, "KL")
    kl_ss = divergence(p.occ_pi.rho_ss, p.occ_E.rho_ss, "KL")
    return TheoremReport(name, {"IDD": idd, "KL_sa": kl_sa, "KL_ss": kl_ss},
                         idd - (kl_sa - kl_ss), IDENTITY_TOL, _nonneg(idd))


def injectivity_violation(mdp: TabularMdp):
    """First reachable non-terminal ``(s, s')`` with more than one generating action, else ``None``."""
    reach = mdp.reachable() & ~mdp.terminal
    counts = (mdp.transition > 0).sum(axis=1)  # (s, s')
    counts[~reach] = 0
    bad = np.argwhere(counts > 1)
    return None if bad.size == 0 else (int(bad[0, 0]), int(bad[0, 1]))


def check_corollary1(mdp: TabularMdp, pi: TabularPolicy, piE: TabularPolicy, name="corollary1") -> TheoremReport:
    """KL(rho_sa) = KL(rho_ss) and IDD = 0 when every transition has one generating action."""
    bad = injectivity_violation(mdp)
    if bad is not None:
        raise PreconditionError(f"dynamics not injective: transition {bad} has several generating actions",
                                measured=bad)
    r = check_theorem1(mdp, pi, piE, name=name)
    idd = r.terms["IDD"]
    return TheoremReport(name, r.terms, r.terms["KL_sa"] - r.terms["KL_ss"], IDENTITY_TOL,
                         {**_nonneg(idd), "idd_vanishes": idd <= IDENTITY_TOL})


def cross_entropy(p, q) -> float:
    """``-sum p log q`` with the support of ``p`` required inside that of ``q``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        # reuse divergence's support error for the message
        divergence(p, q, "KL")
    return float(-np.sum(p[mask] * np.log(q[mask])))


def check_theorem2(mdp: TabularMdp, pi: TabularPolicy, piE: TabularPolicy, name="theorem2",
                   max_kl_ss=THEOREM2_TOL) -> TheoremReport:
    """Pre-supremum identity ``IDD = -H_sa + CE(rho_sa^pi, rho_sa^E)`` at matched transition occupancy."""
    p = _pair(mdp, pi, piE)
    kl_ss = divergence(p.occ_pi.rho_ss, p.occ_E.rho_ss, "KL")
    if kl_ss > max_kl_ss:
        raise PreconditionError(f"transition occupancies differ: KL_ss = {kl_ss:.3e} > {max_kl_ss:g}",
                                measured=kl_ss)
    idd = inverse_dynamics_disagreement(p.occ_pi, p.id_pi, p.id_E)
    neg_h = -entropies(p.occ_pi, pi, mdp)["H_sa"]
    ce = cross_entropy(p.occ_pi.rho_sa, p.occ_E.rho_sa)
    terms = {"IDD": idd, "neg_H_sa": neg_h, "cross_entropy": ce, "KL_ss": kl_ss}
    side = {**_nonneg(idd), "upper_bound": idd <= neg_h + ce + THEOREM2_TOL}
    return TheoremReport(name, terms, idd - (neg_h + ce), THEOREM2_TOL, side)


def check_entropy_decomposition(mdp: TabularMdp, pi: TabularPolicy, name="entropy_decomposition") -> TheoremReport:
    h = entropies(derive_occupancies(mdp, pi), pi, mdp)
    return TheoremReport(name, dict(h), h["H_sa"] - h["H_a_given_s"] - h["H_s"], ALGEBRAIC_TOL)


def conditional_entropy_s_given_next(occ: OccupancySet) -> float:
    """``H(s | s', a)`` under the joint occupancy."""
    joint = occ.rho_sas
    marg = joint.sum(axis=0)  # (a, s')
    mask = joint > 0
    ratio = joint[mask] / np.broadcast_to(marg, joint.shape)[mask]
    return float(-np.sum(joint[mask] * np.log(ratio)))


def check_mi_identity(mdp: TabularMdp, pi: TabularPolicy, name="mi_identity") -> TheoremReport:
    """``I(s; (s', a)) = H(s)`` when ``(s', a)`` pins down ``s``.

    Requires deterministic dynamics and, on the occupied support, no two
    states reaching the same ``s'`` with the same action.
    """
    if not mdp.is_deterministic:
        raise PreconditionError("transition tensor is not deterministic")
    occ = derive_occupancies(mdp, pi)
    h_cond = conditional_entropy_s_given_next(occ)
    if h_cond > ALGEBRAIC_TOL:
        raise PreconditionError(
            f"(s', a) does not determine s on the occupied support: H(s|s',a) = {h_cond:.3e}",
            measured=h_cond,
        )
    mi = exact_mutual_information(occ)
    h_s = float(-np.sum(occ.rho_s[occ.rho_s > 0] * np.log(occ.rho_s[occ.rho_s > 0])))
    return TheoremReport(name, {"MI": mi, "H_s": h_s, "H_s_given_next": h_cond}, mi - h_s, ALGEBRAIC_TOL)


def js_inverse_dynamics(p: _Pair) -> float:
    """Mixture-weighted JS between inverse-dynamics conditionals."""
    w_pi = np.transpose(p.occ_pi.rho_sas, (0, 2, 1))
    w_E = np.transpose(p.occ_E.rho_sas, (0, 2, 1))
    c_pi, c_E = p.id_pi.cond, p.id_E.cond
    total = 0.0
    for w, c in ((w_pi, c_pi), (w_E, c_E)):
        m = w > 0
        mix = c_pi[m] + c_E[m]
        total += 0.5 * float(np.sum(w[m] * np.log(2.0 * c[m] / mix)))
    return total


def reverse_idd(p: _Pair) -> float:
    """``sum rho_E(s,a,s') log(rho_E(a|s,s') / rho_pi(a|s,s'))``."""
    w = np.transpose(p.occ_E.rho_sas, (0, 2, 1))
    m = w > 0
    return float(np.sum(w[m] * (np.log(p.id_E.cond[m]) - np.log(p.id_pi.cond[m]))))


@dataclass
class Homotopy:
    t: np.ndarray
    eps: np.ndarray
    # reverse minus forward inverse-model KL; monitored only
    delta: np.ndarray
    js_ss: np.ndarray


def js_homotopy(mdp: TabularMdp, pi: TabularPolicy, piE: TabularPolicy, steps: int) -> Homotopy:
    """Track ``eps_t = JS_sa - JS_ss - JS_inv`` along logits ``(1-t) theta_pi + t theta_E``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    ts = np.arange(steps + 1) / steps
    eps, delta, js_ss = (np.empty(steps + 1) for _ in range(3))
    for i, t in enumerate(ts):
        pt = TabularPolicy((1.0 - t) * pi.logits + t * piE.logits)
        p = _pair(mdp, pt, piE)
        jsa = divergence(p.occ_pi.rho_sa, p.occ_E.rho_sa, "JS")
        js_ss[i] = divergence(p.occ_pi.rho_ss, p.occ_E.rho_ss, "JS")
        eps[i] = jsa - js_ss[i] - js_inverse_dynamics(p)
        delta[i] = reverse_idd(p) - inverse_dynamics_disagreement(p.occ_pi, p.id_pi, p.id_E)
    return Homotopy(ts, eps, delta, js_ss)


def check_js_identities(mdp: TabularMdp, pi: TabularPolicy, piE: TabularPolicy, steps: int = 10,
                        name="js_identities") -> TheoremReport:
    """JS versions of the joint/state-action lemma, the injective corollary and the vanishing eps term.

    The residual is the larger of the lemma residual and ``eps`` at ``t = 1``.
    """
    p = _pair(mdp, pi, piE)
    js_sas = divergence(p.occ_pi.rho_sas, p.occ_E.rho_sas, "JS")
    js_sa = divergence(p.occ_pi.rho_sa, p.occ_E.rho_sa, "JS")
    js_ss = divergence(p.occ_pi.rho_ss, p.occ_E.rho_ss, "JS")
    lemma = js_sas - js_sa
    h = js_homotopy(mdp, pi, piE, steps)
    terms = {"JS_sas": js_sas, "JS_sa": js_sa, "JS_ss": js_ss, "JS_inv": js_inverse_dynamics(p),
             "lemma_residual": lemma}
    for i, (e, d) in enumerate(zip(h.eps, h.delta)):
        terms[f"eps_{i}"] = e
        terms[f"delta_{i}"] = d
    side = {}
    if injectivity_violation(mdp) is None:
        terms["corollary_residual"] = js_sa - js_ss
        side["corollary_js"] = abs(js_sa - js_ss) <= IDENTITY_TOL
    residual = max(abs(lemma), abs(h.eps[-1]))
    return TheoremReport(name, terms, residual, ALGEBRAIC_TOL, side)


def _approx_idd_samples(k, n_samples, rng):
    theta = rng.standard_normal((n_samples, k))
    log_p = theta - np.logaddexp.reduce(theta, axis=1, keepdims=True)
    return -np.log(k) - log_p.mean(axis=1)


def approx_idd_curve_with_se(k_values, n_samples, seed):
    """Monte-Carlo ``E[KL(Uniform(k) || softmax(theta))]``, ``theta ~ N(0, I_k)``, with standard errors."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    means, ses = [], []
    for k in k_values:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k == 1:
            means.append(0.0)
            ses.append(0.0)
            continue
        x = _approx_idd_samples(int(k), n_samples, rng)
        means.append(float(x.mean()))
        ses.append(float(x.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf"))
    return means, ses


def approx_idd_curve(k_values, n_samples, seed):
    return approx_idd_curve_with_se(k_values, n_samples, seed)[0]


def check_approx_idd_trend(k_values=tuple(range(1, 12)), n_samples=10_000, seed=0,
                           name="approx_idd_curve") -> TheoremReport:
    """Curve starts at 0 and each adjacent pair is non-decreasing within 2 combined standard errors."""
    means, ses = approx_idd_curve_with_se(k_values, n_samples, seed)
    worst = 0.0
    for (m0, s0), (m1, s1) in zip(zip(means, ses), zip(means[1:], ses[1:])):
        worst = max(worst, m0 - m1 - 2.0 * np.hypot(s0, s1))
    terms = {f"k{k}": m for k, m in zip(k_values, means)}
    side = {"zero_at_k1": means[0] == 0.0} if k_values[0] == 1 else {}
    return TheoremReport(name, terms, worst, 0.0, side)


def variant_policy(mdp: TabularMdp, base: TabularPolicy, k_choices: int, weights) -> TabularPolicy:
    """Keep ``base``'s direction marginal and split each direction across variants by ``weights``.

    Actions are laid out as ``4 * variant + direction``. Zero weights are
    replaced by the smallest positive double so the policy stays strictly positive.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k_choices,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be k_choices non-negative numbers with positive sum")
    w = np.maximum(w / w.sum(), np.finfo(float).tiny)
    probs = action_probs(mdp, base).reshape(mdp.n_states, k_choices, 4)
    q = probs.sum(axis=1)  # direction marginal
    logits = np.log(q)[:, None, :] + np.log(w)[None, :, None]
    return TabularPolicy(logits.reshape(mdp.n_states, 4 * k_choices))


def variant_pair(mdp: TabularMdp, k_choices: int, temperature=0.05):
    """Two policies with identical transition occupancy on a k-variant gridworld.

    The first puts (nearly) all mass on variant 0, the second spreads each
    move uniformly over its variants. At temperature 0.05 the variant-0
    preference is about ``exp(-80)`` away from deterministic while every
    occupancy stays representable in double precision.
    """
    from .gridworld import train_expert

    base = train_expert(mdp, temperature=temperature)
    narrow = base
    spread = variant_policy(mdp, base, k_choices, np.ones(k_choices))
    return narrow, spread


def run_verification_suite(seed=0, n_random=50):
    """Yield every certificate on a fixed, seeded battery of instances."""
    from .gridworld import GridSpec, Gridworld, train_expert
    from .instances import chain_mdp, permutation_mdp, random_instance, random_policy

    rng = np.random.default_rng(seed)
    for i in range(n_random):
        mdp, pi, pe = random_instance(rng)
        yield check_theorem1(mdp, pi, pe, name=f"theorem1/random{i}")
        yield check_entropy_decomposition(mdp, pi, name=f"entropy_decomposition/random{i}")
        yield check_js_identities(mdp, pi, pe, steps=4, name=f"js_identities/random{i}")
    for i in range(10):
        S = int(rng.integers(3, 11))
        A = int(rng.integers(1, min(S, 5) + 1))
        mdp = permutation_mdp(rng, S, A)
        pi, pe = random_policy(rng, S, A), random_policy(rng, S, A)
        yield check_corollary1(mdp, pi, pe, name=f"corollary1/permutation{i}")
        yield check_mi_identity(mdp, pi, name=f"mi_identity/permutation{i}")
    chain = chain_mdp(6)
    yield check_corollary1(chain, random_policy(rng, 6, 2), random_policy(rng, 6, 2), name="corollary1/chain")

    torus = Gridworld(GridSpec(width=5, height=5, start=(0, 0), goal=(3, 3), k_choices=1, wrap=True))
    # a soft expert keeps every occupancy strictly positive
    expert = train_expert(torus.mdp, temperature=1.0)
    uniform = TabularPolicy.uniform(torus.n_states, torus.n_actions)
    yield check_corollary1(torus.mdp, uniform, expert, name="corollary1/gridworld_k1")
    yield check_js_identities(torus.mdp, uniform, expert, steps=10, name="js_identities/gridworld_k1")

    for k in (2, 3):
        world = Gridworld(GridSpec.reference(k_choices=k))
        narrow, spread = variant_pair(world.mdp, k)
        yield check_theorem2(world.mdp, spread, narrow, name=f"theorem2/gridworld_k{k}")
        yield check_theorem2(world.mdp, narrow, spread, name=f"theorem2/gridworld_k{k}_swapped")
        yield check_theorem1(world.mdp, TabularPolicy.uniform(world.n_states, world.n_actions),
                             train_expert(world.mdp, temperature=1.0), name=f"theorem1/gridworld_k{k}")
    yield check_approx_idd_trend(seed=seed)
