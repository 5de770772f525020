import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iddm.exceptions import ValidationError
from iddm.gridworld import GridSpec, Gridworld, collect_demos, collect_rollouts, train_expert
from iddm.instances import random_mdp, random_policy
from iddm.learners import (
    Discriminator,
    ImitationLearner,
    MineEstimator,
    RunRecord,
    Scorer,
    TrainConfig,
    compose_reward,
    discriminator_update,
    exact_entropy_gradient,
    fit_mine_on_joint,
    mine_update,
    policy_update,
    sampled_gradient,
    scorer_eval,
    shuffle_marginal,
    train,
)
from iddm.learners.optim import SGD, Adam, make_optimizer
from iddm.learners.policy_gradient import returns_to_go
from iddm.learners.training import _Trace, clone_policy, label_transitions
from iddm.mdp import TabularMdp, TabularPolicy, derive_occupancies, entropies


def fd_gradient(scorer, x, h=1e-5):
    g = np.zeros_like(scorer.params)
    for i in range(scorer.params.size):
        old = scorer.params[i]
        scorer.params[i] = old + h
        up = scorer.forward(x)[0]
        scorer.params[i] = old - h
        down = scorer.forward(x)[0]
        scorer.params[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def exact_causal_entropy(mdp, logits):
    pi = TabularPolicy(logits)
    return entropies(derive_occupancies(mdp, pi), pi, mdp)["H_a_given_s"]


def exact_mi_2d(p):
    px, py = p.sum(1, keepdims=True), p.sum(0, keepdims=True)
    m = p > 0
    return float((p[m] * np.log(p[m] / (px * py)[m])).sum())


# --- scorer -----------------------------------------------------------------


class TestScorer:
    @pytest.mark.parametrize("hidden", [(8,), (64, 64)])
    def test_mlp_gradient_matches_central_differences(self, hidden, rng):
        sc = Scorer((5, 4, 3), kind="mlp", hidden=hidden, rng=rng)
        for _ in range(5):
            x = np.array([rng.integers(n) for n in sc.sizes])
            v, g = scorer_eval(sc, x)
            fd = fd_gradient(sc, x[None])
            assert np.isfinite(v)
            assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)

    def test_tabular_gradient_is_one_hot(self):
        sc = Scorer((3, 4))
        sc.params[:] = np.arange(12.0)
        v, g = scorer_eval(sc, [2, 1])
        assert v == 9.0
        assert g[9] == 1.0 and g.sum() == 1.0

    def test_zero_mlp_outputs_zero(self):
        sc = Scorer((4, 4), kind="mlp", hidden=(8, 8))
        assert np.all(sc.forward(np.array([[0, 1], [3, 2]])) == 0.0)

    def test_batch_backward_sums_rows(self, rng):
        sc = Scorer((4, 3), kind="mlp", hidden=(6,), rng=rng)
        X = np.array([[0, 1], [3, 2], [1, 1]])
        w = np.array([0.5, -2.0, 1.5])
        manual = sum(wi * scorer_eval(sc, x)[1] for wi, x in zip(w, X))
        assert np.allclose(sc.backward(X, w), manual)

    def test_signature_mismatch_rejected(self):
        sc = Scorer.for_signature("sa", 5, 2)
        with pytest.raises(ValidationError):
            sc.forward(np.array([[0, 1, 2]]))
        with pytest.raises(ValidationError):
            sc.forward(np.array([[0, 2]]))

    def test_unknown_kind_and_signature(self):
        with pytest.raises(ValueError):
            Scorer((2,), kind="rbf")
        with pytest.raises(ValueError):
            Scorer.for_signature("aa", 2, 2)


# --- optimizers -------------------------------------------------------------


def test_optimizers_ascend_a_concave_quadratic():
    for name in ("sgd", "adam"):
        opt = make_optimizer(name)
        x = np.array([3.0, -2.0])
        for _ in range(500):
            opt.step(x, -x, 0.05)
        assert np.linalg.norm(x) < 0.05, name
    with pytest.raises(ValueError):
        make_optimizer("rmsprop")


def test_zero_gradient_is_a_fixed_point():
    for opt in (SGD(), Adam()):
        x = np.ones(3)
        opt.step(x, np.zeros(3), 1.0)
        assert np.all(x == 1.0)


# --- discriminator ----------------------------------------------------------


class TestDiscriminator:
    def make(self, sizes=(6, 6), **kw):
        return Discriminator(Scorer(sizes), **kw)

    def test_symmetric_batches_sit_at_two_log_half(self, rng):
        d = self.make()
        X = rng.integers(0, 6, size=(64, 2))
        before = d.scorer.params.copy()
        value = discriminator_update(d, X, X, lr=0.1)
        assert value == pytest.approx(2 * np.log(0.5), abs=1e-12)
        assert np.allclose(d.scorer.params, before)  # balanced gradient at D = 1/2
        assert np.allclose(d.prob(X), 0.5)

    def test_disjoint_supports_separate_monotonically(self):
        d = self.make(l2=0.0)
        A = np.array([[0, 1], [2, 3]] * 8)
        E = np.array([[4, 5], [1, 0]] * 8)
        values = [discriminator_update(d, A, E, lr=0.5) for _ in range(200)]
        assert np.all(np.diff(values) > 0)
        assert np.all(d.prob(A) > 0.99) and np.all(d.prob(E) < 0.01)

    def test_zero_lr_leaves_parameters(self, rng):
        d = self.make()
        d.scorer.params[:] = rng.normal(size=d.scorer.params.size)
        before = d.scorer.params.copy()
        discriminator_update(d, rng.integers(0, 6, (8, 2)), rng.integers(0, 6, (8, 2)), lr=0.0)
        assert np.array_equal(d.scorer.params, before)

    def test_outputs_strictly_inside_unit_interval(self):
        d = self.make()
        d.scorer.params[:] = np.linspace(-1e4, 1e4, d.scorer.params.size)
        p = d.prob(np.array([[0, 0], [5, 5]]))
        assert np.all(p > 0) and np.all(p < 1)
        assert np.all(np.isfinite(d.cost(np.array([[0, 0], [5, 5]]))))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            discriminator_update(self.make(), np.zeros((0, 2), dtype=int), np.zeros((3, 2), dtype=int), 0.1)


# --- MINE -------------------------------------------------------------------


class TestMine:
    def test_correlated_bit_recovers_log_two(self):
        est, bound = fit_mine_on_joint(np.eye(2) / 2, n_updates=5000)
        assert abs(bound - np.log(2)) <= 0.1 * np.log(2)
        assert est.ema_partition > 0 and est.steps == 5000

    def test_independent_joint_is_near_zero(self):
        _, bound = fit_mine_on_joint(np.outer([0.3, 0.7], [0.2, 0.5, 0.3]), n_updates=2000)
        assert bound <= 0.05

    def test_lower_bound_on_random_joints(self):
        rng = np.random.default_rng(5)
        for i in range(3):
            p = rng.dirichlet(np.full(12, 0.5)).reshape(3, 4)
            _, bound = fit_mine_on_joint(p, n_updates=2000, seed=i)
            assert bound <= exact_mi_2d(p) + 0.05

    def test_mlp_scorer_learns_the_bit(self):
        _, bound = fit_mine_on_joint(np.eye(2) / 2, n_updates=1500, kind="mlp", hidden=(8,))
        assert bound > 0.5

    def test_ema_partition_positive_after_first_update(self, rng):
        est = MineEstimator(Scorer((3, 3)))
        assert est.ema_partition is None
        J = rng.integers(0, 3, (16, 2))
        mine_update(est, J, shuffle_marginal(J, rng), 0.1)
        assert est.ema_partition > 0

    def test_pointwise_removes_score_offset(self, rng):
        est = MineEstimator(Scorer((3, 3)))
        J = rng.integers(0, 3, (32, 2))
        mine_update(est, J, shuffle_marginal(J, rng), 0.1)
        before = est.pointwise(J)
        est.scorer.params += 7.0
        est.log_ema += 7.0
        assert np.allclose(est.pointwise(J), before)

    def test_shuffle_keeps_column_marginals(self, rng):
        J = rng.integers(0, 5, (50, 3))
        M = shuffle_marginal(J, rng)
        assert sorted(M[:, 0]) == sorted(J[:, 0])
        assert np.array_equal(M[:, 1:], J[:, 1:])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            mine_update(MineEstimator(Scorer((2, 2))), np.zeros((0, 2), int), np.zeros((0, 2), int), 0.1)

    def test_bad_joint_rejected(self):
        with pytest.raises(ValidationError):
            fit_mine_on_joint(np.array([0.5, 0.5]))


# --- reward -----------------------------------------------------------------


class TestComposeReward:
    S, A = 5, 3

    def parts(self, rng):
        disc = Discriminator(Scorer.for_signature("ss", self.S, self.A))
        disc.scorer.params[:] = rng.normal(size=disc.scorer.params.size)
        mine = MineEstimator(Scorer.for_signature("s_sa", self.S, self.A))
        mine.scorer.params[:] = rng.normal(size=mine.scorer.params.size)
        mine.log_ema = 0.3
        pi = random_policy(rng, self.S, self.A)
        X = np.stack([rng.integers(0, self.S, 20), rng.integers(0, self.A, 20),
                      rng.integers(0, self.S, 20)], axis=1)
        return disc, mine, pi, X

    def test_zero_weights_reduce_to_state_transition_cost(self, rng):
        disc, mine, pi, X = self.parts(rng)
        r = compose_reward(X, disc, "ss", policy=pi, mine=mine)
        assert np.array_equal(r, disc.cost(X[:, [0, 2]]))

    def test_half_discriminator_gives_log_two(self, rng):
        disc, _, _, X = self.parts(rng)
        disc.scorer.params[:] = 0.0
        assert np.allclose(compose_reward(X, disc, "ss"), np.log(2))

    def test_deterministic_step_has_no_entropy_bonus(self, rng):
        disc, _, _, X = self.parts(rng)
        logits = np.full((self.S, self.A), -800.0)
        logits[:, 0] = 0.0
        X[:, 1] = 0
        pi = TabularPolicy(logits)
        base = compose_reward(X, disc, "ss")
        assert np.allclose(compose_reward(X, disc, "ss", policy=pi, lambda_p=0.5), base)

    def test_full_reward_adds_both_terms(self, rng):
        disc, mine, pi, X = self.parts(rng)
        r = compose_reward(X, disc, "ss", policy=pi, mine=mine, lambda_p=0.01, lambda_s=0.1)
        expect = (disc.cost(X[:, [0, 2]]) - 0.01 * pi.log_probs[X[:, 0], X[:, 1]]
                  + 0.1 * (mine.score(X[:, [0, 2, 1]]) - 0.3))
        assert np.allclose(r, expect)

    def test_signature_selects_columns(self, rng):
        X = np.array([[1, 2, 3]])
        for sig, cols in (("sa", [0, 1]), ("s", [0])):
            d = Discriminator(Scorer.for_signature(sig, self.S, self.A))
            d.scorer.params[:] = rng.normal(size=d.scorer.params.size)
            assert compose_reward(X, d, sig)[0] == d.cost(X[:, cols])[0]


# --- policy gradient --------------------------------------------------------


def bandit(n_actions=2):
    T = np.zeros((2, n_actions, 2))
    T[:, :, 1] = 1.0
    r = np.zeros((2, n_actions))
    r[0, 0] = 1.0
    return TabularMdp(T, np.array([1.0, 0.0]), 0.9, terminal=np.array([False, True]), reward=r)


class TestPolicyGradient:
    def test_returns_to_go_with_tail(self):
        r = np.array([[1.0, 2.0, 0.0]])
        m = np.array([[True, True, False]])
        G = returns_to_go(r, m, 0.5, tail=np.array([4.0]))
        assert np.allclose(G[0, :2], [1 + 0.5 * (2 + 0.5 * 4), 2 + 0.5 * 4])

    def test_zero_advantage_gives_zero_update(self, rng):
        mdp = random_mdp(rng, 4, 3)
        pi = random_policy(rng, 4, 3)
        ro = collect_rollouts(mdp, pi, 10, 20, rng)
        new, grad = policy_update(pi, ro, np.zeros(ro.mask.shape), SGD(), 0.1, mdp.gamma)
        assert np.all(grad == 0.0)
        assert np.array_equal(new.logits, pi.logits)

    def test_bandit_preference_increases_monotonically(self):
        mdp = bandit()
        rng = np.random.default_rng(0)
        pi, opt = TabularPolicy.uniform(2, 2), SGD(momentum=0.0)
        p0 = [pi.probs[0, 0]]
        for _ in range(30):
            ro = collect_rollouts(mdp, pi, 64, 5, rng)
            pi, _ = policy_update(pi, ro, mdp.reward[ro.s, ro.a], opt, 0.5, mdp.gamma)
            p0.append(pi.probs[0, 0])
        assert np.all(np.diff(p0) >= 0) and p0[-1] > 0.9

    def test_exact_entropy_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            mdp = random_mdp(rng, 5, 3)
            pi = random_policy(rng, 5, 3, scale=2.0)
            g = exact_entropy_gradient(mdp, pi)
            fd = np.zeros_like(g)
            h = 1e-5
            for idx in np.ndindex(g.shape):
                up, down = pi.logits.copy(), pi.logits.copy()
                up[idx] += h
                down[idx] -= h
                fd[idx] = (exact_causal_entropy(mdp, up) - exact_causal_entropy(mdp, down)) / (2 * h)
            assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_sampled_entropy_gradient_is_consistent(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, 3, 2, gamma=0.8)
        pi = random_policy(rng, 3, 2, scale=2.0)
        g = exact_entropy_gradient(mdp, pi)
        H = 50
        ests = []
        for _ in range(8):
            ro = collect_rollouts(mdp, pi, 500, H, rng)
            ests.append(sampled_gradient(pi, ro, -pi.log_probs[ro.s, ro.a], mdp.gamma,
                                         time_discount=True))
        ests = np.array(ests)
        se = ests.std(axis=0, ddof=1) / np.sqrt(len(ests))
        assert np.all(np.abs(ests.mean(axis=0) - g) <= 4 * se + 1e-3)

    def test_empty_rollouts_rejected(self, rng):
        mdp = random_mdp(rng, 3, 2)
        ro = collect_rollouts(mdp, TabularPolicy.uniform(3, 2), 2, 4, rng)
        ro.mask[:] = False
        with pytest.raises(ValidationError):
            sampled_gradient(TabularPolicy.uniform(3, 2), ro, np.zeros(ro.mask.shape), 0.9)


# --- BCO --------------------------------------------------------------------


class TestBco:
    def test_labels_follow_inverse_counts(self, rng):
        counts = np.zeros((3, 3, 2))
        counts[0, 1, 1] = 5
        counts[0, 1, 0] = 1
        X = np.array([[0, -1, 1]])
        assert label_transitions(counts, X, 1.0, rng)[0] == 1

    def test_unseen_transition_warns_and_labels_randomly(self, caplog):
        counts = np.zeros((2, 2, 4))
        X = np.array([[0, -1, 1]] * 200)
        with caplog.at_level(logging.WARNING):
            labels = label_transitions(counts, X, 0.0, np.random.default_rng(0))
        assert "never seen" in caplog.text
        assert set(labels) == {0, 1, 2, 3}

    def test_clone_puts_mass_on_labels(self):
        pi = clone_policy(TabularPolicy.uniform(3, 2), np.array([0, 0, 1]), np.array([1, 1, 0]))
        assert pi.probs[0, 1] > 0.99 and pi.probs[1, 0] > 0.99
        assert np.allclose(pi.probs[2], 0.5)

    def test_injective_grid_recovers_expert_actions(self):
        world = Gridworld(GridSpec(width=4, height=4, walls=frozenset(), goal=(3, 3), wrap=True))
        expert = train_expert(world.mdp, 0.05)
        demos = collect_demos(world.mdp, expert, 300, include_actions=False, seed=0)
        cfg = TrainConfig(algorithm="BCO", iterations=5, rollout_steps=2000)
        pi, rec = train("BCO", world, demos, cfg, expert=expert)
        visited = np.unique(demos.transitions()[:, 0])
        # torus shortest paths can tie, so accept any action the expert favours
        assert np.all(expert.probs[visited, pi.probs[visited].argmax(1)] > 0.3)
        assert rec.summary["mean"] > 90


# --- training loop ----------------------------------------------------------


@pytest.fixture(scope="module")
def small_world():
    world = Gridworld(GridSpec.reference(k_choices=2))
    expert = train_expert(world.mdp, 0.05)
    return world, expert, {
        True: collect_demos(world.mdp, expert, 200, include_actions=True, seed=0),
        False: collect_demos(world.mdp, expert, 200, include_actions=False, seed=0),
    }


def quick(algorithm, **kw):
    base = dict(algorithm=algorithm, iterations=4, rollout_steps=300, batch=64,
                mi_pretrain_steps=20, mi_update_steps=3, optimizer="adam", lr=0.05)
    return TrainConfig(**{**base, **kw})


class TestTrain:
    def test_iddm_without_bonuses_replays_gaifo(self, small_world):
        world, expert, demos = small_world
        traces = {}
        for algo in ("GAIfO", "IDDM"):
            traces[algo] = _Trace()
            train(algo, world, demos[False], quick(algo, lambda_p=0.0, lambda_s=0.0), expert=expert,
                  trace=traces[algo])
        a, b = traces["GAIfO"].events, traces["IDDM"].events
        assert len(a) == len(b) == 8
        for ea, eb in zip(a, b):
            assert ea[0] == eb[0]
            assert np.array_equal(ea[1], eb[1])

    def test_seeded_runs_are_bitwise_identical(self, small_world):
        world, expert, demos = small_world
        out = [train("IDDM", world, demos[False], quick("IDDM", seed=3), expert=expert) for _ in range(2)]
        assert out[0][1].to_csv() == out[1][1].to_csv()
        assert np.array_equal(out[0][0].logits, out[1][0].logits)

    def test_different_seeds_differ(self, small_world):
        world, expert, demos = small_world
        a = train("GAIfO", world, demos[False], quick("GAIfO", seed=0), expert=expert)[1]
        b = train("GAIfO", world, demos[False], quick("GAIfO", seed=1), expert=expert)[1]
        assert a.to_csv() != b.to_csv()

    @pytest.mark.parametrize("algo", ["GAIL", "GAIfO", "GAIfO-s", "IDDM", "BCO"])
    def test_record_shape_and_online_identity(self, small_world, algo):
        world, expert, demos = small_world
        _, rec = train(algo, world, demos[algo == "GAIL"], quick(algo), expert=expert)
        assert len(rec.rows) == 4
        for row in rec.rows:
            assert abs(row["diag_idd"] - (row["diag_kl_sa"] - row["diag_kl_ss"])) <= 1e-8
            assert row["policy_entropy"] >= 0
        assert set(rec.summary) == {"mean", "std", "n"}

    def test_demo_action_mismatch_rejected(self, small_world):
        world, expert, demos = small_world
        with pytest.raises(ValidationError):
            train("GAIL", world, demos[False], quick("GAIL"))
        with pytest.raises(ValidationError):
            train("IDDM", world, demos[True], quick("IDDM"))

    def test_demos_from_other_world_rejected(self, small_world):
        _, _, demos = small_world
        world = Gridworld(GridSpec(width=3, height=3, walls=frozenset(), goal=(2, 2)))
        with pytest.raises(ValidationError):
            train("GAIfO", world, demos[False], quick("GAIfO"))

    def test_mlp_scorer_runs(self, small_world):
        world, expert, demos = small_world
        _, rec = train("IDDM", world, demos[False], quick("IDDM", scorer="mlp", hidden=(8,)), expert=expert)
        assert np.isfinite(rec.column("disc_loss")).all()
        assert np.isfinite(rec.column("mi_estimate")).all()

    def test_no_expert_leaves_diagnostics_nan(self, small_world):
        world, _, demos = small_world
        _, rec = train("GAIfO", world, demos[False], quick("GAIfO"))
        assert np.isnan(rec.column("diag_idd")).all()


class TestTrainConfig:
    def test_reference_defaults(self):
        c = TrainConfig()
        assert (c.lambda_p, c.lambda_s, c.lr, c.batch) == (0.01, 0.1, 3e-4, 512)
        assert (c.mi_pretrain_steps, c.mi_update_steps) == (10_000, 50)

    @pytest.mark.parametrize("bad", [dict(lambda_p=-0.1), dict(lambda_s=-1), dict(lr=0.0),
                                     dict(algorithm="PPO"), dict(batch=0), dict(divergence="TV"),
                                     dict(scorer="cnn"), dict(optimizer="lbfgs")])
    def test_invalid_values_rejected(self, bad):
        with pytest.raises((ValidationError, ValueError)):
            TrainConfig(**bad)

    def test_round_trip(self):
        c = TrainConfig(algorithm="GAIL", hidden=(8, 4), policy_lr=0.1)
        assert TrainConfig.from_dict(c.to_dict()) == c

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError, match="gamma"):
            TrainConfig.from_dict({"gamma": 0.9})


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 10),
                          st.floats(-5, 5), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
                          st.floats(-1, 1)), min_size=1, max_size=6))
def test_run_csv_round_trip(rows):
    names = ("mean_return", "disc_loss", "mi_estimate", "policy_entropy", "diag_kl_ss", "diag_kl_sa",
             "diag_idd")
    rec = RunRecord([{"iter": i, **dict(zip(names, r))} for i, r in enumerate(rows)])
    back = RunRecord.from_csv(rec.to_csv())
    assert back.rows == rec.rows
    assert rec.to_csv().splitlines()[0] == ("iter,mean_return,disc_loss,mi_estimate,policy_entropy,"
                                            "diag_kl_ss,diag_kl_sa,diag_idd")


def test_csv_header_checked():
    with pytest.raises(ValidationError):
        RunRecord.from_csv("a,b\n1,2\n")


# --- estimator --------------------------------------------------------------


class TestImitationLearner:
    def test_sklearn_protocol(self, small_world):
        from sklearn.base import clone

        world, expert, demos = small_world
        est = ImitationLearner(algorithm="GAIfO", grid=world.spec, iterations=3, rollout_steps=300,
                               batch=64, optimizer="adam", lr=0.05, expert=expert)
        assert clone(est).get_params()["iterations"] == 3
        est.fit(demos[False])
        P = est.predict_proba([0, 1, 2])
        assert P.shape == (3, world.n_actions) and np.allclose(P.sum(1), 1)
        assert np.array_equal(est.predict([0, 1, 2]), P.argmax(1))
        assert np.isfinite(est.score())
        assert est.score() == est.score()
        with pytest.raises(ValueError):
            est.predict([world.n_states])

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ImitationLearner().predict([0])
