import itertools
import math

import numpy as np
import pytest

from nash_vtr.evaluation import (
    EvaluationInvariantError,
    EventMonitor,
    RegretLedger,
    best_response_value_max,
    best_response_value_min,
    confidence_membership,
    episode_gap,
    event_monitors,
    joint_policy_value,
    martingale_bound,
    nash_value,
    optimism_sandwich,
    policy_certificate,
    policy_value,
    true_variance,
    true_variance_centered,
    turn_based_value,
    variance_offset_check,
    variance_sum_bound,
)
from nash_vtr.game_model import (
    LinearMixtureMG,
    embed_turn_based,
    make_dummy_min_player,
    make_tabular,
    random_instance,
    random_mdp,
    random_turn_based_instance,
)
from nash_vtr.learner import LearnerConfig, NashVTRLearner, RegressionState, cce_epsilon_default


def _one_shot(reward: list) -> LinearMixtureMG:
    # Single state, H = 1, payoff matrix `reward`.
    reward = np.asarray(reward, dtype=float)
    num_max, num_min = reward.shape
    kernel = np.ones((1, 1, num_max, num_min, 1))
    return make_tabular(kernel, reward[None, None])


def _deterministic_policies(horizon: int, num_states: int, num_actions: int):
    for choice in itertools.product(range(num_actions), repeat=horizon * num_states):
        policy = np.zeros((horizon, num_states, num_actions))
        for index, action in enumerate(choice):
            policy[index // num_states, index % num_states, action] = 1.0
        yield policy


def _random_policy(rng: np.random.Generator, horizon: int, num_states: int, num_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(num_actions), size=(horizon, num_states))


def _learner_config(game: LinearMixtureMG, episodes: int, **overrides) -> LearnerConfig:
    params = dict(
        lam=1.0 / game.param_bound**2,
        delta=0.1,
        horizon=game.horizon,
        episodes=episodes,
        cce_epsilon=cce_epsilon_default(game.horizon, episodes),
        param_bound=game.param_bound,
    )
    params.update(overrides)
    return LearnerConfig(**params)


@pytest.fixture
def tiny_game() -> LinearMixtureMG:
    return random_instance(2, 2, (2, 2), 2, np.random.default_rng(17))


@pytest.fixture
def trivial_game() -> LinearMixtureMG:
    # One state, one action each, zero reward.
    return make_tabular(np.ones((3, 1, 1, 1, 1)), np.zeros((3, 1, 1, 1)))


class TestBestResponse:
    def test_uniform_opponent(self) -> None:
        game = _one_shot([[1.0, -1.0], [0.0, 0.0]])
        table = best_response_value_max(game, np.full((1, 1, 2), 0.5))
        assert table.initial(0) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_array_equal(table.values[-1], [0.0])

    def test_min_response_to_point_mass(self) -> None:
        game = _one_shot([[1.0, -1.0], [0.0, 0.0]])
        table = best_response_value_min(game, np.array([[[1.0, 0.0]]]))
        assert table.initial(0) == pytest.approx(-1.0)

    def test_constant_reward(self) -> None:
        base = random_instance(2, 3, (2, 2), 3, np.random.default_rng(2))
        game = LinearMixtureMG(
            features=base.features, theta_star=base.theta_star, reward=np.full(base.reward.shape, 0.5), param_bound=2.0
        )
        policy = _random_policy(np.random.default_rng(0), 3, 3, 2)
        np.testing.assert_allclose(best_response_value_min(game, policy).values[0], 1.5, atol=1e-12)
        np.testing.assert_allclose(best_response_value_max(game, policy).values[0], 1.5, atol=1e-12)

    def test_max_response_matches_enumeration(self, tiny_game: LinearMixtureMG) -> None:
        policy_min = _random_policy(np.random.default_rng(1), 2, 2, 2)
        best = np.full(2, -np.inf)
        for policy_max in _deterministic_policies(2, 2, 2):
            best = np.maximum(best, policy_value(tiny_game, policy_max, policy_min).values[0])
        np.testing.assert_allclose(best_response_value_max(tiny_game, policy_min).values[0], best, atol=1e-12)

    def test_min_response_matches_enumeration(self, tiny_game: LinearMixtureMG) -> None:
        policy_max = _random_policy(np.random.default_rng(2), 2, 2, 2)
        best = np.full(2, np.inf)
        for policy_min in _deterministic_policies(2, 2, 2):
            best = np.minimum(best, policy_value(tiny_game, policy_max, policy_min).values[0])
        np.testing.assert_allclose(best_response_value_min(tiny_game, policy_max).values[0], best, atol=1e-12)

    def test_deterministic_opponent_reduces_to_mdp(self, tiny_game: LinearMixtureMG) -> None:
        policy_min = np.zeros((2, 2, 2))
        policy_min[..., 1] = 1.0
        values = np.zeros((3, 2))
        for h in reversed(range(2)):
            q = tiny_game.reward[h, :, :, 1] + tiny_game.transition_tensor[h, :, :, 1] @ values[h + 1]
            values[h] = q.max(axis=-1)
        np.testing.assert_allclose(best_response_value_max(tiny_game, policy_min).values, values, atol=1e-12)


class TestPolicyValue:
    def test_bellman_consistency(self, tiny_game: LinearMixtureMG) -> None:
        rng = np.random.default_rng(4)
        policy_max = _random_policy(rng, 2, 2, 2)
        policy_min = _random_policy(rng, 2, 2, 2)
        table = policy_value(tiny_game, policy_max, policy_min)
        for h in range(2):
            expected = tiny_game.reward[h] + tiny_game.transition_tensor[h] @ table.values[h + 1]
            np.testing.assert_allclose(table.q[h], expected, atol=1e-10)

    def test_product_joint_matches_independent(self, tiny_game: LinearMixtureMG) -> None:
        rng = np.random.default_rng(5)
        policy_max = _random_policy(rng, 2, 2, 2)
        policy_min = _random_policy(rng, 2, 2, 2)
        joint = policy_max[..., :, None] * policy_min[..., None, :]
        np.testing.assert_allclose(
            joint_policy_value(tiny_game, joint).values,
            policy_value(tiny_game, policy_max, policy_min).values,
            atol=1e-12,
        )

    def test_values_bounded_by_horizon(self) -> None:
        game = random_instance(3, 4, (3, 2), 4, np.random.default_rng(6))
        rng = np.random.default_rng(7)
        table = policy_value(game, _random_policy(rng, 4, 4, 3), _random_policy(rng, 4, 4, 2))
        assert np.abs(table.values).max() <= 4.0 + 1e-12
        assert np.abs(table.q).max() <= 4.0 + 1e-12


class TestNashValue:
    def test_matching_pennies(self) -> None:
        solution = nash_value(_one_shot([[1.0, -1.0], [-1.0, 1.0]]))
        assert solution.values.initial(0) == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(solution.policy_max[0, 0], [0.5, 0.5], atol=1e-7)

    def test_constant_reward(self) -> None:
        base = random_instance(2, 3, (2, 2), 3, np.random.default_rng(8))
        reward = np.full(base.reward.shape, -0.25)
        game = LinearMixtureMG(features=base.features, theta_star=base.theta_star, reward=reward, param_bound=2.0)
        np.testing.assert_allclose(nash_value(game).values.values[0], -0.75, atol=1e-9)

    def test_weak_duality_sandwich(self) -> None:
        game = random_instance(3, 3, (2, 3), 3, np.random.default_rng(9))
        v_star = nash_value(game).values.values[0]
        rng = np.random.default_rng(10)
        for _ in range(20):
            policy_max = _random_policy(rng, 3, 3, 2)
            policy_min = _random_policy(rng, 3, 3, 3)
            assert np.all(best_response_value_max(game, policy_min).values[0] >= v_star - 1e-8)
            assert np.all(v_star >= best_response_value_min(game, policy_max).values[0] - 1e-8)

    def test_turn_based_embedding_matches_minimax(self) -> None:
        tb = random_turn_based_instance(3, 4, 2, 3, np.random.default_rng(11))
        np.testing.assert_allclose(
            nash_value(embed_turn_based(tb)).values.values, turn_based_value(tb).values, atol=1e-8
        )

    @pytest.mark.parametrize("seed", range(20))
    def test_near_flat_rewards(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        reward = 0.5 + rng.uniform(-1e-6, 1e-6, size=(1, 2, 3, 3))
        game = make_tabular(np.full((1, 2, 3, 3, 2), 0.5), reward)
        values = nash_value(game).values.values[0]
        assert np.all(reward[0].min(axis=2).max(axis=1) - 1e-12 <= values)
        assert np.all(values <= reward[0].max(axis=1).min(axis=1) + 1e-12)


class TestEpisodeGap:
    def test_equilibrium_has_zero_gap(self, tiny_game: LinearMixtureMG) -> None:
        solution = nash_value(tiny_game)
        for s in range(2):
            assert episode_gap(tiny_game, solution.policy_max, solution.policy_min, s) == pytest.approx(0.0, abs=1e-8)

    def test_nonnegative(self) -> None:
        game = random_instance(2, 3, (2, 2), 3, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        for _ in range(20):
            gap = episode_gap(game, _random_policy(rng, 3, 3, 2), _random_policy(rng, 3, 3, 2), 0)
            assert gap >= -1e-9

    def test_dummy_min_player_gap_is_mdp_suboptimality(self) -> None:
        mdp = random_mdp(2, 3, 2, 3, np.random.default_rng(14))
        game = make_dummy_min_player(mdp)
        rng = np.random.default_rng(15)
        policy_max = _random_policy(rng, 3, 3, 2)
        kernel, reward = mdp.transition_tensor, mdp.reward
        optimal = np.zeros((4, 3))
        followed = np.zeros((4, 3))
        for h in reversed(range(3)):
            optimal[h] = (reward[h] + kernel[h] @ optimal[h + 1]).max(axis=-1)
            followed[h] = ((reward[h] + kernel[h] @ followed[h + 1]) * policy_max[h]).sum(axis=-1)
        for policy_min in (_random_policy(rng, 3, 3, 2), np.full((3, 3, 2), 0.5)):
            for s in range(3):
                gap = episode_gap(game, policy_max, policy_min, s)
                assert gap == pytest.approx(optimal[0, s] - followed[0, s], abs=1e-10)


class TestTrueVariance:
    def test_deterministic_row(self) -> None:
        game = make_tabular(np.array([[0.0, 1.0], [1.0, 0.0]])[None, :, None, None, :], np.zeros((1, 2, 1, 1)))
        assert true_variance(game, 0, 0, 0, 0, np.array([-1.0, 2.0])) == pytest.approx(0.0, abs=1e-12)

    def test_two_point_variance(self) -> None:
        game = make_tabular(np.full((1, 2, 1, 1, 2), 0.5), np.zeros((1, 2, 1, 1)))
        assert true_variance(game, 0, 1, 0, 0, np.array([0.0, 3.0])) == pytest.approx(9.0 / 4.0)

    def test_constant_values(self, tiny_game: LinearMixtureMG) -> None:
        assert true_variance(tiny_game, 1, 1, 0, 1, np.full(2, 1.7)) == pytest.approx(0.0, abs=1e-12)

    def test_two_computations_agree(self) -> None:
        game = random_instance(3, 4, (2, 2), 2, np.random.default_rng(16))
        values = np.random.default_rng(17).uniform(-2.0, 2.0, size=4)
        for s, a, b in itertools.product(range(4), range(2), range(2)):
            assert true_variance(game, 0, s, a, b, values) == pytest.approx(
                true_variance_centered(game, 0, s, a, b, values), abs=1e-12
            )


class TestBounds:
    def test_martingale_bound(self) -> None:
        assert martingale_bound(2, 8, 0.5) == pytest.approx(64.0 * math.sqrt(math.log(4.0)))

    def test_variance_sum_bound(self) -> None:
        assert variance_sum_bound(2, 8, 0.5) == pytest.approx(3.0 * (16.0 + 8.0 * math.log(2.0)))


class TestConfidenceMembership:
    def test_fresh_state_is_member(self, tiny_game: LinearMixtureMG) -> None:
        reg = RegressionState.initial(tiny_game.dim, tiny_game.horizon, 1.0)
        check = confidence_membership(reg, tiny_game.theta_star, 10.0)
        assert check.member
        worst = np.linalg.norm(tiny_game.theta_star, axis=-1).max()
        assert check.margin == pytest.approx(10.0 - worst)

    def test_zero_radius_excludes_parameters(self, tiny_game: LinearMixtureMG) -> None:
        reg = RegressionState.initial(tiny_game.dim, tiny_game.horizon, 1.0)
        check = confidence_membership(reg, tiny_game.theta_star, 0.0)
        assert not check.member
        assert check.margin < 0


class TestEventMonitors:
    def test_trivial_game_passes(self, trivial_game: LinearMixtureMG) -> None:
        learner = NashVTRLearner(game=trivial_game, config=_learner_config(trivial_game, 5), seed=0)
        report = event_monitors(learner.play(5), trivial_game, 0.5)
        assert report.e1_holds
        assert report.e2_holds
        assert report.membership_holds is None
        assert report.e2_sum == pytest.approx(0.0, abs=1e-12)
        assert len(report.margins) == 5
        assert all(m.e1_margin > 0 and m.e2_margin > 0 for m in report.margins)

    def test_variance_sums_agree(self, tiny_game: LinearMixtureMG) -> None:
        learner = NashVTRLearner(game=tiny_game, config=_learner_config(tiny_game, 10), seed=1)
        report = event_monitors(learner.play(10), tiny_game, 0.1)
        assert report.e2_sum == pytest.approx(report.e2_sum_centered, abs=1e-9)
        assert report.e2_holds

    def test_streaming_matches_batch(self, tiny_game: LinearMixtureMG) -> None:
        learner = NashVTRLearner(game=tiny_game, config=_learner_config(tiny_game, 6), seed=2)
        records = learner.play(6)
        monitor = EventMonitor(mg=tiny_game, delta=0.1)
        for record in records:
            monitor.observe(record)
        report = event_monitors(records, tiny_game, 0.1)
        assert monitor.episodes == 6
        assert monitor.e2_sum == pytest.approx(report.e2_sum)
        assert monitor.margins[-1] == report.margins[-1]

    def test_membership_flags(self, tiny_game: LinearMixtureMG) -> None:
        reg = RegressionState.initial(tiny_game.dim, tiny_game.horizon, 1.0)
        checks = [confidence_membership(reg, tiny_game.theta_star, beta) for beta in (10.0, 0.0)]
        assert event_monitors([], tiny_game, 0.1, memberships=checks[:1]).membership_holds is True
        assert event_monitors([], tiny_game, 0.1, memberships=checks).membership_holds is False


class TestRunChecks:
    def test_optimism_sandwich_holds(self, tiny_game: LinearMixtureMG) -> None:
        config = _learner_config(tiny_game, 20, retain_tables=True)
        learner = NashVTRLearner(game=tiny_game, config=config, seed=3)
        for record in learner.play(5):
            check = optimism_sandwich(tiny_game, record, config.cce_epsilon)
            assert check.holds, check.worst_violation

    def test_first_episode_variance_offsets_cover(self, tiny_game: LinearMixtureMG) -> None:
        learner = NashVTRLearner(game=tiny_game, config=_learner_config(tiny_game, 5), seed=4)
        check = variance_offset_check(tiny_game, learner.play_episode())
        assert check.checked == 2 * tiny_game.horizon
        assert check.within == check.checked
        assert check.fraction == 1.0

    def test_fraction_bounds(self, tiny_game: LinearMixtureMG) -> None:
        learner = NashVTRLearner(game=tiny_game, config=_learner_config(tiny_game, 30), seed=5)
        for record in learner.play(30):
            check = variance_offset_check(tiny_game, record)
            assert check.checked == 2 * tiny_game.horizon
            assert 0 <= check.within <= check.checked


class TestPolicyCertificate:
    def test_single_episode(self) -> None:
        certificate = policy_certificate([0.4])
        assert (certificate.episode, certificate.gap) == (1, 0.4)

    def test_monotone_history_picks_last(self) -> None:
        assert policy_certificate([0.9, 0.5, 0.2, 0.1]).episode == 4

    def test_earliest_on_ties(self) -> None:
        assert policy_certificate(np.array([0.3, 0.1, 0.1])).episode == 2

    def test_not_above_mean(self) -> None:
        gaps = np.random.default_rng(18).uniform(0.0, 1.0, size=50)
        assert policy_certificate(gaps).gap <= gaps.mean()

    def test_reject_empty_history(self) -> None:
        with pytest.raises(ValueError, match="gaps"):
            policy_certificate([])


class TestRegretLedger:
    def test_cumulative_regret(self) -> None:
        ledger = RegretLedger()
        totals = [ledger.record(g) for g in (0.5, 0.25, 0.0)]
        assert totals == [0.5, 0.75, 0.75]
        assert ledger.regret == 0.75
        np.testing.assert_allclose(ledger.cumulative, [0.5, 0.75, 0.75])
        assert ledger.certificate().episode == 3

    def test_tolerates_roundoff(self) -> None:
        ledger = RegretLedger()
        ledger.record(-1e-12)
        assert ledger.gaps == [-1e-12]

    def test_reject_negative_gap(self) -> None:
        ledger = RegretLedger()
        ledger.record(0.1)
        with pytest.raises(EvaluationInvariantError, match="Episode 2"):
            ledger.record(-1e-6)
