import numpy as np
import pytest
from pydantic import ValidationError

from grid_fdi.env import (
    AttackAction,
    EpisodeConfig,
    FdiEnv,
    RewardMode,
    initial_condition,
    make_env,
    offline_rewards,
    per_bus_delta,
)
from grid_fdi.errors import UsageError
from grid_fdi.grid import GridParams, GridState, Trajectory, simulate, solve_equilibrium


def play(env: FdiEnv, actions) -> list:
    env.reset()
    results = []
    for action in actions:
        results.append(env.step(action))
        if env.done:
            break
    return results


class TestEpisodeConfig:
    """Test EpisodeConfig defaults and validation."""

    def test_defaults(self):
        """Test the documented experiment protocol defaults."""
        episode = EpisodeConfig()
        assert episode.steps == 500
        assert episode.dt == 0.01
        assert episode.ic_noise_half_width == 0.03
        assert episode.kappa == (-1.0, 0.0, 1.0)
        assert episode.reward_mode is RewardMode.ABS_DEVIATION_DIFF

    def test_duplicate_coefficients_rejected(self):
        """Test kappa must hold distinct values."""
        with pytest.raises(ValidationError, match="distinct"):
            EpisodeConfig(kappa=(1.0, 1.0))

    def test_unknown_field_rejected(self):
        """Test extra fields are forbidden."""
        with pytest.raises(ValidationError):
            EpisodeConfig(horizon=10)


class TestInitialCondition:
    """Test the seeded initial condition."""

    def test_same_seed_same_state(self, default_params):
        """Test two draws with one seed are identical."""
        first = initial_condition(default_params, EpisodeConfig(seed=9))
        second = initial_condition(default_params, EpisodeConfig(seed=9))
        assert np.array_equal(first.theta, second.theta)
        assert np.array_equal(first.omega, second.omega)

    def test_draw_layout(self, default_params):
        """Test theta takes the first n draws and omega the next n."""
        draws = np.random.default_rng(21).uniform(-0.03, 0.03, size=20)
        state = initial_condition(default_params, EpisodeConfig(seed=21))
        assert np.array_equal(state.theta, draws[:10])
        assert np.array_equal(state.omega, draws[10:])

    def test_zero_noise_is_equilibrium(self, default_params):
        """Test a zero half-width returns the equilibrium itself."""
        state = initial_condition(default_params, EpisodeConfig(ic_noise_half_width=0.0))
        equilibrium = solve_equilibrium(default_params)
        assert np.array_equal(state.theta, equilibrium.theta)
        assert np.array_equal(state.omega, np.zeros(10))


class TestFdiEnv:
    """Test the attack environment."""

    def test_baseline_matches_simulate(self, default_params):
        """Test the stored baseline is the unattacked simulation."""
        episode = EpisodeConfig(seed=1)
        env = make_env(default_params, episode)
        expected = simulate(default_params, initial_condition(default_params, episode), 500, 0.01)
        assert np.array_equal(env.baseline.omega, expected.omega)
        assert np.array_equal(env.baseline.theta, expected.theta)

    def test_reset_is_repeatable(self, default_params, short_episode):
        """Test repeated resets give the same observation."""
        env = make_env(default_params, short_episode)
        first = env.reset()
        env.step(AttackAction(2, -1.0))
        assert np.array_equal(env.reset(), first)

    def test_observation_layout(self, default_params, short_episode):
        """Test observations list omega before theta."""
        env = make_env(default_params, short_episode)
        observation = env.reset()
        assert observation.shape == (20,)
        assert np.array_equal(observation[:10], env.initial.omega)
        assert np.array_equal(observation[10:], env.initial.theta)

    def test_designed_value_scores_zero(self, default_params, short_episode):
        """Test replacing a droop value with itself reproduces the baseline."""
        env = make_env(default_params, short_episode)
        results = play(env, [AttackAction(3, 1.0)] * short_episode.steps)
        assert all(result.reward == 0.0 for result in results)
        assert env.cumulative_reward() == 0.0

    def test_no_disturbance_no_reward(self, default_params):
        """Test attacks cannot move a system at rest."""
        episode = EpisodeConfig(steps=100, ic_noise_half_width=0.0)
        env = make_env(default_params, episode)
        results = play(env, [AttackAction(t % 10, -1.0) for t in range(100)])
        assert all(result.reward == 0.0 for result in results)
        assert np.array_equal(env.state.omega, np.zeros(10))

    def test_done_flag_and_step_after_done(self, default_params, short_episode):
        """Test the episode ends after the configured steps and then refuses to step."""
        env = make_env(default_params, short_episode)
        results = play(env, [AttackAction(0, 0.0)] * short_episode.steps)
        assert [result.done for result in results].count(True) == 1
        assert results[-1].done
        with pytest.raises(UsageError):
            env.step(AttackAction(0, 0.0))

    def test_cumulative_reward_mid_episode(self, default_params, short_episode):
        """Test the cumulative reward is only available at the end."""
        env = make_env(default_params, short_episode)
        env.step(AttackAction(0, -1.0))
        with pytest.raises(UsageError):
            env.cumulative_reward()

    def test_invalid_actions(self, default_params, short_episode):
        """Test out-of-range targets and unknown coefficients are usage errors."""
        env = make_env(default_params, short_episode)
        with pytest.raises(UsageError):
            env.step(AttackAction(10, -1.0))
        with pytest.raises(UsageError):
            env.step(AttackAction(0, 0.5))

    def test_reward_compares_post_step_states(self, default_params, short_episode):
        """Test the first reward uses the states after the first transition."""
        env = make_env(default_params, short_episode)
        env.reset()
        action = AttackAction(6, -1.0)
        result = env.step(action)
        expected = np.abs(env.state.omega) - np.abs(env.baseline.states[1].omega)
        assert np.array_equal(result.per_bus_delta, expected)
        assert result.reward == float(np.sum(expected))

    def test_signed_reward_mode(self, default_params):
        """Test the signed variant uses raw frequency differences."""
        env = make_env(default_params, EpisodeConfig(steps=20, seed=3, reward_mode="signed_diff"))
        env.reset()
        result = env.step(AttackAction(6, -1.0))
        assert np.array_equal(result.per_bus_delta, env.state.omega - env.baseline.states[1].omega)

    def test_identical_actions_identical_results(self, default_params, short_episode):
        """Test determinism of step results for one action sequence."""
        actions = [AttackAction(t % 10, (-1.0, 0.0, 1.0)[t % 3]) for t in range(short_episode.steps)]
        first = [r.reward for r in play(make_env(default_params, short_episode), actions)]
        second = [r.reward for r in play(make_env(default_params, short_episode), actions)]
        assert first == second

    def test_clone_shares_frozen_inputs(self, default_params, short_episode):
        """Test a clone starts fresh with the same initial condition and baseline."""
        env = make_env(default_params, short_episode)
        env.step(AttackAction(1, -1.0))
        clone = env.clone()
        assert clone.t == 0
        assert clone.initial is env.initial
        assert clone.baseline is env.baseline

    def test_offline_rewards_match_online(self, default_params, short_episode):
        """Test replaying the visited trajectory gives the per-step rewards."""
        env = make_env(default_params, short_episode)
        play(env, [AttackAction(5, -1.0)] * short_episode.steps)
        replay = offline_rewards(env.trajectory(), env.baseline, RewardMode.ABS_DEVIATION_DIFF)
        assert replay.tolist() == list(env.rewards)

    def test_overflow_ends_episode(self):
        """Test a blow-up ends the episode with the last finite state's reward."""
        params = GridParams(
            inertia=[0.01, 0.01],
            damping=[0.0, 0.0],
            susceptance=[[0.0, 0.1], [0.1, 0.0]],
            injection=[0.0, 0.0],
            droop=[0.5, 0.5],
        )
        episode = EpisodeConfig(steps=500, ic_noise_half_width=0.5, kappa=(-1000.0, 0.5))
        env = make_env(params, episode)
        results = play(env, [AttackAction(0, -1000.0)] * 500)
        assert results[-1].done
        assert results[-1].overflow
        assert len(results) < 500
        assert np.isfinite(env.cumulative_reward())

    def test_offline_rewards_after_overflow(self):
        """Test the offline path reproduces an overflowed episode's rewards, terminal one included."""
        params = GridParams(
            inertia=[0.01, 0.01],
            damping=[0.0, 0.0],
            susceptance=[[0.0, 0.1], [0.1, 0.0]],
            injection=[0.0, 0.0],
            droop=[0.5, 0.5],
        )
        env = make_env(params, EpisodeConfig(steps=500, ic_noise_half_width=0.5, kappa=(-1000.0, 0.5)))
        play(env, [AttackAction(0, -1000.0)] * 500)
        trajectory = env.trajectory()
        assert len(env.rewards) == trajectory.steps + 1
        replay = offline_rewards(trajectory, env.baseline, RewardMode.ABS_DEVIATION_DIFF, overflow=True)
        assert replay.tolist() == list(env.rewards)
        assert offline_rewards(trajectory, env.baseline, RewardMode.ABS_DEVIATION_DIFF).tolist() == list(env.rewards[:-1])

    def test_stealth_single_bus(self, default_params, short_episode):
        """Test every allowed action rewrites at most one droop coefficient, the targeted one."""
        env = make_env(default_params, short_episode)
        for target in range(env.n):
            for coefficient in env.kappa:
                k_effective = env.effective_droop(AttackAction(target, coefficient))
                changed = np.flatnonzero(k_effective != default_params.droop)
                assert len(changed) <= 1
                assert set(changed.tolist()) <= {target}
                assert k_effective[target] == coefficient


class TestPerBusDelta:
    """Test the reward kernel."""

    def test_modes(self):
        """Test absolute and signed differences."""
        omega = np.array([0.2, -0.3])
        base = np.array([-0.1, 0.1])
        assert per_bus_delta(omega, base, RewardMode.ABS_DEVIATION_DIFF) == pytest.approx([0.1, 0.2])
        assert per_bus_delta(omega, base, RewardMode.SIGNED_DIFF) == pytest.approx([0.3, -0.4])

    def test_modes_agree_on_nonnegative_frequencies(self, rng):
        """Test both reward modes coincide when attacked and baseline deviations are nonnegative."""
        for _ in range(200):
            omega = rng.uniform(0.0, 1.0, size=10)
            base = rng.uniform(0.0, 1.0, size=10)
            assert np.array_equal(
                per_bus_delta(omega, base, RewardMode.ABS_DEVIATION_DIFF),
                per_bus_delta(omega, base, RewardMode.SIGNED_DIFF),
            )

    def test_modes_agree_on_nonnegative_trajectories(self, rng):
        """Test offline rewards of nonnegative trajectories match across modes."""
        attacked = Trajectory(0.01, tuple(GridState(np.zeros(4), rng.uniform(0.0, 2.0, 4)) for _ in range(21)))
        baseline = Trajectory(0.01, tuple(GridState(np.zeros(4), rng.uniform(0.0, 2.0, 4)) for _ in range(21)))
        assert np.array_equal(
            offline_rewards(attacked, baseline, RewardMode.ABS_DEVIATION_DIFF),
            offline_rewards(attacked, baseline, RewardMode.SIGNED_DIFF),
        )

    def test_offline_rewards_rejects_long_trajectory(self, default_params):
        """Test the baseline must cover the replayed trajectory."""
        state = GridState(np.zeros(10), np.zeros(10))
        short = simulate(default_params, state, 2, 0.01)
        long = simulate(default_params, state, 5, 0.01)
        with pytest.raises(UsageError):
            offline_rewards(long, short, RewardMode.ABS_DEVIATION_DIFF)
