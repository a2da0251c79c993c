"""Simple smoke tests that verify the basic functionality works."""

import numpy as np

from grid_fdi.config import RunConfig
from grid_fdi.env import AttackAction, EpisodeConfig, make_env
from grid_fdi.grid import load_default_params, solve_equilibrium
from grid_fdi.ledger import RunLedger
from grid_fdi.policy import act, init_policy


def test_default_system_loads():
    """Test the shipped system loads with ten buses."""
    params = load_default_params()
    assert params.n == 10
    assert np.allclose(solve_equilibrium(params).theta, 0.0)


def test_one_attacked_step():
    """Test a single attacked step returns a finite reward."""
    env = make_env(load_default_params(), EpisodeConfig(steps=5))
    env.reset()
    result = env.step(AttackAction(0, -1.0))
    assert np.isfinite(result.reward)
    assert not result.done


def test_policy_acts():
    """Test a fresh policy chooses a valid action."""
    env = make_env(load_default_params(), EpisodeConfig(steps=5))
    action, log_prob, value = act(init_policy(0, 10, env.kappa), env.reset(), "sample", np.random.default_rng(0))
    assert 0 <= action.target < 10
    assert action.coefficient in env.kappa
    assert log_prob < 0
    assert np.isfinite(value)


def test_default_config_hash():
    """Test the default configuration has a fingerprint."""
    assert len(RunConfig().config_hash()) == 64


def test_ledger_round_trip(test_db):
    """Test a run can be started and completed."""
    ledger = RunLedger(test_db)
    run_id = ledger.start("simulate")
    ledger.complete(run_id, {})
    assert ledger.get_run(run_id).status == "completed"
