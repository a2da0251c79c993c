from contextlib import contextmanager

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import Session

from grid_fdi.db import dispose_engines
from grid_fdi.env import EpisodeConfig
from grid_fdi.grid import GridParams, load_default_params
from grid_fdi.models import Base
from grid_fdi.ppo import PPOConfig


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """Keep the ledger location and log level independent of the developer's shell."""
    monkeypatch.delenv("GRID_FDI_LEDGER", raising=False)
    monkeypatch.delenv("GRID_FDI_LOG_LEVEL", raising=False)
    yield
    dispose_engines()


@pytest.fixture
def default_params() -> GridParams:
    """The shipped 10-bus system."""
    return load_default_params()


@pytest.fixture
def three_bus_params() -> GridParams:
    """A small triangle network for hand-checkable tests."""
    return GridParams(
        inertia=[0.5, 0.6, 0.7],
        damping=[0.4, 0.5, 0.6],
        susceptance=[[0.0, 2.0, 1.5], [2.0, 0.0, 1.0], [1.5, 1.0, 0.0]],
        injection=[0.2, -0.1, -0.1],
        droop=[1.0, 1.5, 2.0],
    )


@pytest.fixture
def short_episode() -> EpisodeConfig:
    """Fifty-step episodes keep environment and training tests fast."""
    return EpisodeConfig(steps=50, seed=3)


@pytest.fixture
def tiny_ppo() -> PPOConfig:
    return PPOConfig(
        rollout_steps=50,
        minibatch_size=16,
        update_epochs=2,
        total_env_steps=100,
        checkpoint_interval=1,
        seed=11,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def test_db(tmp_path):
    """Create a ledger database in a temporary directory for each test function."""
    database_path = tmp_path / "ledger.db"
    engine = create_engine(f"sqlite:///{database_path}")
    Base.metadata.create_all(engine)
    yield database_path
    engine.dispose()


@pytest.fixture
def test_session(test_db):
    """Create a session factory bound to the test ledger."""
    engine = create_engine(f"sqlite:///{test_db}")

    @contextmanager
    def _get_test_session():
        session = Session(engine)
        try:
            yield session
        finally:
            session.commit()
            session.close()

    yield _get_test_session
    engine.dispose()


@pytest.fixture
def small_config_file(tmp_path):
    """A run configuration sized for CLI tests."""
    path = tmp_path / "run.toml"
    path.write_text(
        f"""
output_dir = "{(tmp_path / 'out').as_posix()}"

[system]
preset = "default"

[episode]
steps = 50
seed = 5

[ppo]
rollout_steps = 50
minibatch_size = 25
update_epochs = 1
total_env_steps = 50
""",
        encoding="utf-8",
    )
    return path
