import json

import numpy as np
import pytest

from grid_fdi.checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    checkpoint_name,
    load_checkpoint,
    save_checkpoint,
)
from grid_fdi.errors import CheckpointError
from grid_fdi.exports import ArtifactMetadata
from grid_fdi.policy import LossGraph, backward, evaluate_actions, init_optimizer, init_policy, optimizer_step

KAPPA = (-1.0, 0.0, 1.0)


@pytest.fixture
def trained_checkpoint(rng):
    """A checkpoint whose optimizer has taken one step."""
    policy = init_policy(5, 10, KAPPA)
    optimizer = init_optimizer(policy)
    observations = rng.normal(size=(4, 20))
    actions = np.column_stack([rng.integers(0, 10, 4), rng.integers(0, 3, 4)])
    evaluation = evaluate_actions(policy, observations, actions)
    graph = LossGraph(evaluation, d_log_probs=np.full(4, -0.25), d_entropies=np.zeros(4), d_values=np.full(4, 0.1))
    optimizer_step(policy, backward(policy, graph), optimizer)
    meta = ArtifactMetadata(config_hash="f" * 64, seed=5)
    return policy, optimizer, Checkpoint.from_policy(policy, optimizer, 500, meta)


def rewrite(path, change):
    document = json.loads(path.read_text())
    change(document)
    path.write_text(json.dumps(document))


class TestCheckpointRoundTrip:
    """Test saving and loading checkpoints."""

    def test_weights_exact(self, trained_checkpoint, tmp_path):
        """Test every tensor survives the JSON round trip bit for bit."""
        policy, _, checkpoint = trained_checkpoint
        path = save_checkpoint(checkpoint, tmp_path / checkpoint_name(500))
        restored = load_checkpoint(path, n=10, kappa=KAPPA).to_policy()
        assert list(restored.tensors) == list(policy.tensors)
        for name, tensor in policy.tensors.items():
            assert np.array_equal(restored.tensors[name], tensor)

    def test_optimizer_state(self, trained_checkpoint, tmp_path):
        """Test Adam moments and step count are restored."""
        _, optimizer, checkpoint = trained_checkpoint
        path = save_checkpoint(checkpoint, tmp_path / "ckpt.json")
        restored = load_checkpoint(path).to_optimizer()
        assert restored.step == optimizer.step == 1
        assert restored.eps == 1e-5
        for name, moment in optimizer.second_moment.items():
            assert np.array_equal(restored.second_moment[name], moment)

    def test_metadata(self, trained_checkpoint, tmp_path):
        """Test the global step, system size and provenance are stored."""
        _, _, checkpoint = trained_checkpoint
        loaded = load_checkpoint(save_checkpoint(checkpoint, tmp_path / "ckpt.json"))
        assert loaded.format_version == FORMAT_VERSION
        assert loaded.global_step == 500
        assert loaded.n == 10
        assert loaded.kappa == list(KAPPA)
        assert loaded.meta.seed == 5

    def test_name(self):
        """Test checkpoint files sort by global step."""
        assert checkpoint_name(1200) == "step_000001200.json"
        assert checkpoint_name(99) < checkpoint_name(100)

    def test_without_optimizer(self, tmp_path):
        """Test a weights-only checkpoint has no optimizer state."""
        checkpoint = Checkpoint.from_policy(init_policy(0, 3, KAPPA))
        loaded = load_checkpoint(save_checkpoint(checkpoint, tmp_path / "ckpt.json"))
        assert loaded.to_optimizer() is None


class TestCheckpointErrors:
    """Test rejection of unusable checkpoints."""

    @pytest.fixture
    def saved(self, trained_checkpoint, tmp_path):
        return save_checkpoint(trained_checkpoint[2], tmp_path / "ckpt.json")

    def test_missing_file(self, tmp_path):
        """Test a missing file is a checkpoint error."""
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.json")

    def test_bus_count_mismatch(self, saved):
        """Test loading for a different system size fails."""
        with pytest.raises(CheckpointError) as exc_info:
            load_checkpoint(saved, n=5)
        assert exc_info.value.field_path == "n"

    def test_kappa_mismatch(self, saved):
        """Test loading for a different coefficient set fails."""
        with pytest.raises(CheckpointError) as exc_info:
            load_checkpoint(saved, n=10, kappa=(-1.0, 1.0))
        assert exc_info.value.field_path == "kappa"

    def test_format_version(self, saved):
        """Test an unknown format version is rejected."""
        rewrite(saved, lambda document: document.update(format_version=FORMAT_VERSION + 1))
        with pytest.raises(CheckpointError, match="format version"):
            load_checkpoint(saved)

    def test_malformed(self, tmp_path):
        """Test a document missing required fields is rejected."""
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(CheckpointError, match="malformed"):
            load_checkpoint(path)

    def test_tensor_shape(self, saved):
        """Test a tensor with the wrong shape is rejected."""
        rewrite(saved, lambda document: document["tensors"]["actor.0.weight"].update(shape=[1, 1], values=[0.0]))
        with pytest.raises(CheckpointError) as exc_info:
            load_checkpoint(saved)
        assert exc_info.value.field_path == "tensors.actor.0.weight"
