import hashlib
import time

import pytest

from grid_fdi.errors import UsageError
from grid_fdi.ledger import RunLedger
from grid_fdi.models import RunStatus


@pytest.fixture
def ledger(test_db):
    return RunLedger(test_db)


@pytest.fixture
def artifact(tmp_path):
    path = tmp_path / "trajectory.csv"
    path.write_text("t,theta_0,omega_0\n0.0,0.0,0.0\n")
    return path


class TestRunLedger:
    """Test RunLedger against a temporary database."""

    def test_start(self, ledger):
        """Test a started run is recorded as running."""
        run_id = ledger.start("simulate", "c" * 64, 3)
        run = ledger.get_run(run_id)
        assert run.status is RunStatus.RUNNING
        assert run.command == "simulate"
        assert run.config_hash == "c" * 64
        assert run.seed == 3
        assert run.artifacts == []
        assert run.error is None

    def test_complete_records_digests(self, ledger, artifact):
        """Test completing a run stores each artifact with its SHA-256."""
        run_id = ledger.start("simulate")
        ledger.complete(run_id, {"trajectory": artifact})
        run = ledger.get_run(run_id)
        assert run.status is RunStatus.COMPLETED
        assert len(run.artifacts) == 1
        assert run.artifacts[0].kind == "trajectory"
        assert run.artifacts[0].path == str(artifact)
        assert run.artifacts[0].sha256 == hashlib.sha256(artifact.read_bytes()).hexdigest()

    def test_fail_stores_error_record(self, ledger):
        """Test a failed run keeps its structured error."""
        run_id = ledger.start("train")
        ledger.fail(run_id, {"error": "NonFiniteError", "message": "loss is not finite", "where": "loss"})
        run = ledger.get_run(run_id)
        assert run.status is RunStatus.FAILED
        assert run.error["where"] == "loss"

    def test_unknown_run(self, ledger):
        """Test looking up a missing run is a usage error."""
        with pytest.raises(UsageError, match="not found"):
            ledger.get_run("missing")
        with pytest.raises(UsageError):
            ledger.fail("missing", {})

    def test_missing_artifact_leaves_run_running(self, ledger, tmp_path):
        """Test an unreadable artifact aborts completion before any write."""
        run_id = ledger.start("simulate")
        with pytest.raises(FileNotFoundError):
            ledger.complete(run_id, {"trajectory": tmp_path / "absent.csv"})
        assert ledger.get_run(run_id).status is RunStatus.RUNNING

    def test_list_runs_in_order(self, ledger):
        """Test runs are listed oldest first and filter by command."""
        first = ledger.start("simulate")
        time.sleep(0.001)
        second = ledger.start("train")
        time.sleep(0.001)
        third = ledger.start("simulate")
        assert [run.id for run in ledger.list_runs()] == [first, second, third]
        assert [run.id for run in ledger.list_runs("simulate")] == [first, third]
        assert ledger.list_runs("evaluate") == []

    def test_ledger_file_created_on_demand(self, tmp_path):
        """Test the ledger creates its directory and tables on first use."""
        ledger = RunLedger(tmp_path / "nested" / "ledger.db")
        run_id = ledger.start("equilibrium")
        assert (tmp_path / "nested" / "ledger.db").exists()
        assert ledger.get_run(run_id).command == "equilibrium"
