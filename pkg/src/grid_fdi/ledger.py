import json
from datetime import datetime
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict
from sqlalchemy import literal_column

from grid_fdi.db import get_session
from grid_fdi.errors import UsageError
from grid_fdi.exports import file_digest
from grid_fdi.models import Artifact, Run, RunStatus


class ArtifactRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    kind: str
    path: str
    sha256: str


class RunRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: str
    command: str
    config_hash: str | None
    seed: int | None
    status: RunStatus
    error: dict[str, Any] | None
    created_at: datetime
    updated_at: datetime
    artifacts: list[ArtifactRecord]

    @classmethod
    def from_row(cls, run: Run) -> "RunRecord":
        return cls(
            id=run.id,
            command=run.command,
            config_hash=run.config_hash,
            seed=run.seed,
            status=RunStatus(run.status),
            error=json.loads(run.error) if run.error else None,
            created_at=run.created_at,
            updated_at=run.updated_at,
            artifacts=[ArtifactRecord.model_validate(artifact) for artifact in run.artifacts],
        )


class RunLedger:
    """One row per command invocation, with the artifacts it produced."""

    def __init__(self, database_path: str | Path):
        self.database_path = str(database_path)

    def start(self, command: str, config_hash: str | None = None, seed: int | None = None) -> str:
        with get_session(self.database_path) as session:
            run = Run(command=command, config_hash=config_hash, seed=seed, status=RunStatus.RUNNING.value)
            session.add(run)
            session.flush()
            return run.id

    def _get(self, session, run_id: str) -> Run:
        run = session.query(Run).filter(Run.id == run_id).first()
        if not run:
            raise UsageError(f"Run with id {run_id} not found")
        return run

    def complete(self, run_id: str, artifacts: dict[str, Path]) -> None:
        """Record each artifact's path and SHA-256 digest and mark the run completed."""
        digests = {kind: file_digest(path) for kind, path in artifacts.items()}
        with get_session(self.database_path) as session:
            run = self._get(session, run_id)
            for kind, path in artifacts.items():
                session.add(Artifact(run_id=run.id, kind=kind, path=str(path), sha256=digests[kind]))
            run.status = RunStatus.COMPLETED.value

    def fail(self, run_id: str, error_record: dict[str, Any]) -> None:
        with get_session(self.database_path) as session:
            run = self._get(session, run_id)
            run.status = RunStatus.FAILED.value
            run.error = json.dumps(error_record, default=str)

    def get_run(self, run_id: str) -> RunRecord:
        with get_session(self.database_path) as session:
            return RunRecord.from_row(self._get(session, run_id))

    def list_runs(self, command: str | None = None) -> list[RunRecord]:
        with get_session(self.database_path) as session:
            query = session.query(Run)
            if command is not None:
                query = query.filter(Run.command == command)
            rows = query.order_by(Run.created_at, literal_column("runs.rowid")).all()
            return [RunRecord.from_row(run) for run in rows]
