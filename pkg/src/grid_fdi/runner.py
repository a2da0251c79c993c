import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from pydantic import BaseModel
from rich.console import Console

from grid_fdi.commands import CommandContext, DefaultCommandSettings
from grid_fdi.config import RunConfig
from grid_fdi.errors import ConfigurationError, GridFdiError
from grid_fdi.exports import ArtifactMetadata, write_json
from grid_fdi.ledger import RunLedger
from grid_fdi.models import RunStatus
from grid_fdi.settings import CommandSettings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIGURATION = 2


class ErrorRecord(BaseModel):
    meta: ArtifactMetadata | None = None
    command: str
    run_id: str
    error: dict[str, Any]


@dataclass
class RunOutcome:
    run_id: str
    status: RunStatus
    exit_code: int
    artifacts: dict[str, Path] = field(default_factory=dict)
    error: dict[str, Any] | None = None


def _error_record(exc: BaseException) -> dict[str, Any]:
    if isinstance(exc, GridFdiError):
        return exc.to_record()
    record: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "__notes__", None):
        record["notes"] = list(exc.__notes__)
    return record


def seed_target(command: str) -> str:
    return "ppo" if command == "train" else "episode"


class CommandRunner:
    """Runs registered commands and records each invocation in the run ledger."""

    def __init__(self, settings: CommandSettings, console: Console | None = None):
        self.settings = settings
        self.console = console

    def run(self, command: str, config: RunConfig, checkpoint: Path | None = None) -> RunOutcome:
        function = self.settings.get_command(command)
        seed = getattr(config, seed_target(command)).seed
        metadata = config.metadata(seed)
        ledger = RunLedger(self.settings.ledger_path(config.output_dir))
        run_id = ledger.start(command, metadata.config_hash, seed)
        logger.info("run %s: %s (config %s, seed %d)", run_id, command, metadata.config_hash[:12], seed)

        context = CommandContext(config.output_dir, metadata, checkpoint, self.console)
        try:
            artifacts = function(config, context)
        except (GridFdiError, OSError) as exc:
            record = _error_record(exc)
            ledger.fail(run_id, record)
            error_path = write_json(
                config.output_dir / "error.json",
                ErrorRecord(meta=metadata, command=command, run_id=run_id, error=record),
            )
            logger.error("run %s failed: %s", run_id, exc)
            exit_code = EXIT_CONFIGURATION if isinstance(exc, ConfigurationError) else EXIT_FAILED
            return RunOutcome(run_id, RunStatus.FAILED, exit_code, {"error": error_path}, record)
        except BaseException as exc:
            ledger.fail(run_id, _error_record(exc))
            raise

        ledger.complete(run_id, artifacts)
        logger.info("run %s completed: %s", run_id, ", ".join(str(path) for path in artifacts.values()))
        return RunOutcome(run_id, RunStatus.COMPLETED, EXIT_OK, artifacts)


def run_command(
    command: str,
    config: RunConfig,
    seed: int | None = None,
    total_steps: int | None = None,
    output_dir: Path | None = None,
    checkpoint: Path | None = None,
    settings: CommandSettings | None = None,
    console: Console | None = None,
) -> RunOutcome:
    """Apply command-line overrides, then run ``command`` through the ledger."""
    config = config.with_overrides(
        seed=seed,
        total_steps=total_steps,
        output_dir=output_dir,
        seed_target=seed_target(command),
    )
    runner = CommandRunner(settings or DefaultCommandSettings(), console)
    return runner.run(command, config, checkpoint)
