import json
import logging
from pathlib import Path

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from grid_fdi import __version__
from grid_fdi.config import RunConfig, parse_config
from grid_fdi.errors import ConfigurationError, GridFdiError
from grid_fdi.ledger import RunLedger
from grid_fdi.runner import EXIT_CONFIGURATION, EXIT_FAILED, run_command
from grid_fdi.settings import LEDGER_FILE, CommandSettings

console = Console()


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def _load(config_path: Path | None) -> RunConfig:
    return parse_config(config_path) if config_path is not None else RunConfig()


def _execute(
    ctx: click.Context,
    command: str,
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    total_steps: int | None = None,
    checkpoint: Path | None = None,
) -> None:
    try:
        outcome = run_command(
            command,
            _load(config_path),
            seed=seed,
            total_steps=total_steps,
            output_dir=out,
            checkpoint=checkpoint,
            console=console,
        )
    except GridFdiError as exc:
        # Raised before a run could be opened in the ledger.
        click.echo(json.dumps(exc.to_record(), default=str), err=True)
        ctx.exit(EXIT_CONFIGURATION if isinstance(exc, ConfigurationError) else EXIT_FAILED)

    for kind, path in outcome.artifacts.items():
        console.print(f"[bold]{kind}[/bold]: {path}")
    if outcome.error is not None:
        click.echo(json.dumps(outcome.error, default=str), err=True)
    ctx.exit(outcome.exit_code)


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(path_type=Path),
    default=None,
    help="TOML run configuration (defaults apply when omitted).",
)
seed_option = click.option("--seed", type=int, default=None, help="Override the seed for this run.")
out_option = click.option(
    "--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Override output_dir."
)


@click.group()
@click.version_option(__version__, prog_name="grid-fdi")
@click.option("--log-level", default=None, help="Logging level (default from GRID_FDI_LOG_LEVEL or INFO).")
def cli(log_level: str | None) -> None:
    """Grid frequency simulator with false-data-injection attacks on droop control."""
    load_dotenv()
    configure_logging(log_level or CommandSettings.log_level())


@cli.command()
@config_option
@seed_option
@out_option
@click.pass_context
def simulate(ctx: click.Context, config_path: Path | None, seed: int | None, out: Path | None) -> None:
    """Simulate the unattacked response and write trajectory.csv."""
    _execute(ctx, "simulate", config_path, seed, out)


@cli.command()
@config_option
@seed_option
@out_option
@click.pass_context
def equilibrium(ctx: click.Context, config_path: Path | None, seed: int | None, out: Path | None) -> None:
    """Solve the power-flow equilibrium and write equilibrium.json."""
    _execute(ctx, "equilibrium", config_path, seed, out)


@cli.command()
@config_option
@seed_option
@out_option
@click.pass_context
def bruteforce(ctx: click.Context, config_path: Path | None, seed: int | None, out: Path | None) -> None:
    """Rank every time-invariant attack and write ranking.csv / ranking.json."""
    _execute(ctx, "bruteforce", config_path, seed, out)


@cli.command()
@config_option
@seed_option
@out_option
@click.option("--total-steps", type=int, default=None, help="Override ppo.total_env_steps.")
@click.pass_context
def train(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    total_steps: int | None,
) -> None:
    """Train a PPO attack policy; writes metrics.csv and checkpoints/."""
    _execute(ctx, "train", config_path, seed, out, total_steps=total_steps)


@cli.command()
@config_option
@seed_option
@out_option
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def evaluate(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    checkpoint: Path,
) -> None:
    """Greedy rollout of a checkpoint; writes schedule.csv, response.csv and schedule_summary.json."""
    _execute(ctx, "evaluate", config_path, seed, out, checkpoint=checkpoint)


@cli.command()
@config_option
@out_option
@click.option("--ledger", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Ledger database.")
@click.option("--command", "command_name", default=None, help="Only list runs of this command.")
def runs(config_path: Path | None, out: Path | None, ledger: Path | None, command_name: str | None) -> None:
    """List recorded runs."""
    if ledger is None:
        output_dir = out if out is not None else _load(config_path).output_dir
        ledger = Path(CommandSettings.env_ledger() or output_dir / LEDGER_FILE)
    if not ledger.exists():
        console.print(f"no ledger at {ledger}")
        return

    table = Table(title=str(ledger))
    for column in ("id", "command", "status", "seed", "config hash", "created", "artifacts"):
        table.add_column(column)
    for record in RunLedger(ledger).list_runs(command_name):
        table.add_row(
            record.id,
            record.command,
            record.status.value,
            "" if record.seed is None else str(record.seed),
            (record.config_hash or "")[:12],
            record.created_at.isoformat(timespec="seconds"),
            str(len(record.artifacts)),
        )
    console.print(table)
