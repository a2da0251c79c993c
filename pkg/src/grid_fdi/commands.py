"""The experiment commands run by the CLI.

Each command takes the resolved RunConfig and a CommandContext and returns
the artifacts it wrote, keyed by kind.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from rich.console import Console

from grid_fdi.checkpoint import Checkpoint, checkpoint_name, load_checkpoint, save_checkpoint
from grid_fdi.config import RunConfig
from grid_fdi.env import initial_condition, make_env
from grid_fdi.errors import UsageError
from grid_fdi.exports import ArtifactMetadata, MetricsWriter, export_schedule, export_trajectory, write_json
from grid_fdi.grid import electrical_power, solve_equilibrium
from grid_fdi.grid import simulate as simulate_trajectory
from grid_fdi.ppo import TrainingMetrics, evaluate_policy, summarize_schedule
from grid_fdi.ppo import train as train_policy
from grid_fdi.search import enumerate_constant_attacks, export_ranking, export_ranking_json, render_ranking
from grid_fdi.settings import CommandSettings

logger = logging.getLogger(__name__)

Artifacts = dict[str, Path]


@dataclass(frozen=True)
class CommandContext:
    output_dir: Path
    metadata: ArtifactMetadata | None = None
    checkpoint: Path | None = None
    console: Console | None = None


class EquilibriumRecord(BaseModel):
    meta: ArtifactMetadata | None = None
    coupling: str
    reference_bus: int
    theta: list[float]
    omega: list[float]
    residual: float


def simulate(config: RunConfig, context: CommandContext) -> Artifacts:
    """Unattacked response from the configured (possibly noisy) initial condition."""
    params = config.params()
    episode = config.episode
    initial = initial_condition(params, episode)
    trajectory = simulate_trajectory(params, initial, episode.steps, episode.dt)
    logger.info(
        "simulated %d steps, final max|omega| %.3e",
        trajectory.steps,
        float(np.max(np.abs(trajectory.states[-1].omega))),
    )
    path = export_trajectory(trajectory, context.output_dir / "trajectory.csv", context.metadata)
    return {"trajectory": path}


def equilibrium(config: RunConfig, context: CommandContext) -> Artifacts:
    params = config.params()
    state = solve_equilibrium(params)
    residual = float(np.max(np.abs(params.injection - electrical_power(params, state.theta))))
    record = EquilibriumRecord(
        meta=context.metadata,
        coupling=params.coupling,
        reference_bus=0,
        theta=state.theta.tolist(),
        omega=state.omega.tolist(),
        residual=residual,
    )
    return {"equilibrium": write_json(context.output_dir / "equilibrium.json", record)}


def bruteforce(config: RunConfig, context: CommandContext) -> Artifacts:
    results = enumerate_constant_attacks(config.params(), config.episode, config.search.max_workers)
    if context.console is not None:
        context.console.print(render_ranking(results))
    return {
        "ranking": export_ranking(results, context.output_dir / "ranking.csv", context.metadata),
        "ranking_json": export_ranking_json(results, context.output_dir / "ranking.json", context.metadata),
    }


def train(config: RunConfig, context: CommandContext) -> Artifacts:
    """PPO training; metrics are appended per update so an aborted run keeps its history."""
    artifacts: Artifacts = {}
    writer = MetricsWriter(context.output_dir / "metrics.csv", context.metadata)
    artifacts["metrics"] = writer.path
    checkpoint_dir = context.output_dir / "checkpoints"

    def on_checkpoint(checkpoint: Checkpoint) -> None:
        name = checkpoint_name(checkpoint.global_step)
        artifacts[f"checkpoint:{Path(name).stem}"] = save_checkpoint(checkpoint, checkpoint_dir / name)

    def on_metrics(metrics: TrainingMetrics) -> None:
        writer.append(metrics)

    train_policy(
        config.params(),
        config.episode,
        config.ppo,
        config_hash=context.metadata.config_hash if context.metadata else None,
        on_metrics=on_metrics,
        on_checkpoint=on_checkpoint,
    )
    return artifacts


def evaluate(config: RunConfig, context: CommandContext) -> Artifacts:
    """Greedy rollout of a checkpointed policy: schedule, response and a schedule summary."""
    if context.checkpoint is None:
        raise UsageError("evaluate requires --checkpoint")
    params = config.params()
    checkpoint = load_checkpoint(context.checkpoint, n=params.n, kappa=config.episode.kappa)
    evaluation = evaluate_policy(checkpoint.to_policy(), make_env(params, config.episode))
    logger.info(
        "checkpoint at step %d: greedy cumulative reward %.6g",
        checkpoint.global_step,
        evaluation.cumulative_reward,
    )
    summary = summarize_schedule(evaluation.schedule, params.droop).model_copy(
        update={"meta": context.metadata, "cumulative_reward": evaluation.cumulative_reward}
    )
    return {
        "schedule": export_schedule(evaluation.schedule, context.output_dir / "schedule.csv", context.metadata),
        "response": export_trajectory(evaluation.trajectory, context.output_dir / "response.csv", context.metadata),
        "schedule_summary": write_json(context.output_dir / "schedule_summary.json", summary),
    }


class DefaultCommandSettings(CommandSettings):
    commands = [simulate, equilibrium, bruteforce, train, evaluate]
