"""Exhaustive search over time-invariant attacks.

A time-invariant attack holds one (bus, coefficient) pair for the whole
episode, so there are only n * |kappa| of them. Their ranking is the reference
against which learned, time-varying policies are judged.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from pydantic import BaseModel
from rich.table import Table

from grid_fdi.env import AttackAction, EpisodeConfig, FdiEnv, make_env
from grid_fdi.errors import ConfigurationError, GridFdiError
from grid_fdi.exports import ArtifactMetadata, format_float, read_csv, write_csv, write_json
from grid_fdi.grid import GridParams

logger = logging.getLogger(__name__)

RANKING_HEADER = ["rank", "target_bus", "coefficient", "cumulative_reward"]


@dataclass(frozen=True)
class ConstantAttackResult:
    action: AttackAction
    cumulative_reward: float
    rank: int


def play_constant_attack(env: FdiEnv, action: AttackAction) -> float:
    env.reset()
    while not env.done:
        env.step(action)
    return env.cumulative_reward()


def enumerate_constant_attacks(
    params: GridParams,
    episode: EpisodeConfig,
    max_workers: int = 1,
) -> list[ConstantAttackResult]:
    """Play every constant attack and rank them by cumulative reward, best first.

    Ties are broken by target bus, then by the coefficient's position in kappa.
    """
    base = make_env(params, episode)
    candidates = [
        (AttackAction(target, coefficient), index)
        for target in range(params.n)
        for index, coefficient in enumerate(base.kappa)
    ]

    def rollout(candidate: tuple[AttackAction, int]) -> float:
        action = candidate[0]
        try:
            reward = play_constant_attack(base.clone(), action)
        except GridFdiError as exc:
            exc.add_note(f"while playing constant attack target={action.target} coefficient={action.coefficient}")
            raise
        logger.debug("constant attack (%d, %g): %.6g", action.target, action.coefficient, reward)
        return reward

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rewards = list(pool.map(rollout, candidates))
    else:
        rewards = [rollout(candidate) for candidate in candidates]

    order = sorted(
        range(len(candidates)),
        key=lambda k: (-rewards[k], candidates[k][0].target, candidates[k][1]),
    )
    results = [
        ConstantAttackResult(candidates[k][0], rewards[k], rank) for rank, k in enumerate(order, start=1)
    ]
    best = results[0]
    logger.info(
        "best constant attack: bus %d, k'=%g, cumulative reward %.6g",
        best.action.target,
        best.action.coefficient,
        best.cumulative_reward,
    )
    return results


def best_attack(results: Sequence[ConstantAttackResult]) -> ConstantAttackResult:
    return min(results, key=lambda result: result.rank)


def export_ranking(
    results: Sequence[ConstantAttackResult],
    path: Path,
    metadata: ArtifactMetadata | None = None,
) -> Path:
    if not results:
        raise ConfigurationError("nothing to export", "results")
    rows = (
        [str(r.rank), str(r.action.target), format_float(r.action.coefficient), format_float(r.cumulative_reward)]
        for r in sorted(results, key=lambda result: result.rank)
    )
    return write_csv(path, RANKING_HEADER, rows, metadata)


def read_ranking(path: Path) -> list[ConstantAttackResult]:
    header, rows = read_csv(path)
    if header != RANKING_HEADER:
        raise ConfigurationError(f"unexpected ranking header {header}", str(path))
    return [
        ConstantAttackResult(AttackAction(int(target), float(coefficient)), float(reward), int(rank))
        for rank, target, coefficient, reward in rows
    ]


class RankingRow(BaseModel):
    rank: int
    target_bus: int
    coefficient: float
    cumulative_reward: float


class RankingDocument(BaseModel):
    meta: ArtifactMetadata | None = None
    results: list[RankingRow]


def export_ranking_json(
    results: Sequence[ConstantAttackResult],
    path: Path,
    metadata: ArtifactMetadata | None = None,
) -> Path:
    if not results:
        raise ConfigurationError("nothing to export", "results")
    document = RankingDocument(
        meta=metadata,
        results=[
            RankingRow(
                rank=r.rank,
                target_bus=r.action.target,
                coefficient=r.action.coefficient,
                cumulative_reward=r.cumulative_reward,
            )
            for r in sorted(results, key=lambda result: result.rank)
        ],
    )
    return write_json(path, document)


def render_ranking(results: Sequence[ConstantAttackResult], limit: int | None = 10) -> Table:
    table = Table(title="Time-invariant attacks")
    table.add_column("rank", justify="right")
    table.add_column("bus", justify="right")
    table.add_column("k'", justify="right")
    table.add_column("cumulative reward", justify="right")
    shown = sorted(results, key=lambda result: result.rank)
    for r in shown[:limit] if limit else shown:
        table.add_row(str(r.rank), str(r.action.target), f"{r.action.coefficient:g}", f"{r.cumulative_reward:.6g}")
    return table
