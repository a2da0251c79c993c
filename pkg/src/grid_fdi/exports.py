"""Artifact files: CSV and JSON writers with reproducible bytes.

Floats are written with ``repr`` (shortest round-trip decimal form). A CSV
written on behalf of a command starts with a single comment line carrying the
tool version, config hash and seed; readers skip lines starting with ``#``.
"""

import csv
import hashlib
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict

from grid_fdi import __version__
from grid_fdi.errors import ConfigurationError
from grid_fdi.grid import GridState, Trajectory

COMMENT_PREFIX = "#"


class ArtifactMetadata(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool: str = "grid-fdi"
    version: str = __version__
    config_hash: str
    seed: int

    def comment_line(self) -> str:
        return f"{COMMENT_PREFIX} {self.tool} {self.version} config_hash={self.config_hash} seed={self.seed}"


def content_hash(data: Any) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    with Path(path).open("rb") as handle:
        return hashlib.file_digest(handle, "sha256").hexdigest()


def format_float(value: float) -> str:
    return repr(float(value))


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
    metadata: ArtifactMetadata | None = None,
) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            if metadata is not None:
                handle.write(metadata.comment_line() + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        exc.add_note(f"while writing {path}")
        raise
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith(COMMENT_PREFIX)]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigurationError("empty CSV file", str(path)) from None
    return header, [row for row in reader]


def write_json(path: Path, model: BaseModel) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        exc.add_note(f"while writing {path}")
        raise
    return path


def trajectory_header(n: int) -> list[str]:
    return ["t", *(f"theta_{i}" for i in range(n)), *(f"omega_{i}" for i in range(n))]


def export_trajectory(trajectory: Trajectory, path: Path, metadata: ArtifactMetadata | None = None) -> Path:
    rows = (
        [format_float(index * trajectory.dt), *map(format_float, state.theta), *map(format_float, state.omega)]
        for index, state in enumerate(trajectory.states)
    )
    return write_csv(path, trajectory_header(trajectory.n), rows, metadata)


def read_trajectory(path: Path, dt: float | None = None) -> Trajectory:
    header, rows = read_csv(path)
    if not rows:
        raise ConfigurationError("trajectory file holds no states", str(path))
    n = (len(header) - 1) // 2
    if header != trajectory_header(n):
        raise ConfigurationError(f"unexpected trajectory header {header}", str(path))
    states = tuple(
        GridState([float(value) for value in row[1 : n + 1]], [float(value) for value in row[n + 1 :]])
        for row in rows
    )
    if dt is None:
        if len(rows) < 2:
            raise ConfigurationError("dt cannot be recovered from a single-state file", str(path))
        dt = float(rows[1][0])
    return Trajectory(dt, states)


SCHEDULE_HEADER = ["step", "target_bus", "coefficient"]
METRICS_HEADER = ["global_step", "mean_episode_reward", "policy_loss", "value_loss", "entropy"]


def export_schedule(schedule: Sequence[Any], path: Path, metadata: ArtifactMetadata | None = None) -> Path:
    rows = ([str(step), str(action.target), format_float(action.coefficient)] for step, action in enumerate(schedule))
    return write_csv(path, SCHEDULE_HEADER, rows, metadata)


def metrics_row(metrics: Any) -> list[str]:
    return [
        str(metrics.global_step),
        format_float(metrics.mean_episode_reward),
        format_float(metrics.policy_loss),
        format_float(metrics.value_loss),
        format_float(metrics.entropy),
    ]


def export_metrics(metrics: Sequence[Any], path: Path, metadata: ArtifactMetadata | None = None) -> Path:
    return write_csv(path, METRICS_HEADER, (metrics_row(row) for row in metrics), metadata)


class MetricsWriter:
    """Appends one metrics row per update so an aborted run keeps its history."""

    def __init__(self, path: Path, metadata: ArtifactMetadata | None = None):
        self.path = write_csv(path, METRICS_HEADER, [], metadata)

    def append(self, metrics: Any) -> None:
        try:
            with self.path.open("a", newline="", encoding="utf-8") as handle:
                csv.writer(handle, lineterminator="\n").writerow(metrics_row(metrics))
        except OSError as exc:
            exc.add_note(f"while writing {self.path}")
            raise
