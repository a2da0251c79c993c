"""Versioned JSON checkpoints of policy weights and optimizer state.

Every tensor is stored by name with its shape and row-major values; floats go
through pydantic's JSON encoder, which writes the shortest round-trip form.
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from grid_fdi.errors import CheckpointError
from grid_fdi.exports import ArtifactMetadata, write_json
from grid_fdi.policy import OptimizerState, PolicyParameters, network_shapes

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TensorRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: list[int]
    values: list[float]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "TensorRecord":
        return cls(shape=list(array.shape), values=array.ravel().tolist())

    def to_array(self, name: str) -> np.ndarray:
        expected = int(np.prod(self.shape)) if self.shape else 1
        if len(self.values) != expected:
            raise CheckpointError(f"{len(self.values)} values for shape {tuple(self.shape)}", f"tensors.{name}")
        return np.array(self.values, dtype=np.float64).reshape(self.shape)


class OptimizerRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float
    beta1: float
    beta2: float
    eps: float
    step: int
    first_moment: dict[str, TensorRecord]
    second_moment: dict[str, TensorRecord]


class Checkpoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    meta: ArtifactMetadata | None = None
    global_step: int
    n: int
    kappa: list[float]
    tensors: dict[str, TensorRecord]
    optimizer: OptimizerRecord | None = None

    @classmethod
    def from_policy(
        cls,
        policy: PolicyParameters,
        optimizer: OptimizerState | None = None,
        global_step: int = 0,
        meta: ArtifactMetadata | None = None,
    ) -> "Checkpoint":
        optimizer_record = None
        if optimizer is not None:
            optimizer_record = OptimizerRecord(
                learning_rate=optimizer.learning_rate,
                beta1=optimizer.beta1,
                beta2=optimizer.beta2,
                eps=optimizer.eps,
                step=optimizer.step,
                first_moment={k: TensorRecord.from_array(v) for k, v in optimizer.first_moment.items()},
                second_moment={k: TensorRecord.from_array(v) for k, v in optimizer.second_moment.items()},
            )
        return cls(
            meta=meta,
            global_step=global_step,
            n=policy.n,
            kappa=list(policy.kappa),
            tensors={name: TensorRecord.from_array(tensor) for name, tensor in policy.tensors.items()},
            optimizer=optimizer_record,
        )

    def _check_shapes(self, tensors: dict[str, TensorRecord], where: str) -> None:
        expected = network_shapes(self.n, len(self.kappa))
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise CheckpointError(f"tensor names differ (missing {missing}, unexpected {extra})", where)
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise CheckpointError(
                    f"expected shape {shape}, got {tuple(tensors[name].shape)}", f"{where}.{name}"
                )

    def to_policy(self) -> PolicyParameters:
        self._check_shapes(self.tensors, "tensors")
        order = network_shapes(self.n, len(self.kappa))
        return PolicyParameters(
            self.n, tuple(self.kappa), {name: self.tensors[name].to_array(name) for name in order}
        )

    def to_optimizer(self) -> OptimizerState | None:
        record = self.optimizer
        if record is None:
            return None
        self._check_shapes(record.first_moment, "optimizer.first_moment")
        self._check_shapes(record.second_moment, "optimizer.second_moment")
        return OptimizerState(
            learning_rate=record.learning_rate,
            beta1=record.beta1,
            beta2=record.beta2,
            eps=record.eps,
            step=record.step,
            first_moment={k: v.to_array(k) for k, v in record.first_moment.items()},
            second_moment={k: v.to_array(k) for k, v in record.second_moment.items()},
        )


def checkpoint_name(global_step: int) -> str:
    return f"step_{global_step:09d}.json"


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = write_json(path, checkpoint)
    logger.info("checkpoint written: %s (global step %d)", path, checkpoint.global_step)
    return path


def load_checkpoint(
    path: Path,
    n: int | None = None,
    kappa: tuple[float, ...] | None = None,
) -> Checkpoint:
    """Read and validate a checkpoint.

    With ``n`` and ``kappa`` given, the checkpoint must have been trained for
    exactly that bus count and coefficient set.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError("checkpoint file not found", str(path)) from None
    try:
        checkpoint = Checkpoint.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise CheckpointError(f"malformed checkpoint: {first['msg']}", location or str(path)) from exc

    if checkpoint.format_version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {checkpoint.format_version}, expected {FORMAT_VERSION}",
            "format_version",
        )
    if n is not None and checkpoint.n != n:
        raise CheckpointError(f"checkpoint is for {checkpoint.n} buses, system has {n}", "n")
    if kappa is not None and tuple(checkpoint.kappa) != tuple(float(value) for value in kappa):
        raise CheckpointError(f"checkpoint coefficients {checkpoint.kappa} differ from {list(kappa)}", "kappa")
    checkpoint._check_shapes(checkpoint.tensors, "tensors")
    return checkpoint
