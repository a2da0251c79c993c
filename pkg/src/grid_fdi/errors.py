from typing import Any


class GridFdiError(Exception):
    """Base class for every error raised by grid_fdi."""

    def details(self) -> dict[str, Any]:
        return {}

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {"error": type(self).__name__, "message": str(self)}
        record.update(self.details())
        notes = getattr(self, "__notes__", None)
        if notes:
            record["notes"] = list(notes)
        return record


class ConfigurationError(GridFdiError, ValueError):
    def __init__(self, message: str, field_path: str | None = None):
        self.field_path = field_path
        self.reason = message
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)

    def details(self) -> dict[str, Any]:
        return {"field_path": self.field_path}


class CheckpointError(ConfigurationError):
    pass


class NumericOverflowError(GridFdiError, ArithmeticError):
    def __init__(self, message: str, bus: int, step: int | None = None, trajectory=None):
        self.bus = bus
        self.step = step
        # Partial trajectory up to the last finite state, set by simulate().
        self.trajectory = trajectory
        super().__init__(message)

    def details(self) -> dict[str, Any]:
        return {"bus": self.bus, "step": self.step}


class NonFiniteError(GridFdiError, ArithmeticError):
    def __init__(self, message: str, where: str):
        self.where = where
        super().__init__(f"{message} (at {where})")

    def details(self) -> dict[str, Any]:
        return {"where": self.where}


class InfeasibleEquilibriumError(GridFdiError):
    def __init__(self, message: str, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)

    def details(self) -> dict[str, Any]:
        return {"iterations": self.iterations, "residual": self.residual}


class UsageError(GridFdiError, RuntimeError):
    pass
