import os
from pathlib import Path
from typing import Callable

from dotenv import load_dotenv

from grid_fdi.errors import UsageError

LOG_LEVEL_VAR = "GRID_FDI_LOG_LEVEL"
LEDGER_VAR = "GRID_FDI_LEDGER"
LEDGER_FILE = "ledger.db"


class CommandSettings:
    """Registry of runnable commands plus environment-derived defaults.

    Subclasses list their command functions in a ``commands`` class attribute;
    the runner only executes commands found there.
    """

    commands: list[Callable] = []

    def __init__(self, ledger_path: Path | None = None, load_env: bool = True):
        if not self.commands:
            raise UsageError("CommandSettings subclass must define a non-empty 'commands' class attribute")
        if load_env:
            load_dotenv()
        self._ledger_path = Path(ledger_path) if ledger_path is not None else None

    def get_command(self, name: str) -> Callable:
        command_map = {func.__name__: func for func in self.commands}
        if name not in command_map:
            raise UsageError(f"command '{name}' not found; available: {sorted(command_map)}")
        return command_map[name]

    @property
    def command_names(self) -> list[str]:
        return [func.__name__ for func in self.commands]

    def ledger_path(self, output_dir: Path) -> Path:
        if self._ledger_path is not None:
            return self._ledger_path
        configured = self.env_ledger()
        return Path(configured) if configured else Path(output_dir) / LEDGER_FILE

    @staticmethod
    def env_ledger() -> str | None:
        return os.environ.get(LEDGER_VAR) or None

    @staticmethod
    def log_level(default: str = "INFO") -> str:
        return os.environ.get(LOG_LEVEL_VAR, default).upper()
