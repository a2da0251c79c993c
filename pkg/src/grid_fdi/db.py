from contextlib import contextmanager
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.orm import Session

# Engines are cached per ledger file
_engines = {}
_tables_created = set()


def get_engine(database_path: str | Path):
    """Get or create an engine for the ledger at ``database_path``."""
    key = str(database_path)
    if key not in _engines:
        Path(key).parent.mkdir(parents=True, exist_ok=True)
        _engines[key] = create_engine(f"sqlite:///{key}")
    return _engines[key]


def dispose_engines() -> None:
    for engine in _engines.values():
        engine.dispose()
    _engines.clear()
    _tables_created.clear()


@contextmanager
def get_session(database_path: str | Path):
    key = str(database_path)
    if key not in _tables_created:
        from grid_fdi.models import create_tables

        create_tables(key)
        _tables_created.add(key)

    session = Session(get_engine(key), expire_on_commit=False)
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
