import uuid
from datetime import datetime, timezone
from enum import Enum

from sqlalchemy import Column, DateTime, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

from grid_fdi.db import get_engine

Base = declarative_base()


def _now() -> datetime:
    return datetime.now(timezone.utc)


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class Run(Base):
    __tablename__ = "runs"

    id = Column(String, primary_key=True, default=lambda: str(uuid.uuid4()))
    command = Column(String, nullable=False)
    config_hash = Column(String)
    seed = Column(Integer)
    status = Column(String, default=RunStatus.PENDING.value)
    error = Column(Text)
    created_at = Column(DateTime, default=_now)
    updated_at = Column(DateTime, default=_now, onupdate=_now)

    artifacts = relationship("Artifact", back_populates="run", order_by="Artifact.id")


class Artifact(Base):
    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, ForeignKey("runs.id"), nullable=False)
    kind = Column(String, nullable=False)
    path = Column(String, nullable=False)
    sha256 = Column(String, nullable=False)

    run = relationship("Run", back_populates="artifacts")


def create_tables(database_path: str):
    """Create the ledger tables in the given database."""
    engine = get_engine(database_path)
    Base.metadata.create_all(engine)
