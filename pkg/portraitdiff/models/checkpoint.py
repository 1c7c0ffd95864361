"""Checkpoint and run-summary models"""
from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional
from datetime import datetime

CHECKPOINT_FORMAT_VERSION = 1


class BlobRecord(BaseModel):
    """One parameter group stored in a checkpoint"""
    file: str
    hash: str
    size: int = 0
    compressed_size: int = 0
    tags: List[str] = Field(default_factory=list)
    num_params: int = 0


class CheckpointManifest(BaseModel):
    """manifest.json of a checkpoint directory"""
    format_version: int = CHECKPOINT_FORMAT_VERSION
    stage: Optional[str] = None
    step: int = 0
    seed: int = 0
    created_at: datetime = Field(default_factory=datetime.now)
    has_temporal: bool = False
    config: Dict[str, Any] = Field(default_factory=dict)
    blobs: Dict[str, BlobRecord] = Field(default_factory=dict)
    final_loss: Optional[float] = None


class AuditCheck(BaseModel):
    """Single invariant check result"""
    name: str
    passed: bool
    detail: str = ""


class AuditReport(BaseModel):
    """Result of the invariant suite"""
    checks: List[AuditCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


class RunSummary(BaseModel):
    """Machine-readable summary written by every command"""
    format_version: int = 1
    command: str
    seed: int
    status: str = 'ok'
    started_at: datetime = Field(default_factory=datetime.now)
    finished_at: Optional[datetime] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    outputs: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None
