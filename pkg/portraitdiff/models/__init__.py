"""Data models for portraitdiff"""
from .config import (
    RunConfig, CodecConfig, UNetConfig, MotionConfig, TemporalConfig, ContextConfig,
    ScheduleConfig, SamplerConfig, DataConfig, StageConfig, TrainingConfig, InferenceConfig,
)
from .clip import FaceBox, HeadShape, FrameMeta, ClipMeta, ClipRecord
from .checkpoint import (
    BlobRecord, CheckpointManifest, AuditCheck, AuditReport, RunSummary,
)

__all__ = [
    "RunConfig",
    "CodecConfig",
    "UNetConfig",
    "MotionConfig",
    "TemporalConfig",
    "ContextConfig",
    "ScheduleConfig",
    "SamplerConfig",
    "DataConfig",
    "StageConfig",
    "TrainingConfig",
    "InferenceConfig",
    "FaceBox",
    "HeadShape",
    "FrameMeta",
    "ClipMeta",
    "ClipRecord",
    "BlobRecord",
    "CheckpointManifest",
    "AuditCheck",
    "AuditReport",
    "RunSummary",
]
