"""Storage layer for checkpoints, logs and manifests"""
from .compression import Compressor
from .checkpoint_store import CheckpointStore, require_stage
from .jsonl import JsonlWriter, read_jsonl, write_jsonl

__all__ = ["Compressor", "CheckpointStore", "require_stage", "JsonlWriter", "read_jsonl", "write_jsonl"]
