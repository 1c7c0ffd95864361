"""Utility functions"""
from .formatters import format_size, format_date, format_count, format_loss
from .hashing import tensor_hash, bytes_hash, parameter_hashes, changed_keys, state_hash
from .frames import load_frame, load_frames, save_frame, save_frames, load_mask
from .seeding import derive_seed, numpy_generator, torch_generator, worker_generator, seed_worker

__all__ = [
    "format_size",
    "format_date",
    "format_count",
    "format_loss",
    "tensor_hash",
    "bytes_hash",
    "parameter_hashes",
    "changed_keys",
    "state_hash",
    "load_frame",
    "load_frames",
    "save_frame",
    "save_frames",
    "load_mask",
    "derive_seed",
    "numpy_generator",
    "torch_generator",
    "worker_generator",
    "seed_worker",
]
