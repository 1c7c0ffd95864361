"""Content hashing for tensors and parameter sets"""
import hashlib
from typing import Dict, Iterable, Mapping, Optional

import torch
import torch.nn as nn


def tensor_hash(tensor: torch.Tensor) -> str:
    """sha256 over dtype, shape and raw bytes"""
    t = tensor.detach().cpu().contiguous()
    hasher = hashlib.sha256()
    hasher.update(str(t.dtype).encode())
    hasher.update(str(tuple(t.shape)).encode())
    hasher.update(t.reshape(-1).view(torch.uint8).numpy().tobytes() if t.numel() else b'')
    return hasher.hexdigest()


def bytes_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def parameter_hashes(module: nn.Module, names: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """Hash every named parameter (or only those in names)"""
    params = dict(module.named_parameters())
    keys = sorted(params) if names is None else sorted(names)
    return {k: tensor_hash(params[k]) for k in keys}


def changed_keys(before: Mapping[str, str], after: Mapping[str, str]) -> list:
    return sorted(k for k in before if before[k] != after.get(k))


def state_hash(state: Mapping[str, torch.Tensor]) -> str:
    """Order-independent hash of a state dict"""
    hasher = hashlib.sha256()
    for key in sorted(state):
        hasher.update(key.encode())
        hasher.update(tensor_hash(state[key]).encode())
    return hasher.hexdigest()
