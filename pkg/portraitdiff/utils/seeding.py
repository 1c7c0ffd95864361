"""Seeded random streams"""
import hashlib
import random
from typing import Sequence, Union

import numpy as np
import torch


def derive_seed(*parts: Union[int, str]) -> int:
    """Stable 63-bit seed from a tuple of ints/strings"""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], 'little') & ((1 << 63) - 1)


def numpy_generator(*parts: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def torch_generator(*parts: Union[int, str]) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(*parts))


def worker_generator(seed: int, worker_id: int) -> np.random.Generator:
    """Independent stream for one data-loading worker"""
    return numpy_generator(seed, "worker", worker_id)


def seed_worker(worker_id: int) -> None:
    """DataLoader worker_init_fn: seed library RNGs from torch's per-worker seed"""
    worker_seed = torch.initial_seed() % 2 ** 32
    np.random.seed(worker_seed)
    random.seed(worker_seed)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def choice_index(rng: np.random.Generator, weights: Sequence[float]) -> int:
    return int(rng.choice(len(weights), p=np.asarray(weights, dtype=np.float64)))
