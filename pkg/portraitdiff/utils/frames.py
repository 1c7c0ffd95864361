"""Frame image I/O"""
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import torch
from PIL import Image

FRAME_PATTERN = "frame_{:04d}.png"


def to_uint8(frame: Union[np.ndarray, torch.Tensor]) -> np.ndarray:
    """(3, H, W) float in [0, 1] or (H, W, 3) uint8 -> (H, W, 3) uint8"""
    if isinstance(frame, torch.Tensor):
        arr = frame.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
        return np.round(arr * 255).astype(np.uint8)
    if frame.dtype == np.uint8:
        return frame
    return np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]"""
    return torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def save_frame(frame: Union[np.ndarray, torch.Tensor], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(frame)).save(path, format='PNG')


def load_frame(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        return to_tensor(np.asarray(img.convert('RGB')))


def load_mask(path: Path) -> torch.Tensor:
    """Grayscale mask image -> (1, H, W) binary float"""
    with Image.open(path) as img:
        arr = np.asarray(img.convert('L'))
    return torch.from_numpy((arr > 127).astype(np.float32))[None]


def frame_paths(directory: Path) -> List[Path]:
    return sorted(directory.glob("frame_*.png"))


def load_frames(directory: Path) -> torch.Tensor:
    """Load every frame_XXXX.png of a directory as (F, 3, H, W)"""
    paths = frame_paths(directory)
    if not paths:
        raise FileNotFoundError(f"No frames found in {directory}")
    return torch.stack([load_frame(p) for p in paths])


def save_frames(frames: Union[torch.Tensor, Sequence[np.ndarray]], directory: Path) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = directory / FRAME_PATTERN.format(i)
        save_frame(frame, path)
        paths.append(path)
    return paths
