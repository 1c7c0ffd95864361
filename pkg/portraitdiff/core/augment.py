"""Face masking and clip-level driving augmentation"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ShapeError
from ..models.clip import FaceBox
from .video import VideoClip

logger = logging.getLogger(__name__)

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def mask_face(frame: torch.Tensor, box: FaceBox) -> torch.Tensor:
    """Zero every pixel outside the face box; pixels inside are copied unchanged"""
    h, w = frame.shape[-2:]
    if not box.within(h, w):
        raise ShapeError(f"face box {box.as_tuple()} outside {h}x{w} frame")
    out = torch.zeros_like(frame)
    out[..., box.y:box.y + box.h, box.x:box.x + box.w] = frame[..., box.y:box.y + box.h, box.x:box.x + box.w]
    return out


def mask_clip(clip: VideoClip) -> VideoClip:
    masked = torch.stack([mask_face(f, m.face_box) for f, m in zip(clip.frames, clip.meta)])
    return clip.with_frames(masked)


@dataclass(frozen=True)
class AugmentParams:
    """Augmentation drawn once per clip"""
    grayscale: bool
    scale: Tuple[float, float]  # (sx, sy)


def draw_augment_params(
    rng: np.random.Generator,
    p_gray: float,
    p_resize: float,
    scale_range: Tuple[float, float],
) -> AugmentParams:
    gray = bool(rng.random() < p_gray)
    scale = (1.0, 1.0)
    if rng.random() < p_resize:
        lo, hi = scale_range
        scale = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
    return AugmentParams(grayscale=gray, scale=scale)


def to_grayscale(frames: torch.Tensor) -> torch.Tensor:
    weights = torch.tensor(GRAY_WEIGHTS, dtype=frames.dtype, device=frames.device)
    gray = torch.einsum('...chw,c->...hw', frames, weights)
    return gray.unsqueeze(-3).expand_as(frames).contiguous()


def rescale_face(frame: torch.Tensor, box: FaceBox, scale: Tuple[float, float]) -> Tuple[torch.Tensor, FaceBox]:
    """Resize the face region by (sx, sy) and re-place it centred on a black canvas"""
    h, w = frame.shape[-2:]
    if box.w == 0 or box.h == 0:
        return frame.clone(), box
    sx, sy = scale
    new_w = int(min(w, max(1, round(box.w * sx))))
    new_h = int(min(h, max(1, round(box.h * sy))))
    crop = frame[:, box.y:box.y + box.h, box.x:box.x + box.w]
    resized = F.interpolate(crop[None], size=(new_h, new_w), mode='bilinear',
                            align_corners=False)[0].clamp(0.0, 1.0)
    cx, cy = box.x + box.w / 2, box.y + box.h / 2
    x0 = int(min(max(round(cx - new_w / 2), 0), w - new_w))
    y0 = int(min(max(round(cy - new_h / 2), 0), h - new_h))
    out = torch.zeros_like(frame)
    out[:, y0:y0 + new_h, x0:x0 + new_w] = resized
    return out, FaceBox(x=x0, y=y0, w=new_w, h=new_h)


def augment_driving(
    clip: VideoClip,
    rng: np.random.Generator,
    p_gray: float = 0.2,
    p_resize: float = 0.5,
    scale_range: Tuple[float, float] = (0.8, 1.2),
    params: AugmentParams = None,
) -> VideoClip:
    """
    Grayscale and face-rescale augmentation of a masked driving clip

    Parameters are drawn once and shared by every frame. Face boxes follow the rescale.
    """
    params = params or draw_augment_params(rng, p_gray, p_resize, scale_range)
    frames = clip.frames
    meta = list(clip.meta)
    if params.scale != (1.0, 1.0):
        out = []
        for i, (frame, m) in enumerate(zip(frames, clip.meta)):
            new_frame, new_box = rescale_face(frame, m.face_box, params.scale)
            out.append(new_frame)
            meta[i] = m.model_copy(update={'face_box': new_box})
        frames = torch.stack(out)
    if params.grayscale:
        frames = to_grayscale(frames)
    return clip.with_frames(frames, meta=meta)
