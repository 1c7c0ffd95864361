"""Procedural synthetic portrait corpus"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from ..models.clip import ClipMeta, ClipRecord, FaceBox, FrameMeta, HeadShape
from ..storage.jsonl import write_jsonl
from ..utils.frames import save_frames
from ..utils.seeding import numpy_generator

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
META_NAME = "meta.json"
YAW_LIMIT = 35.0
PITCH_LIMIT = 25.0
# Pupil travel as a fraction of head half-width
PUPIL_TRAVEL = 0.11


@dataclass(frozen=True)
class IdentityStyle:
    """Appearance of one synthetic person"""
    skin: np.ndarray
    hair: np.ndarray
    iris: np.ndarray
    torso: np.ndarray
    bg_a: np.ndarray
    bg_b: np.ndarray
    stripe_freq: float
    head_scale: float


@dataclass(frozen=True)
class FrameParams:
    head: HeadShape
    gaze: Tuple[float, float]
    mouth_open: float


def identity_style(identity_id: int, seed: int) -> IdentityStyle:
    rng = numpy_generator(seed, "identity", identity_id)
    return IdentityStyle(
        skin=rng.uniform([0.55, 0.35, 0.25], [0.95, 0.8, 0.7]),
        hair=rng.uniform(0.0, 0.6, 3),
        iris=rng.uniform(0.0, 0.5, 3),
        torso=rng.uniform(0.1, 0.9, 3),
        bg_a=rng.uniform(0.0, 1.0, 3),
        bg_b=rng.uniform(0.0, 1.0, 3),
        stripe_freq=float(rng.uniform(1.0, 4.0)),
        head_scale=float(rng.uniform(0.17, 0.22)),
    )


def smooth_curve(n: int, rng: np.random.Generator, components: int = 3) -> np.ndarray:
    """Sum of random low-frequency sinusoids in [-1, 1], one value per frame"""
    t = np.arange(n, dtype=np.float64)
    out = np.zeros(n)
    for _ in range(components):
        period = rng.uniform(24.0, 96.0)
        phase = rng.uniform(0.0, 2 * math.pi)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * math.pi * t / period + phase)
    return out / components


def gaze_trajectory(n: int, rng: np.random.Generator, saccade_prob: float = 0.03) -> np.ndarray:
    """(n, 2) yaw/pitch in degrees: smooth drift plus occasional saccades"""
    yaw = 20.0 * smooth_curve(n, rng)
    pitch = 12.0 * smooth_curve(n, rng)
    offset = np.zeros((n, 2))
    current = np.zeros(2)
    for i in range(n):
        if rng.random() < saccade_prob:
            current = rng.uniform([-15.0, -10.0], [15.0, 10.0])
        offset[i] = current
    gaze = np.stack([yaw, pitch], axis=1) + offset
    gaze[:, 0] = np.clip(gaze[:, 0], -YAW_LIMIT, YAW_LIMIT)
    gaze[:, 1] = np.clip(gaze[:, 1], -PITCH_LIMIT, PITCH_LIMIT)
    return gaze


def pupil_offset(gaze: Tuple[float, float], travel: float) -> Tuple[float, float]:
    """Pixel offset of a pupil from the eye centre for (yaw, pitch)"""
    yaw, pitch = (math.radians(g) for g in gaze)
    return travel * math.sin(yaw), -travel * math.sin(pitch)


def gaze_from_offset(dx: float, dy: float, travel: float) -> Tuple[float, float]:
    """Inverse of pupil_offset"""
    return math.degrees(math.asin(dx / travel)), math.degrees(math.asin(-dy / travel))


def clip_parameters(identity_id: int, n_frames: int, size: int, seed: int) -> List[FrameParams]:
    """Per-frame head pose, gaze and mouth opening of one clip"""
    style = identity_style(identity_id, seed)
    rng = numpy_generator(seed, "motion", identity_id)
    rx = style.head_scale * size
    ry = 1.25 * rx
    cx = size / 2 + 0.06 * size * smooth_curve(n_frames, rng)
    cy = 0.42 * size + 0.04 * size * smooth_curve(n_frames, rng)
    mouth = 0.5 + 0.5 * smooth_curve(n_frames, rng, components=2)
    gaze = gaze_trajectory(n_frames, rng)
    return [
        FrameParams(
            head=HeadShape(cx=float(cx[i]), cy=float(cy[i]), rx=float(rx), ry=float(ry)),
            gaze=(float(gaze[i, 0]), float(gaze[i, 1])),
            mouth_open=float(np.clip(mouth[i], 0.0, 1.0)),
        )
        for i in range(n_frames)
    ]


def face_box_of(head: HeadShape, height: int, width: int) -> FaceBox:
    x0 = max(0, int(math.floor(head.cx - head.rx)))
    y0 = max(0, int(math.floor(head.cy - head.ry)))
    x1 = min(width, int(math.ceil(head.cx + head.rx)))
    y1 = min(height, int(math.ceil(head.cy + head.ry)))
    return FaceBox(x=x0, y=y0, w=max(0, x1 - x0), h=max(0, y1 - y0))


def _ellipse(yy: np.ndarray, xx: np.ndarray, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.mgrid[0:height, 0:width].astype(np.float64) + 0.5


def foreground_region(head: HeadShape, height: int, width: int) -> np.ndarray:
    """Boolean (H, W) character mask: head with hair plus torso"""
    yy, xx = _grid(height, width)
    head_mask = _ellipse(yy, xx, head.cx, head.cy, head.rx * 1.05, head.ry * 1.05)
    torso = _ellipse(yy, xx, head.cx, head.cy + 2.1 * head.ry, 1.7 * head.rx, 1.1 * head.ry)
    return head_mask | torso


def foreground_mask(head: Optional[HeadShape], height: int, width: int) -> torch.Tensor:
    """(1, H, W) float mask; no head shape means an all-background image"""
    if head is None:
        return torch.zeros(1, height, width)
    return torch.from_numpy(foreground_region(head, height, width).astype(np.float32))[None]


def render_frame(style: IdentityStyle, params: FrameParams, size: int) -> np.ndarray:
    """Rasterize one frame as (H, W, 3) float in [0, 1]"""
    yy, xx = _grid(size, size)
    head = params.head
    t = (xx + yy) / (2 * size)
    stripes = 0.5 + 0.5 * np.sin(2 * math.pi * style.stripe_freq * yy / size)
    mix = (0.7 * t + 0.3 * stripes)[..., None]
    img = style.bg_a * (1 - mix) + style.bg_b * mix

    torso = _ellipse(yy, xx, head.cx, head.cy + 2.1 * head.ry, 1.7 * head.rx, 1.1 * head.ry)
    img[torso] = style.torso
    img[_ellipse(yy, xx, head.cx, head.cy, head.rx * 1.05, head.ry * 1.05)] = style.hair
    face = _ellipse(yy, xx, head.cx, head.cy + 0.08 * head.ry, head.rx, head.ry * 0.92)
    img[face] = style.skin

    travel = PUPIL_TRAVEL * head.rx
    dx, dy = pupil_offset(params.gaze, travel)
    for side in (-1.0, 1.0):
        ex, ey = head.cx + side * 0.4 * head.rx, head.cy - 0.1 * head.ry
        img[_ellipse(yy, xx, ex, ey, 0.22 * head.rx, 0.15 * head.ry)] = 1.0
        img[_ellipse(yy, xx, ex + dx, ey + dy, 0.1 * head.rx, 0.1 * head.rx)] = style.iris

    mouth_h = head.ry * (0.03 + 0.12 * params.mouth_open)
    img[_ellipse(yy, xx, head.cx, head.cy + 0.5 * head.ry, 0.35 * head.rx, mouth_h)] = (0.5, 0.1, 0.1)
    return np.clip(img, 0.0, 1.0)


def synth_clip_meta(identity_id: int, n_frames: int, size: int, seed: int) -> ClipMeta:
    """Metadata of one clip without rendering pixels"""
    frames = [
        FrameMeta(face_box=face_box_of(p.head, size, size), gaze=p.gaze, head=p.head)
        for p in clip_parameters(identity_id, n_frames, size, seed)
    ]
    return ClipMeta(identity_id=identity_id, height=size, width=size, frames=frames)


def render_clip(identity_id: int, n_frames: int, size: int, seed: int) -> Tuple[np.ndarray, ClipMeta]:
    """Render (F, H, W, 3) float frames and their metadata"""
    style = identity_style(identity_id, seed)
    params = clip_parameters(identity_id, n_frames, size, seed)
    frames = np.stack([render_frame(style, p, size) for p in params])
    return frames, synth_clip_meta(identity_id, n_frames, size, seed)


def synth_corpus(
    root: Path,
    n_videos: int,
    frames_per_video: int,
    size: int,
    seed: int = 0,
    progress: Optional[Callable[[int], None]] = None,
) -> List[ClipRecord]:
    """
    Write a synthetic corpus to disk

    Layout:
        root/manifest.jsonl             one ClipRecord per line
        root/clip_XXXX/frame_XXXX.png   rendered frames
        root/clip_XXXX/meta.json        ClipMeta with face boxes, gaze and head shapes

    Returns:
        Manifest records
    """
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for identity_id in range(n_videos):
        frames, meta = render_clip(identity_id, frames_per_video, size, seed)
        clip_dir = root / f"clip_{identity_id:04d}"
        save_frames(list(frames), clip_dir)
        (clip_dir / META_NAME).write_text(meta.model_dump_json(indent=2))
        records.append(ClipRecord(
            path=clip_dir.name, frame_count=frames_per_video, identity_id=identity_id,
        ))
        if progress:
            progress(identity_id)
    write_jsonl(root / MANIFEST_NAME, records)
    logger.info(f"Synthesized {n_videos} clips of {frames_per_video} frames into {root}")
    return records
