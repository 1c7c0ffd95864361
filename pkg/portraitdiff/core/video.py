"""In-memory video clips"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch

from ..errors import ShapeError
from ..models.clip import ClipMeta, FaceBox, FrameMeta, SourceTag
from ..utils.frames import load_frames


@dataclass(frozen=True, eq=False)
class VideoClip:
    """Frames (F, 3, H, W) in [0, 1] with per-frame annotations"""
    frames: torch.Tensor
    meta: Tuple[FrameMeta, ...]
    identity_id: int
    source_tag: SourceTag = 'real'

    def __post_init__(self):
        if self.frames.dim() != 4 or self.frames.shape[1] != 3:
            raise ShapeError(f"clip frames must be (F, 3, H, W), got {tuple(self.frames.shape)}")
        if self.frames.shape[0] < 1:
            raise ShapeError("clip needs at least one frame")
        if len(self.meta) != self.frames.shape[0]:
            raise ShapeError(f"{len(self.meta)} annotations for {self.frames.shape[0]} frames")
        h, w = self.height, self.width
        for i, m in enumerate(self.meta):
            if not m.face_box.within(h, w):
                raise ShapeError(f"frame {i}: face box {m.face_box.as_tuple()} outside {h}x{w}")
        object.__setattr__(self, 'meta', tuple(self.meta))

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[-2]

    @property
    def width(self) -> int:
        return self.frames.shape[-1]

    @property
    def face_boxes(self) -> List[FaceBox]:
        return [m.face_box for m in self.meta]

    @property
    def gazes(self) -> List[Optional[Tuple[float, float]]]:
        return [m.gaze for m in self.meta]

    def select(self, indices: Sequence[int]) -> 'VideoClip':
        idx = list(indices)
        return replace(self, frames=self.frames[idx], meta=tuple(self.meta[i] for i in idx))

    def with_frames(
        self,
        frames: torch.Tensor,
        source_tag: Optional[SourceTag] = None,
        meta: Optional[Sequence[FrameMeta]] = None,
    ) -> 'VideoClip':
        return replace(
            self,
            frames=frames,
            meta=tuple(meta) if meta is not None else self.meta,
            source_tag=source_tag or self.source_tag,
        )

    @classmethod
    def from_meta(cls, frames: torch.Tensor, meta: ClipMeta) -> 'VideoClip':
        return cls(frames, tuple(meta.frames), meta.identity_id, meta.source_tag)

    @classmethod
    def load(cls, directory: Path) -> 'VideoClip':
        """Read frame_XXXX.png files and meta.json of a clip directory"""
        meta_path = directory / "meta.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"Clip metadata not found: {meta_path}")
        meta = ClipMeta.model_validate_json(meta_path.read_text())
        return cls.from_meta(load_frames(directory), meta)
