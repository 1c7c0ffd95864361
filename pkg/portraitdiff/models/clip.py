"""Corpus metadata models"""
from pydantic import BaseModel, Field
from typing import List, Literal, Optional, Tuple

SourceTag = Literal['real', 'swapped', 'stylized']


class FaceBox(BaseModel):
    """Axis-aligned face rectangle in pixels"""
    x: int
    y: int
    w: int = Field(ge=0)
    h: int = Field(ge=0)

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def within(self, height: int, width: int) -> bool:
        return (
            self.x >= 0 and self.y >= 0
            and self.x + self.w <= width and self.y + self.h <= height
        )


class HeadShape(BaseModel):
    """Ellipse of the rendered head, used for the foreground mask"""
    cx: float
    cy: float
    rx: float
    ry: float


class FrameMeta(BaseModel):
    """Per-frame annotations"""
    face_box: FaceBox
    gaze: Optional[Tuple[float, float]] = None  # (yaw, pitch) degrees
    head: Optional[HeadShape] = None


class ClipMeta(BaseModel):
    """Content of a clip directory's meta.json"""
    identity_id: int
    height: int
    width: int
    frames: List[FrameMeta] = Field(default_factory=list)
    source_tag: SourceTag = 'real'


class ClipRecord(BaseModel):
    """One line of the corpus manifest"""
    path: str
    frame_count: int = Field(ge=1)
    identity_id: int
