"""Corpus reading, clip sampling, gaze filtering and training-sample assembly"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any, Dict, Hashable, Iterator, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union,
)

import numpy as np
import torch
from torch.utils.data import Dataset

from ..errors import ClipTooShortError
from ..models.clip import ClipMeta, ClipRecord
from ..models.config import DataConfig, StageConfig
from ..storage.jsonl import read_jsonl
from ..utils.seeding import choice_index, numpy_generator
from .augment import augment_driving, mask_clip
from .perturb import perturb_identity
from .synth import MANIFEST_NAME, META_NAME, foreground_mask
from .video import VideoClip

logger = logging.getLogger(__name__)

T = TypeVar('T')
K = TypeVar('K', bound=Hashable)

# Order matches StageConfig.proportions
SOURCE_TAGS = ('swapped', 'stylized', 'real')
TAG_PLUGINS = {'swapped': 'warp_swap', 'stylized': 'posterize_style', 'real': 'none'}


class CorpusReader:
    """Read-only access to a corpus directory described by manifest.jsonl"""

    def __init__(self, root: Path, cache_size: int = 8):
        self.root = Path(root)
        manifest = self.root / MANIFEST_NAME
        if not manifest.exists():
            raise FileNotFoundError(f"Corpus manifest not found: {manifest}")
        self.records: List[ClipRecord] = read_jsonl(manifest, ClipRecord)
        self.cache_size = cache_size
        self._clips: "OrderedDict[int, VideoClip]" = OrderedDict()
        self._metas: Dict[int, ClipMeta] = {}

    def __len__(self) -> int:
        return len(self.records)

    def clip_dir(self, index: int) -> Path:
        return self.root / self.records[index].path

    def meta(self, index: int) -> ClipMeta:
        if index not in self._metas:
            self._metas[index] = ClipMeta.model_validate_json(
                (self.clip_dir(index) / META_NAME).read_text()
            )
        return self._metas[index]

    def load(self, index: int) -> VideoClip:
        """Decoded clip, least recently used clips are evicted beyond cache_size"""
        clip = self._clips.get(index)
        if clip is not None:
            self._clips.move_to_end(index)
            return clip
        clip = VideoClip.load(self.clip_dir(index))
        if self.cache_size > 0:
            self._clips[index] = clip
            while len(self._clips) > self.cache_size:
                evicted, _ = self._clips.popitem(last=False)
                logger.debug(f"Evicted clip {evicted} from cache")
        return clip

    @property
    def cached(self) -> List[int]:
        """Cached clip indices, least recently used first"""
        return list(self._clips)

    @property
    def identities(self) -> List[int]:
        return sorted({r.identity_id for r in self.records})


def clip_span(length: int, stride: int) -> int:
    """Frames covered by a clip of length frames sampled every stride frames"""
    return (length - 1) * stride + 1


def sample_clip(
    video: VideoClip,
    length: int,
    stride: int,
    rng: np.random.Generator,
    start: Optional[int] = None,
) -> Tuple[VideoClip, int]:
    """
    Sample frames f0, f0+s, ..., f0+(L-1)s and a reference index within them

    Returns:
        (clip, reference index into the clip)
    """
    span = clip_span(length, stride)
    if len(video) < span:
        raise ClipTooShortError(
            f"video has {len(video)} frames; {length} frames at stride {stride} need {span}"
        )
    if start is None:
        start = int(rng.integers(0, len(video) - span + 1))
    elif not 0 <= start <= len(video) - span:
        raise ValueError(f"start {start} leaves no room for a span of {span} frames")
    indices = [start + i * stride for i in range(length)]
    ref_index = int(rng.integers(0, length))
    return video.select(indices), ref_index


# ── gaze ──────────────────────────────────────

def gaze_vector(yaw: float, pitch: float) -> np.ndarray:
    """Unit 3-D gaze direction for yaw/pitch in degrees"""
    y, p = math.radians(yaw), math.radians(pitch)
    return np.array([math.cos(p) * math.sin(y), math.sin(p), math.cos(p) * math.cos(y)])


def gaze_change_score(
    clip: Union[VideoClip, ClipMeta, Sequence[Optional[Tuple[float, float]]]],
) -> Optional[float]:
    """Max angular gaze change (degrees) between consecutive frames; None if any gaze is missing"""
    if isinstance(clip, VideoClip):
        gazes = clip.gazes
    elif isinstance(clip, ClipMeta):
        gazes = [f.gaze for f in clip.frames]
    else:
        gazes = list(clip)
    if any(g is None for g in gazes):
        return None
    vectors = [gaze_vector(*g) for g in gazes]
    score = 0.0
    for a, b in zip(vectors, vectors[1:]):
        cos = float(np.clip(np.dot(a, b), -1.0, 1.0))
        score = max(score, math.degrees(math.acos(cos)))
    return score


@dataclass
class FilterResult:
    selected: List[Any]
    excluded: List[Any] = field(default_factory=list)  # clips without gaze


def filter_top_fraction(scores: Mapping[K, Optional[float]], fraction: float) -> FilterResult:
    """Keep the round(fraction * n) highest-scoring clips (at least one); ties broken by key"""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    excluded = sorted(k for k, s in scores.items() if s is None)
    valid = [(k, s) for k, s in scores.items() if s is not None]
    if excluded:
        logger.warning(f"{len(excluded)} clip(s) have no gaze annotation and are excluded")
    if not valid:
        return FilterResult(selected=[], excluded=excluded)
    keep = max(1, round(fraction * len(valid)))
    ranked = sorted(valid, key=lambda item: (-item[1], item[0]))
    return FilterResult(selected=[k for k, _ in ranked[:keep]], excluded=excluded)


def gaze_filtered_indices(corpus: CorpusReader, fraction: float) -> FilterResult:
    scores = {i: gaze_change_score(corpus.meta(i)) for i in range(len(corpus))}
    return filter_top_fraction(scores, fraction)


# ── mixture ───────────────────────────────────

def mix_sampler(
    swapped: Sequence[T],
    stylized: Sequence[T],
    real: Sequence[T],
    proportions: Sequence[float],
    rng: np.random.Generator,
) -> Iterator[Tuple[str, T]]:
    """
    Endless stream of (source_tag, item) drawn i.i.d. by proportions

    A draw from an empty pool falls back to the real pool.
    """
    if abs(sum(proportions) - 1.0) > 1e-6 or any(p < 0 for p in proportions):
        raise ValueError(f"proportions {tuple(proportions)} must be non-negative and sum to 1")
    pools = dict(zip(SOURCE_TAGS, (list(swapped), list(stylized), list(real))))
    if not pools['real']:
        raise ValueError("real pool must not be empty")
    warned = set()
    while True:
        tag = SOURCE_TAGS[choice_index(rng, proportions)]
        if not pools[tag]:
            if tag not in warned:
                logger.warning(f"'{tag}' pool is empty, falling back to 'real'")
                warned.add(tag)
            tag = 'real'
        pool = pools[tag]
        yield tag, pool[int(rng.integers(len(pool)))]


# ── training samples ──────────────────────────

@dataclass(eq=False)
class TrainingSample:
    """Driving clip (perturbed, masked, augmented), reference frame and real target"""
    driving: VideoClip
    reference: torch.Tensor   # (3, H, W)
    ref_mask: torch.Tensor    # (1, H, W) foreground
    target: VideoClip
    source_tag: str
    ref_index: int = 0


class SampleBuilder:
    """
    Build TrainingSamples as a pure function of (corpus, config, seed, index)

    Args:
        corpus: corpus reader
        data: augmentation/perturbation settings
        stage: clip length, stride and mixture proportions
        seed: global seed
        indices: restrict to these corpus clips (gaze-filtered subset)
    """

    def __init__(
        self,
        corpus: CorpusReader,
        data: DataConfig,
        stage: StageConfig,
        seed: int = 0,
        indices: Optional[Sequence[int]] = None,
    ):
        self.corpus = corpus
        self.data = data
        self.stage = stage
        self.seed = seed
        candidates = list(range(len(corpus))) if indices is None else list(indices)
        span = clip_span(stage.clip_length, stage.stride)
        self.eligible = [i for i in candidates if corpus.records[i].frame_count >= span]
        self.skipped = len(candidates) - len(self.eligible)
        if self.skipped:
            logger.warning(f"Skipped {self.skipped} video(s) shorter than {span} frames")
        if not self.eligible:
            raise ClipTooShortError(
                f"no video provides {stage.clip_length} frames at stride {stage.stride} ({span} frames)"
            )
        identities = {corpus.records[i].identity_id for i in range(len(corpus))}
        # Swapping needs a donor of another identity
        self._donors = sorted(identities)
        self._swappable = self.eligible if len(identities) > 1 else []

    def build(self, index: int) -> TrainingSample:
        rng = numpy_generator(self.seed, self.stage.stage, "sample", index)
        tag, video_index = next(mix_sampler(
            self._swappable, self.eligible, self.eligible, self.stage.proportions, rng,
        ))
        video = self.corpus.load(video_index)
        clip, ref_index = sample_clip(video, self.stage.clip_length, self.stage.stride, rng)

        options: Dict[str, Any] = {}
        if tag == 'swapped':
            donors = [d for d in self._donors if d != clip.identity_id]
            options['donor_seed'] = donors[int(rng.integers(len(donors)))]
        elif tag == 'stylized':
            options['levels'] = self.data.posterize_levels
        driving = perturb_identity(clip, TAG_PLUGINS[tag], rng, **options)
        driving = mask_clip(driving)
        driving = augment_driving(
            driving, rng, self.data.p_gray, self.data.p_resize, self.data.scale_range,
        )
        ref_meta = clip.meta[ref_index]
        return TrainingSample(
            driving=driving,
            reference=clip.frames[ref_index],
            ref_mask=foreground_mask(ref_meta.head, clip.height, clip.width),
            target=clip,
            source_tag=tag,
            ref_index=ref_index,
        )


class TrainingClipDataset(Dataset):
    """torch Dataset over SampleBuilder; item i is always the same sample"""

    def __init__(self, builder: SampleBuilder, length: int):
        self.builder = builder
        self.length = length

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> Dict[str, Any]:
        sample = self.builder.build(index)
        return {
            'driving': sample.driving.frames,
            'target': sample.target.frames,
            'reference': sample.reference,
            'ref_mask': sample.ref_mask,
            'source_tag': sample.source_tag,
        }
