"""Identity perturbation and appearance transfer plugins"""
import logging
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import PluginError
from ..models.clip import FaceBox, SourceTag
from ..utils.seeding import numpy_generator
from .video import VideoClip

logger = logging.getLogger(__name__)


class PerturbPlugin:
    """Per-frame transform of a clip; face boxes and gaze are never modified"""

    plugin_id: str = ""
    # Tag given to the output clip; None keeps the input tag
    source_tag: Optional[SourceTag] = None

    def __call__(self, clip: VideoClip, rng: np.random.Generator, **options) -> VideoClip:
        frames = torch.stack([
            self.apply_frame(frame, clip.meta[i].face_box, i, rng, **options)
            for i, frame in enumerate(clip.frames)
        ])
        return clip.with_frames(frames, source_tag=self.source_tag)

    def apply_frame(self, frame: torch.Tensor, box: FaceBox, index: int,
                    rng: np.random.Generator, **options) -> torch.Tensor:
        raise NotImplementedError


PLUGINS: Dict[str, PerturbPlugin] = {}


def register_plugin(cls):
    """Class decorator adding one plugin instance to the registry"""
    PLUGINS[cls.plugin_id] = cls()
    return cls


def get_plugin(plugin_id: str) -> PerturbPlugin:
    if plugin_id not in PLUGINS:
        raise PluginError(
            f"Unknown perturbation plugin '{plugin_id}'. Available: {', '.join(sorted(PLUGINS))}"
        )
    return PLUGINS[plugin_id]


def perturb_identity(clip: VideoClip, plugin_id: str, rng: np.random.Generator, **options) -> VideoClip:
    """Apply a registered plugin; the result carries the plugin's source tag"""
    return get_plugin(plugin_id)(clip, rng, **options)


@register_plugin
class NoPerturbation(PerturbPlugin):
    plugin_id = "none"
    source_tag = 'real'

    def __call__(self, clip: VideoClip, rng: np.random.Generator, **options) -> VideoClip:
        return clip.with_frames(clip.frames, source_tag='real')


@register_plugin
class WarpSwap(PerturbPlugin):
    """
    Face-swap stand-in: remaps colour and geometry of the face region

    The remap is keyed by a donor identity seed, so every frame of a clip receives the same
    fake identity while motion and annotations stay those of the source.
    """

    plugin_id = "warp_swap"
    source_tag = 'swapped'

    def __call__(self, clip: VideoClip, rng: np.random.Generator, donor_seed: Optional[int] = None,
                 **options) -> VideoClip:
        if donor_seed is None:
            donor_seed = int(rng.integers(0, 2 ** 31))
        return super().__call__(clip, rng, donor_seed=donor_seed)

    @staticmethod
    def donor_params(donor_seed: int) -> dict:
        drng = numpy_generator("warp_swap", donor_seed)
        return {
            'gain': torch.tensor(drng.uniform(0.6, 1.4, 3), dtype=torch.float32),
            'bias': torch.tensor(drng.uniform(-0.2, 0.2, 3), dtype=torch.float32),
            'stretch': (float(drng.uniform(0.85, 1.15)), float(drng.uniform(0.85, 1.15))),
        }

    def apply_frame(self, frame, box, index, rng, donor_seed: int = 0, **options):
        if box.w == 0 or box.h == 0:
            return frame.clone()
        p = self.donor_params(donor_seed)
        region = frame[:, box.y:box.y + box.h, box.x:box.x + box.w]
        sx, sy = p['stretch']
        theta = torch.tensor([[1.0 / sx, 0.0, 0.0], [0.0, 1.0 / sy, 0.0]], dtype=frame.dtype)
        grid = F.affine_grid(theta[None], [1, 3, box.h, box.w], align_corners=False)
        warped = F.grid_sample(region[None], grid.to(frame.device), mode='bilinear',
                               padding_mode='border', align_corners=False)[0]
        gain = p['gain'].to(frame)[:, None, None]
        bias = p['bias'].to(frame)[:, None, None]
        out = frame.clone()
        out[:, box.y:box.y + box.h, box.x:box.x + box.w] = (warped * gain + bias).clamp(0.0, 1.0)
        return out


@register_plugin
class PosterizeStyle(PerturbPlugin):
    """Stylization stand-in: per-frame random palette with k levels per channel, frame-incoherent"""

    plugin_id = "posterize_style"
    source_tag = 'stylized'

    def apply_frame(self, frame, box, index, rng, levels: int = 4, **options):
        palette = torch.tensor(np.sort(rng.uniform(0.0, 1.0, (3, levels)), axis=1),
                               dtype=frame.dtype, device=frame.device)
        bins = (frame * levels).floor().long().clamp(0, levels - 1)
        return torch.gather(palette, 1, bins.flatten(1)).view_as(frame)


@register_plugin
class ColorMatch(PerturbPlugin):
    """Appearance transfer: match face-region colour statistics of each frame to the reference face"""

    plugin_id = "color_match"
    source_tag = None

    def __call__(self, clip: VideoClip, rng: np.random.Generator, reference: torch.Tensor = None,
                 reference_box: FaceBox = None, **options) -> VideoClip:
        if reference is None or reference_box is None:
            raise ValueError("color_match needs reference and reference_box")
        target = _region(reference, reference_box)
        stats = (target.mean(dim=(1, 2)), target.std(dim=(1, 2)))
        return super().__call__(clip, rng, target_stats=stats)

    def apply_frame(self, frame, box, index, rng, target_stats=None, **options):
        region = _region(frame, box)
        if region.shape[1] * region.shape[2] < 2:
            return frame.clone()
        mu_t, std_t = target_stats
        mu, std = region.mean(dim=(1, 2)), region.std(dim=(1, 2))
        matched = (region - mu[:, None, None]) / (std[:, None, None] + 1e-6)
        matched = matched * std_t[:, None, None] + mu_t[:, None, None]
        out = frame.clone()
        out[:, box.y:box.y + box.h, box.x:box.x + box.w] = matched.clamp(0.0, 1.0)
        return out


def _region(frame: torch.Tensor, box: FaceBox) -> torch.Tensor:
    return frame[:, box.y:box.y + box.h, box.x:box.x + box.w]
