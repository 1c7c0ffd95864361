"""Sliding-window inference"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..errors import CoverageError, ShapeError
from ..models.clip import FaceBox
from ..models.config import InferenceConfig
from ..utils.seeding import derive_seed
from .augment import mask_clip
from .codec import check_frames
from .model import PortraitModel, ReferenceState
from .motion import ConditioningBundle
from .perturb import perturb_identity
from .schedule import DDIMSampler
from .video import VideoClip

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPlan:
    """Half-open frame ranges covering [0, total)"""
    windows: Tuple[Tuple[int, int], ...]
    window: int
    overlap: int
    total: int

    def coverage(self) -> List[int]:
        """Number of windows covering each frame"""
        counts = [0] * self.total
        for start, end in self.windows:
            for i in range(start, end):
                counts[i] += 1
        return counts


def plan_windows(total: int, window: int, overlap: int) -> WindowPlan:
    """
    Starts at 0, W-O, 2(W-O), ...; the last window is clamped to end at total

    A regular window made redundant by the clamped one is dropped so that no frame is covered
    more than twice when O <= W/2.
    """
    if window < 1 or not 0 <= overlap < window:
        raise ValueError(f"need 0 <= overlap < window, got window={window}, overlap={overlap}")
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if total <= window:
        return WindowPlan(((0, total),), window, overlap, total)

    stride = window - overlap
    starts = []
    start = 0
    while start + window < total:
        starts.append(start)
        start += stride
    final = total - window
    while len(starts) >= 2 and final < starts[-2] + window:
        starts.pop()
    starts.append(final)
    return WindowPlan(tuple((s, s + window) for s in starts), window, overlap, total)


def blend_windows(plan: WindowPlan, outputs: Sequence[torch.Tensor]) -> torch.Tensor:
    """Per-frame mean over every window covering the frame"""
    if len(outputs) != len(plan.windows):
        raise ShapeError(f"{len(outputs)} window outputs for {len(plan.windows)} planned windows")
    for (start, end), out in zip(plan.windows, outputs):
        if out.shape[0] != end - start:
            raise ShapeError(f"window [{start}, {end}) produced {out.shape[0]} frames")
    first = outputs[0]
    total = torch.zeros((plan.total,) + tuple(first.shape[1:]), dtype=first.dtype, device=first.device)
    counts = torch.zeros(plan.total, dtype=first.dtype, device=first.device)
    for (start, end), out in zip(plan.windows, outputs):
        total[start:end] += out
        counts[start:end] += 1
    holes = torch.nonzero(counts == 0).flatten().tolist()
    if holes:
        raise CoverageError(f"frames {holes[:10]} are not covered by any window")
    return total / counts.view(-1, *([1] * (total.dim() - 1)))


def frame_noise(
    frame_indices: Sequence[int],
    shape: Tuple[int, ...],
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Initial noise per absolute frame index, so overlapping windows share it"""
    return torch.stack([
        torch.randn(shape, generator=torch.Generator().manual_seed(derive_seed(seed, "frame", i)),
                    dtype=dtype)
        for i in frame_indices
    ])


def generate_window(
    model: PortraitModel,
    state: ReferenceState,
    bundle: ConditioningBundle,
    sampler: DDIMSampler,
    init_noise: torch.Tensor,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Sample W latent frames for one window"""
    frames = init_noise.shape[0]
    if bundle.motion.shape[0] != frames:
        raise ShapeError(
            f"window of {frames} frames got {bundle.motion.shape[0]} driving frames"
        )

    def predict(x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return model.predict_noise(x_t, t, bundle, state, num_frames=frames)

    return sampler.sample(predict, init_noise, generator)


def preprocess_driving(
    driving: VideoClip,
    reference: Optional[torch.Tensor] = None,
    reference_box: Optional[FaceBox] = None,
    appearance_plugin: Optional[str] = None,
    seed: int = 0,
) -> torch.Tensor:
    """Optional appearance transfer onto the driving clip, then face masking"""
    if appearance_plugin:
        driving = perturb_identity(
            driving, appearance_plugin, np.random.default_rng(seed),
            reference=reference, reference_box=reference_box,
        )
    return mask_clip(driving).frames


@dataclass
class AnimationResult:
    frames: torch.Tensor     # (F, 3, H, W)
    latents: torch.Tensor    # (F, C_lat, h, w)
    plan: WindowPlan


@torch.no_grad()
def animate(
    model: PortraitModel,
    reference: torch.Tensor,
    ref_mask: torch.Tensor,
    driving: VideoClip,
    config: InferenceConfig,
    sampler: DDIMSampler,
    reference_box: Optional[FaceBox] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> AnimationResult:
    """
    Animate a reference image with a driving clip

    Reference features and context tokens are computed once and shared by every window.

    Args:
        model: trained portrait model
        reference: (3, H, W) reference image
        ref_mask: (1, H, W) reference foreground mask
        driving: driving clip with face boxes
        config: window, overlap, seed and appearance-transfer settings
        sampler: DDIM sampler
        reference_box: face box of the reference (needed for appearance transfer)
        progress: called with the index of each finished window
    """
    factor = model.config.codec.factor
    check_frames(reference[None], factor)
    check_frames(driving.frames, factor)
    if tuple(driving.frames.shape[-2:]) != tuple(reference.shape[-2:]):
        raise ShapeError(
            f"driving {tuple(driving.frames.shape[-2:])} and reference "
            f"{tuple(reference.shape[-2:])} sizes differ"
        )
    model.eval()
    param = next(model.parameters())
    device, dtype = param.device, param.dtype

    plugin = config.appearance_plugin if config.appearance_transfer else None
    if plugin and reference_box is None:
        raise ValueError("appearance transfer needs the reference face box")
    masked = preprocess_driving(driving, reference, reference_box, plugin, config.seed)

    state = model.prepare_reference(reference.to(device, dtype), ref_mask.to(device, dtype))
    bundle = model.condition(masked.to(device, dtype), state)

    total = len(driving)
    plan = plan_windows(total, config.window, config.overlap)
    latent_shape = (model.plan.latent,) + model.latent_size
    noise = frame_noise(range(total), latent_shape, config.seed, dtype).to(device)

    def run(index: int) -> torch.Tensor:
        start, end = plan.windows[index]
        generator = torch.Generator().manual_seed(derive_seed(config.seed, "window", index))
        # Grad mode is thread-local
        with torch.no_grad():
            out = generate_window(model, state, bundle.slice_frames(start, end), sampler,
                                  noise[start:end], generator)
        if progress:
            progress(index)
        return out

    indices = range(len(plan.windows))
    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            outputs = list(pool.map(run, indices))
    else:
        outputs = [run(i) for i in indices]

    latents = blend_windows(plan, outputs)
    frames = model.codec.decode(latents).clamp(0.0, 1.0)
    logger.info(f"Animated {total} frames in {len(plan.windows)} window(s)")
    return AnimationResult(frames=frames.cpu(), latents=latents.cpu(), plan=plan)


def psnr(prediction: torch.Tensor, target: torch.Tensor, max_value: float = 1.0) -> torch.Tensor:
    """Per-frame PSNR in dB, (F, ...) -> (F,)"""
    mse = ((prediction - target) ** 2).flatten(1).mean(dim=1)
    return 10 * torch.log10(max_value ** 2 / mse.clamp(min=1e-12))


def copy_reference_baseline(reference: torch.Tensor, frames: int) -> torch.Tensor:
    """Baseline that repeats the reference frame"""
    return reference[None].expand(frames, -1, -1, -1).clone()


def beats_baseline_fraction(
    generated: torch.Tensor,
    reference: torch.Tensor,
    target: torch.Tensor,
) -> float:
    """Fraction of frames where the generation has higher PSNR than copying the reference"""
    ours = psnr(generated, target)
    baseline = psnr(copy_reference_baseline(reference, target.shape[0]), target)
    return (ours > baseline).float().mean().item()
