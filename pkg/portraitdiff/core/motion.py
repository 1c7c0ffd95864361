"""DrivenEncoder, reference modulation and conditioning assembly"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError
from ..models.config import MotionConfig

logger = logging.getLogger(__name__)


class ConvStack(nn.Module):
    """Four stride-2 convolutions (4x4 kernels, 16/32/64/128 channels by default)"""

    def __init__(self, config: MotionConfig, in_channels: int = 3):
        super().__init__()
        pad = (config.kernel_size - config.stride) // 2
        layers: List[nn.Module] = []
        ch = in_channels
        for i, out_ch in enumerate(config.channels):
            layers.append(nn.Conv2d(ch, out_ch, config.kernel_size, stride=config.stride, padding=pad))
            if i < len(config.channels) - 1:
                layers.append(nn.SiLU())
            ch = out_ch
        self.net = nn.Sequential(*layers)

    @property
    def conv_channels(self) -> Tuple[int, ...]:
        return tuple(m.out_channels for m in self.net if isinstance(m, nn.Conv2d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class DrivenEncoder(nn.Module):
    """Per-frame motion encoder over masked driving frames, plus latent-resolution alignment"""

    def __init__(self, config: MotionConfig, debug: bool = False):
        super().__init__()
        self.config = config
        self.debug = debug or logger.isEnabledFor(logging.DEBUG)
        self.convs = ConvStack(config)
        self.align_proj = nn.Conv2d(config.out_channels, config.out_channels, 1)

    def encode_motion(self, frames: torch.Tensor) -> torch.Tensor:
        """(F, 3, H, W) masked frames -> raw (F, C_mot, H/16, W/16) features"""
        if frames.dim() != 4 or frames.shape[1] != 3:
            raise ShapeError(f"driving frames must be (F, 3, H, W), got {tuple(frames.shape)}")
        if self.debug:
            black = (frames == 0).all(dim=1).flatten(1).float().mean(dim=1)
            for i in torch.nonzero(black == 0).flatten().tolist():
                logger.warning(f"driving frame {i} has no black pixels; is it face-masked? "
                               f"Unmasked input risks identity leakage")
        return self.convs(frames)

    def align_to_latent(self, raw: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
        """Bilinear resample to the latent grid followed by a 1x1 conv"""
        return self.align_proj(resample(raw, size))

    def forward(self, frames: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
        return self.align_to_latent(self.encode_motion(frames), size)


def resample(raw: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    """Bilinear resize, identity when already at size"""
    if tuple(raw.shape[-2:]) == tuple(size):
        return raw
    return F.interpolate(raw, size=tuple(size), mode='bilinear', align_corners=False)


@dataclass(frozen=True)
class ModulationParams:
    """Per-channel scale/shift derived from one reference image"""
    scale: torch.Tensor  # (B, C_mot)
    shift: torch.Tensor  # (B, C_mot)


class ReferenceModulator(nn.Module):
    """Reference conv stack (DrivenEncoder architecture) -> pooled -> MLP -> scale, shift"""

    def __init__(self, config: MotionConfig):
        super().__init__()
        self.convs = ConvStack(config)
        c = config.out_channels
        self.mlp = nn.Sequential(
            nn.Linear(c, config.modulation_hidden),
            nn.SiLU(),
            nn.Linear(config.modulation_hidden, 2 * c),
        )
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, reference: torch.Tensor) -> ModulationParams:
        if reference.dim() == 3:
            reference = reference[None]
        pooled = self.convs(reference).mean(dim=(-2, -1))
        scale, shift = self.mlp(pooled).chunk(2, dim=-1)
        return ModulationParams(scale=scale, shift=shift)


def modulate(motion: torch.Tensor, params: ModulationParams) -> torch.Tensor:
    """motion * (1 + scale) + shift, broadcast per channel over frames and space"""
    b = params.scale.shape[0]
    if motion.shape[0] % b:
        raise ShapeError(f"{motion.shape[0]} motion frames cannot be split over {b} references")
    reps = motion.shape[0] // b
    scale = params.scale.repeat_interleave(reps, dim=0)[:, :, None, None]
    shift = params.shift.repeat_interleave(reps, dim=0)[:, :, None, None]
    return motion * (1 + scale) + shift


@dataclass(frozen=True)
class ChannelPlan:
    """Channel order of the denoiser input: [noise | motion | ref_latent | mask]"""
    latent: int
    motion: int
    mask: int = 1

    @property
    def extra(self) -> int:
        return self.motion + self.latent + self.mask

    @property
    def total(self) -> int:
        return self.latent + self.extra

    def slices(self) -> dict:
        a = self.latent
        b = a + self.motion
        c = b + self.latent
        return {
            'noise': slice(0, a),
            'motion': slice(a, b),
            'ref_latent': slice(b, c),
            'mask': slice(c, c + self.mask),
        }


@dataclass
class ConditioningBundle:
    """Everything a denoising call consumes besides the noisy latents"""
    motion: torch.Tensor        # (N, C_mot, h, w)
    ref_latent: torch.Tensor    # (B, C_lat, h, w), broadcast over frames
    fg_mask: torch.Tensor       # (B, 1, h, w) binary
    context_tokens: torch.Tensor  # (B, 1 + P, D) or (1 + P, D)

    def __post_init__(self):
        spatial = {tuple(self.motion.shape[-2:]), tuple(self.ref_latent.shape[-2:]),
                   tuple(self.fg_mask.shape[-2:])}
        if len(spatial) != 1:
            raise ShapeError(f"conditioning spatial dims disagree: {sorted(spatial)}")
        if not torch.all((self.fg_mask == 0) | (self.fg_mask == 1)):
            raise ShapeError("foreground mask must be binary")

    def slice_frames(self, start: int, end: int) -> 'ConditioningBundle':
        """Frames [start, end) of a single-clip bundle"""
        return ConditioningBundle(self.motion[start:end], self.ref_latent, self.fg_mask,
                                  self.context_tokens)


def assemble(noise_latents: torch.Tensor, bundle: ConditioningBundle) -> torch.Tensor:
    """Stack [noise | motion | ref_latent | mask] along channels, broadcasting per-clip parts over frames"""
    n = noise_latents.shape[0]
    if tuple(noise_latents.shape[-2:]) != tuple(bundle.motion.shape[-2:]):
        raise ShapeError(
            f"noise latents {tuple(noise_latents.shape[-2:])} and conditioning "
            f"{tuple(bundle.motion.shape[-2:])} differ spatially"
        )
    if bundle.motion.shape[0] != n:
        raise ShapeError(f"{bundle.motion.shape[0]} motion frames for {n} noise frames")
    ref = _broadcast_frames(bundle.ref_latent, n)
    mask = _broadcast_frames(bundle.fg_mask.to(noise_latents.dtype), n)
    return torch.cat([noise_latents, bundle.motion, ref, mask], dim=1)


def _broadcast_frames(t: torch.Tensor, n: int) -> torch.Tensor:
    if n % t.shape[0]:
        raise ShapeError(f"cannot broadcast {t.shape[0]} per-clip tensors over {n} frames")
    return t.repeat_interleave(n // t.shape[0], dim=0)


def split_stack(stack: torch.Tensor, plan: ChannelPlan) -> dict:
    """Inverse of assemble: slice each component back out"""
    if stack.shape[1] != plan.total:
        raise ShapeError(f"stack has {stack.shape[1]} channels, plan expects {plan.total}")
    return {name: stack[:, s] for name, s in plan.slices().items()}


def downsample_mask(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """(B, 1, H, W) pixel mask -> binary (B, 1, H/f, W/f) by majority vote"""
    if mask.dim() == 3:
        mask = mask[None]
    if factor == 1:
        return (mask > 0.5).to(mask.dtype)
    return (F.avg_pool2d(mask.float(), factor) > 0.5).to(mask.dtype)


def encode_motion(encoder: DrivenEncoder, frames: torch.Tensor) -> torch.Tensor:
    return encoder.encode_motion(frames)


def align_to_latent(encoder: DrivenEncoder, raw: torch.Tensor,
                    size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    return encoder.align_to_latent(raw, size or tuple(raw.shape[-2:]))
