"""Full portrait animation model: denoiser, ReferenceNet, motion and context encoders"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import torch
import torch.nn as nn

from ..errors import CheckpointError
from ..models.config import RunConfig
from .backbone import UNet, build_unet, count_parameters
from .codec import Codec, LearnedTinyCodec, build_codec
from .context import ImageEncoder
from .motion import (
    ChannelPlan, ConditioningBundle, DrivenEncoder, ModulationParams, ReferenceModulator,
    assemble, downsample_mask, modulate,
)
from .refnet import ReferenceFeatureBank, build_refnet, extract_reference_features
from .temporal import insert_temporal_layers, is_temporal_name

logger = logging.getLogger(__name__)

PARAMETER_GROUPS = (
    'driven_encoder', 'denoising_unet', 'reference_net', 'image_encoder', 'temporal', 'codec',
)


@dataclass
class ReferenceState:
    """Per-reference conditioning, computed once and reused for every window and step"""
    ref_latent: torch.Tensor         # (B, C_lat, h, w)
    fg_mask: torch.Tensor            # (B, 1, h, w)
    context_tokens: torch.Tensor     # (B, 1 + P, D)
    modulation: ModulationParams
    bank: ReferenceFeatureBank


class PortraitModel(nn.Module):
    """All trainable and frozen networks of the pipeline"""

    def __init__(
        self,
        config: RunConfig,
        codec: Codec,
        unet: UNet,
        refnet: UNet,
        driven_encoder: DrivenEncoder,
        modulator: ReferenceModulator,
        image_encoder: ImageEncoder,
    ):
        super().__init__()
        self.config = config
        self.codec = codec
        self.unet = unet
        self.refnet = refnet
        self.driven_encoder = driven_encoder
        self.modulator = modulator
        self.image_encoder = image_encoder
        # Registered so device moves and hashing include the learned codec
        self.codec_net = codec.net if isinstance(codec, LearnedTinyCodec) else None
        self.plan = ChannelPlan(latent=config.codec.channels, motion=config.motion.out_channels)

    @property
    def latent_size(self) -> Tuple[int, int]:
        side = self.config.data.image_size // self.config.codec.factor
        return side, side

    @property
    def has_temporal(self) -> bool:
        return self.unet.temporal_inserted

    def insert_temporal(self, seed: Optional[int] = None) -> None:
        insert_temporal_layers(self.unet, self.config.temporal,
                               seed=self.config.seed if seed is None else seed)

    # ── parameter groups ──────────────────────────

    @staticmethod
    def group_of(name: str) -> str:
        """Checkpoint group owning a qualified parameter/buffer name"""
        if name.startswith(('driven_encoder.', 'modulator.')):
            return 'driven_encoder'
        if name.startswith('unet.'):
            return 'temporal' if is_temporal_name(name) else 'denoising_unet'
        if name.startswith('refnet.'):
            return 'reference_net'
        if name.startswith('image_encoder.'):
            return 'image_encoder'
        if name.startswith('codec_net.'):
            return 'codec'
        raise KeyError(f"parameter '{name}' belongs to no group")

    def parameter_groups(self) -> Dict[str, List[str]]:
        groups: Dict[str, List[str]] = {g: [] for g in PARAMETER_GROUPS}
        for name, _ in self.named_parameters():
            groups[self.group_of(name)].append(name)
        return groups

    def group_state_dict(self, group: str) -> Dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items() if self.group_of(k) == group}

    def load_group_state_dict(self, group: str, state: Mapping[str, torch.Tensor]) -> None:
        expected = set(self.group_state_dict(group))
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if missing or unexpected:
            raise CheckpointError(
                f"group '{group}' does not match the model: "
                f"missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        self.load_state_dict(dict(state), strict=False)

    # ── conditioning & denoising ──────────────────

    def prepare_reference(
        self,
        reference: torch.Tensor,
        fg_mask: torch.Tensor,
        detach: bool = True,
    ) -> ReferenceState:
        """
        Encode a reference image once

        Args:
            reference: (3, H, W) or (B, 3, H, W) reference frames in [0, 1]
            fg_mask: matching (1, H, W) or (B, 1, H, W) foreground mask
            detach: inference mode; training keeps the graph through the ReferenceNet
        """
        if reference.dim() == 3:
            reference = reference[None]
        if fg_mask.dim() == 3:
            fg_mask = fg_mask[None]
        ref_latent = self.codec.encode(reference).data
        context = self.image_encoder(reference, fg_mask)
        bank = extract_reference_features(self.refnet, ref_latent, context, detach=detach)
        return ReferenceState(
            ref_latent=ref_latent,
            fg_mask=downsample_mask(fg_mask, self.config.codec.factor),
            context_tokens=context,
            modulation=self.modulator(reference),
            bank=bank,
        )

    def condition(self, driving: torch.Tensor, state: ReferenceState) -> ConditioningBundle:
        """Masked driving frames (N, 3, H, W) -> ConditioningBundle at latent resolution"""
        motion = self.driven_encoder(driving, self.latent_size)
        motion = modulate(motion, state.modulation)
        return ConditioningBundle(motion, state.ref_latent, state.fg_mask, state.context_tokens)

    def predict_noise(
        self,
        noisy: torch.Tensor,
        timestep: torch.Tensor,
        bundle: ConditioningBundle,
        state: ReferenceState,
        num_frames: Optional[int] = None,
    ) -> torch.Tensor:
        stack = assemble(noisy, bundle)
        return self.unet(stack, timestep, bundle.context_tokens,
                         reference_bank=state.bank, num_frames=num_frames)

    def summary(self) -> Dict[str, int]:
        groups = self.parameter_groups()
        params = dict(self.named_parameters())
        return {g: sum(params[n].numel() for n in names) for g, names in groups.items()}


def build_model(config: RunConfig, seed: Optional[int] = None) -> PortraitModel:
    """Build every network with seeded initialization"""
    seed = config.seed if seed is None else seed
    codec = build_codec(config.codec)
    plan = ChannelPlan(latent=config.codec.channels, motion=config.motion.out_channels)

    unet = build_unet(config.unet.model_copy(update={'extra_channels': plan.extra}), seed=seed)
    # Same seed: the ReferenceNet starts as a copy of the denoiser
    refnet = build_refnet(config.unet, seed=seed)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        driven_encoder = DrivenEncoder(config.motion)
        modulator = ReferenceModulator(config.motion)
        image_encoder = ImageEncoder(config.context, config.unet.context_dim)

    model = PortraitModel(config, codec, unet, refnet, driven_encoder, modulator, image_encoder)
    model.to(config.device)
    logger.debug(f"Built model: {count_parameters(model):,} parameters, conv-in {unet.in_channels}")
    return model
