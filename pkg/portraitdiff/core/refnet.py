"""ReferenceNet feature extraction and injection"""
import logging
from types import MappingProxyType
from typing import Dict, Iterator, Mapping

import torch

from ..errors import ShapeError, SiteError
from .backbone import Attention, UNet, build_unet
from .codec import LatentVolume
from ..models.config import UNetConfig

logger = logging.getLogger(__name__)


class ReferenceFeatureBank(Mapping):
    """Immutable site_id -> (1, tokens, dim) map of pre-self-attention reference features"""

    def __init__(self, features: Dict[str, torch.Tensor], detach: bool = True):
        if detach:
            features = {k: v.detach() for k, v in features.items()}
        self._features = MappingProxyType(dict(features))

    def __getitem__(self, site_id: str) -> torch.Tensor:
        return self._features[site_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._features)

    def __len__(self) -> int:
        return len(self._features)

    def validate(self, unet: UNet) -> None:
        """Check keys are exactly the mid/up sites and token dims match the denoiser"""
        expected = set(unet.injectable_site_ids())
        if set(self) != expected:
            raise SiteError(
                f"bank sites {sorted(self)} differ from injectable sites {sorted(expected)}"
            )
        for site_id, feat in self.items():
            channels = unet.site_module(site_id).site.channels
            if feat.shape[-1] != channels:
                raise ShapeError(
                    f"bank entry '{site_id}' has dim {feat.shape[-1]}, site expects {channels}"
                )


def build_refnet(config: UNetConfig, seed: int = 0) -> UNet:
    """ReferenceNet: same architecture as the denoiser, fed the bare reference latent"""
    return build_unet(config.model_copy(update={'extra_channels': 0}), seed=seed)


def extract_reference_features(
    refnet: UNet,
    ref_latent: LatentVolume,
    context_tokens: torch.Tensor,
    detach: bool = True,
) -> ReferenceFeatureBank:
    """
    Run the ReferenceNet once on a clean reference latent (timestep 0)

    Args:
        refnet: ReferenceNet UNet
        ref_latent: single-frame latent (1, C_lat, h, w); a batched (B, C_lat, h, w) tensor
            is accepted for training where every clip has its own reference
        context_tokens: background tokens shared with the denoiser
        detach: drop the autograd graph (inference); training keeps it

    Returns:
        Bank keyed by the mid and up attention site ids
    """
    data = ref_latent.data if isinstance(ref_latent, LatentVolume) else ref_latent
    if isinstance(ref_latent, LatentVolume) and ref_latent.frames != 1:
        raise ShapeError(f"reference latent must have a single frame, got {ref_latent.frames}")
    capture: Dict[str, torch.Tensor] = {}
    timestep = torch.zeros(data.shape[0], dtype=torch.long, device=data.device)
    refnet(data, timestep, context_tokens, num_frames=1, capture=capture)
    return ReferenceFeatureBank(capture, detach=detach)


def inject(attn: Attention, x: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Self-attention with queries from x and keys/values from concat(x, reference)"""
    if x.shape[-1] != reference.shape[-1]:
        raise ShapeError(
            f"reference token dim {reference.shape[-1]} differs from feature dim {x.shape[-1]}"
        )
    return attn(x, reference=reference)
