"""Background-image context tokens (CLS + patches) for cross-attention"""
import logging
from typing import Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from ..errors import ShapeError
from ..models.config import ContextConfig

logger = logging.getLogger(__name__)


class BackgroundEncoder(nn.Module):
    """Patch-embedding transformer emitting a global CLS token followed by patch tokens"""

    def __init__(self, config: ContextConfig):
        super().__init__()
        self.config = config
        self.patch_embed = nn.Conv2d(3, config.width, config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.randn(1, 1, config.width) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, 1 + config.num_patches, config.width) * 0.02)
        layer = nn.TransformerEncoderLayer(
            config.width, config.heads, dim_feedforward=4 * config.width,
            dropout=0.0, activation='gelu', batch_first=True, norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(config.width)

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, H, W) -> cls (B, 1, width), patches (B, P, width)"""
        patches = rearrange(self.patch_embed(image), 'b c h w -> b (h w) c')
        if patches.shape[1] != self.config.num_patches:
            raise ShapeError(
                f"image yields {patches.shape[1]} patches, encoder expects {self.config.num_patches}"
            )
        cls = self.cls_token.expand(patches.shape[0], -1, -1)
        tokens = torch.cat([cls, patches], dim=1) + self.pos_embed
        tokens = self.norm(self.blocks(tokens))
        return tokens[:, :1], tokens[:, 1:]


class TokenMerger(nn.Module):
    """Linear projection of [cls; patches] to the cross-attention dim"""

    def __init__(self, width: int, context_dim: int):
        super().__init__()
        self.proj = nn.Linear(width, context_dim)
        if width == context_dim:
            nn.init.eye_(self.proj.weight)
            nn.init.zeros_(self.proj.bias)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.proj(tokens)


def merge_tokens(cls: torch.Tensor, patches: torch.Tensor, merger: TokenMerger) -> torch.Tensor:
    """Concatenate along the token axis, then project: (B, 1 + P, D)"""
    if cls.shape[-1] != patches.shape[-1]:
        raise ShapeError(f"cls dim {cls.shape[-1]} differs from patch dim {patches.shape[-1]}")
    return merger(torch.cat([cls, patches], dim=1))


class ImageEncoder(nn.Module):
    """Frozen background encoder + merger; produces the context tokens shared by both UNets"""

    def __init__(self, config: ContextConfig, context_dim: int):
        super().__init__()
        self.backbone = BackgroundEncoder(config)
        self.merger = TokenMerger(config.width, context_dim)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True) -> 'ImageEncoder':
        # Always in eval mode
        return super().train(False)

    def forward(self, reference: torch.Tensor, fg_mask: torch.Tensor) -> torch.Tensor:
        return encode_background(self, reference, fg_mask)


def encode_background(
    encoder: ImageEncoder,
    reference: torch.Tensor,
    fg_mask: torch.Tensor,
    image_size: Optional[int] = None,
) -> torch.Tensor:
    """
    Encode the background of a reference image

    Args:
        encoder: frozen image encoder
        reference: (3, H, W) or (B, 3, H, W) image in [0, 1]
        fg_mask: (1, H, W) or (B, 1, H, W) foreground mask, 1 = character

    Returns:
        Context tokens (B, 1 + P, D); token 0 is the global token
    """
    if reference.dim() == 3:
        reference = reference[None]
    if fg_mask.dim() == 3:
        fg_mask = fg_mask[None]
    if fg_mask.shape[0] != reference.shape[0] or fg_mask.shape[-2:] != reference.shape[-2:]:
        raise ShapeError(
            f"mask {tuple(fg_mask.shape)} is not aligned with reference {tuple(reference.shape)}"
        )
    size = image_size or encoder.backbone.config.image_size
    if tuple(reference.shape[-2:]) != (size, size):
        raise ShapeError(f"reference must be {size}x{size}, got {tuple(reference.shape[-2:])}")
    background = reference * (1 - fg_mask.to(reference.dtype))
    cls, patches = encoder.backbone(background)
    return merge_tokens(cls, patches, encoder.merger)
