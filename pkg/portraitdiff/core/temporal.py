"""Temporal attention layers across the frame axis"""
import logging
import math
import re
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import torch
import torch.nn as nn
from einops import rearrange

from ..errors import ShapeError, TemporalInitError
from ..models.config import TemporalConfig
from .backbone import Attention, UNet

logger = logging.getLogger(__name__)


def frame_position_encoding(num_frames: int, dim: int) -> torch.Tensor:
    """Sinusoidal encoding of frame index, (F, dim)"""
    position = torch.arange(num_frames, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    pe = torch.zeros(num_frames, dim)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: dim // 2])
    return pe


class TemporalLayer(nn.Module):
    """x + Proj(Attn_time(x)): attention over frames at each spatial location"""

    def __init__(self, channels: int, heads: int, max_frames: int = 32):
        super().__init__()
        self.channels = channels
        self.max_frames = max_frames
        # Per-token norm keeps spatial positions independent
        self.norm = nn.LayerNorm(channels)
        self.proj_in = nn.Linear(channels, channels)
        self.attn = Attention(channels, heads)
        self.proj_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.proj_out.weight)
        nn.init.zeros_(self.proj_out.bias)
        self.register_buffer(
            'pos_encoding', frame_position_encoding(max_frames, channels), persistent=False
        )

    def forward(self, x: torch.Tensor, num_frames: int) -> torch.Tensor:
        n, c, h, w = x.shape
        if n % num_frames:
            raise ShapeError(f"batch {n} is not a multiple of num_frames={num_frames}")
        if num_frames > self.max_frames:
            raise ShapeError(f"{num_frames} frames exceed temporal max_frames={self.max_frames}")
        tokens = rearrange(x, '(b f) c h w -> (b h w) f c', f=num_frames)
        tokens = self.proj_in(self.norm(tokens)) + self.pos_encoding[:num_frames].to(tokens.dtype)
        out = self.proj_out(self.attn(tokens))
        out = rearrange(out, '(b h w) f c -> (b f) c h w', h=h, w=w)
        return x + out


def insert_temporal_layers(unet: UNet, config: Optional[TemporalConfig] = None, seed: int = 0) -> UNet:
    """Attach one TemporalLayer after every Res-Trans layer"""
    if unet.temporal_inserted:
        raise ValueError("temporal layers are already inserted")
    config = config or TemporalConfig()
    ref = unet.conv_in.weight
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for layer in unet.res_trans_layers():
            layer.temporal = TemporalLayer(
                layer.out_channels, config.attention_heads, config.max_frames
            ).to(device=ref.device, dtype=ref.dtype)
    unet.temporal_inserted = True
    logger.debug(f"Inserted {len(unet.res_trans_layers())} temporal layers")
    return unet


def is_temporal_name(name: str) -> bool:
    return name.startswith('temporal.') or '.temporal.' in name


def temporal_parameter_names(unet: UNet, prefix: str = '') -> List[str]:
    """Qualified names of every temporal parameter (the 'temporal' checkpoint group)"""
    return [prefix + n for n, _ in unet.named_parameters() if is_temporal_name(n)]


def temporal_state_dict(unet: UNet) -> Dict[str, torch.Tensor]:
    return {k: v for k, v in unet.state_dict().items() if is_temporal_name(k)}


def load_temporal_init(
    unet: UNet,
    source: Union[Path, str, Mapping[str, torch.Tensor]],
) -> UNet:
    """
    Replace temporal parameters from a shape-compatible source

    Args:
        unet: UNet with temporal layers inserted
        source: state dict keyed by UNet temporal names, or a file saved with torch.save

    Raises:
        TemporalInitError: listing every layer whose tensors are missing or mismatched
    """
    if not unet.temporal_inserted:
        raise ValueError("insert temporal layers before loading their initialization")
    if isinstance(source, (str, Path)):
        source = torch.load(Path(source), map_location='cpu', weights_only=True)

    own = temporal_state_dict(unet)
    mismatched = []
    for key, tensor in own.items():
        if key not in source:
            mismatched.append(f"{key}: missing from source")
        elif tuple(source[key].shape) != tuple(tensor.shape):
            mismatched.append(
                f"{key}: expected {tuple(tensor.shape)}, got {tuple(source[key].shape)}"
            )
    if mismatched:
        raise TemporalInitError(
            f"temporal init source does not fit {len(mismatched)} tensor(s):\n  "
            + "\n  ".join(mismatched),
            mismatched,
        )

    with torch.no_grad():
        params = dict(unet.named_parameters())
        for key in own:
            params[key].copy_(source[key])
    logger.info(f"Loaded {len(own)} temporal tensors")
    return unet


_MOTION_MODULE_KEY = re.compile(
    r'^(?P<block>down_blocks|up_blocks|mid_block)\.(?:(?P<i>\d+)\.)?motion_modules\.(?P<j>\d+)\.'
    r'temporal_transformer\.(?P<rest>.+)$'
)
_MOTION_MODULE_PARTS = {
    'norm.': 'norm.',
    'proj_in.': 'proj_in.',
    'proj_out.': 'proj_out.',
    'transformer_blocks.0.attention_blocks.0.to_q.': 'attn.to_q.',
    'transformer_blocks.0.attention_blocks.0.to_k.': 'attn.to_k.',
    'transformer_blocks.0.attention_blocks.0.to_v.': 'attn.to_v.',
    'transformer_blocks.0.attention_blocks.0.to_out.0.': 'attn.to_out.',
}


def map_motion_module_key(key: str, levels: int) -> Optional[str]:
    """
    Best-effort translation of a pretrained motion-module checkpoint key into a UNet temporal key

    Only the first attention block of each motion module has a counterpart. Both layouts order
    up blocks deepest first. Returns None when unmappable.
    """
    match = _MOTION_MODULE_KEY.match(key)
    if not match:
        return None
    rest = match['rest']
    for src, dst in _MOTION_MODULE_PARTS.items():
        if rest.startswith(src):
            tail = dst + rest[len(src):]
            break
    else:
        return None
    block, j = match['block'], match['j']
    if block == 'mid_block':
        return f"mid_layer.temporal.{tail}"
    i = int(match['i'])
    group = 'down_layers' if block == 'down_blocks' else 'up_layers'
    if i >= levels:
        return None
    return f"{group}.{i}.{j}.temporal.{tail}"
