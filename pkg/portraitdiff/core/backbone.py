"""Denoising UNet built from Res-Trans layers"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..errors import ShapeError, SiteError
from ..models.config import UNetConfig

logger = logging.getLogger(__name__)

BlockKind = Literal['down', 'mid', 'up']


@dataclass(frozen=True)
class AttentionSite:
    """Position of one spatial attention block inside the UNet"""
    site_id: str
    block_kind: BlockKind
    level: int
    resolution: int
    channels: int


def timestep_embedding(timesteps: torch.Tensor, dim: int, max_period: int = 10000) -> torch.Tensor:
    """Sinusoidal timestep embedding, (N,) -> (N, dim)"""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32, device=timesteps.device) / half
    )
    args = timesteps.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class Attention(nn.Module):
    """Multi-head attention; keys/values from x, a context sequence, or x plus reference tokens"""

    def __init__(self, query_dim: int, heads: int, context_dim: Optional[int] = None):
        super().__init__()
        if query_dim % heads:
            raise ValueError(f"query_dim {query_dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (query_dim // heads) ** -0.5
        kv_dim = context_dim or query_dim
        self.to_q = nn.Linear(query_dim, query_dim, bias=False)
        self.to_k = nn.Linear(kv_dim, query_dim, bias=False)
        self.to_v = nn.Linear(kv_dim, query_dim, bias=False)
        self.to_out = nn.Linear(query_dim, query_dim)
        # (query tokens, key/value tokens) of the most recent call
        self.last_lengths: Optional[Tuple[int, int]] = None

    def forward(
        self,
        x: torch.Tensor,
        context: Optional[torch.Tensor] = None,
        reference: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        kv = x if context is None else context
        if reference is not None:
            if context is not None:
                raise ValueError("reference tokens only apply to self-attention")
            kv = torch.cat([x, broadcast_batch(reference, x.shape[0])], dim=1)

        q = rearrange(self.to_q(x), 'b n (h d) -> b h n d', h=self.heads)
        k = rearrange(self.to_k(kv), 'b n (h d) -> b h n d', h=self.heads)
        v = rearrange(self.to_v(kv), 'b n (h d) -> b h n d', h=self.heads)

        scores = torch.einsum('bhid,bhjd->bhij', q, k) * self.scale
        out = torch.einsum('bhij,bhjd->bhid', scores.softmax(dim=-1), v)
        self.last_lengths = (x.shape[1], kv.shape[1])
        return self.to_out(rearrange(out, 'b h n d -> b n (h d)'))


def broadcast_batch(t: torch.Tensor, n: int) -> torch.Tensor:
    """Repeat a per-sample tensor over the frames folded into the batch axis"""
    if t.shape[0] == n:
        return t
    if n % t.shape[0]:
        raise ShapeError(f"cannot broadcast batch {t.shape[0]} over {n} rows")
    return t.repeat_interleave(n // t.shape[0], dim=0)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransformerBlock(nn.Module):
    """Self-attention (reference-aware), cross-attention on context tokens, feed-forward"""

    def __init__(self, dim: int, heads: int, context_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn1 = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.attn2 = Attention(dim, heads, context_dim=context_dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        reference: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        normed = self.norm1(x)
        x = x + self.attn1(normed, reference=reference)
        x = x + self.attn2(self.norm2(x), context=context)
        x = x + self.ff(self.norm3(x))
        return x, normed


class SpatialTransformer(nn.Module):
    """GroupNorm + token projection around one TransformerBlock"""

    def __init__(self, channels: int, heads: int, context_dim: int, groups: int, site: AttentionSite):
        super().__init__()
        self.site = site
        self.norm = nn.GroupNorm(groups, channels, eps=1e-6)
        self.proj_in = nn.Linear(channels, channels)
        self.block = TransformerBlock(channels, heads, context_dim)
        self.proj_out = nn.Linear(channels, channels)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        reference: Optional[torch.Tensor] = None,
        capture: Optional[Dict[str, torch.Tensor]] = None,
    ) -> torch.Tensor:
        _, _, h, w = x.shape
        tokens = rearrange(self.norm(x), 'n c h w -> n (h w) c')
        tokens, normed = self.block(self.proj_in(tokens), context, reference)
        if capture is not None:
            capture[self.site.site_id] = normed
        out = rearrange(self.proj_out(tokens), 'n (h w) c -> n c h w', h=h, w=w)
        return x + out


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch, eps=1e-6)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch, eps=1e-6)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class ResTransLayer(nn.Module):
    """Residual conv block followed by an optional attention block and temporal layer slot"""

    def __init__(self, res: ResBlock, attn: Optional[SpatialTransformer], layer_id: str):
        super().__init__()
        self.layer_id = layer_id
        self.res = res
        self.attn = attn
        self.temporal: Optional[nn.Module] = None

    @property
    def out_channels(self) -> int:
        return self.res.conv2.out_channels

    def forward(
        self,
        x: torch.Tensor,
        temb: torch.Tensor,
        context: torch.Tensor,
        num_frames: int,
        reference: Optional[torch.Tensor] = None,
        capture: Optional[Dict[str, torch.Tensor]] = None,
    ) -> torch.Tensor:
        x = self.res(x, temb)
        if self.attn is not None:
            x = self.attn(x, context, reference=reference, capture=capture)
        if self.temporal is not None:
            x = self.temporal(x, num_frames)
        return x


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2.0, mode='nearest'))


class UNet(nn.Module):
    """Down / mid / up UNet with cross-attention on context tokens"""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        self.conv_in_expanded = False
        self.temporal_inserted = False

        chs = config.block_channels
        groups = config.norm_groups
        temb_dim = chs[0] * 4
        self.time_embed = nn.Sequential(
            nn.Linear(chs[0], temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim)
        )
        self.conv_in = nn.Conv2d(config.latent_channels, chs[0], 3, padding=1)

        def make_attn(channels: int, kind: BlockKind, level: int, site_id: str):
            if kind != 'mid' and not config.has_attention(level):
                return None
            site = AttentionSite(site_id, kind, level, config.sample_size // 2 ** level, channels)
            return SpatialTransformer(channels, config.attention_heads, config.context_dim, groups, site)

        # Down path
        self.down_layers = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        skip_chs = [chs[0]]
        in_ch = chs[0]
        for level, out_ch in enumerate(chs):
            layers = nn.ModuleList()
            for i in range(config.layers_per_block):
                site_id = f"down.{level}.{i}"
                layers.append(ResTransLayer(
                    ResBlock(in_ch, out_ch, temb_dim, groups),
                    make_attn(out_ch, 'down', level, site_id),
                    site_id,
                ))
                in_ch = out_ch
                skip_chs.append(out_ch)
            self.down_layers.append(layers)
            if level < len(chs) - 1:
                self.downsamplers.append(Downsample(out_ch))
                skip_chs.append(out_ch)

        # Mid
        last = len(chs) - 1
        self.mid_layer = ResTransLayer(
            ResBlock(in_ch, in_ch, temb_dim, groups),
            make_attn(in_ch, 'mid', last, "mid.0"),
            "mid.0",
        )
        self.mid_res = ResBlock(in_ch, in_ch, temb_dim, groups)

        # Up path
        self.up_layers = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for level in reversed(range(len(chs))):
            out_ch = chs[level]
            layers = nn.ModuleList()
            for i in range(config.layers_per_block + 1):
                site_id = f"up.{level}.{i}"
                layers.append(ResTransLayer(
                    ResBlock(in_ch + skip_chs.pop(), out_ch, temb_dim, groups),
                    make_attn(out_ch, 'up', level, site_id),
                    site_id,
                ))
                in_ch = out_ch
            self.up_layers.append(layers)
            if level > 0:
                self.upsamplers.append(Upsample(out_ch))

        self.norm_out = nn.GroupNorm(groups, in_ch, eps=1e-6)
        self.conv_out = nn.Conv2d(in_ch, config.latent_channels, 3, padding=1)

    # ── site bookkeeping ──────────────────────────

    def res_trans_layers(self) -> List[ResTransLayer]:
        """All Res-Trans layers in construction order (down, mid, up)"""
        layers: List[ResTransLayer] = []
        for group in self.down_layers:
            layers.extend(group)
        layers.append(self.mid_layer)
        for group in self.up_layers:
            layers.extend(group)
        return layers

    def attention_sites(self) -> List[AttentionSite]:
        return [l.attn.site for l in self.res_trans_layers() if l.attn is not None]

    def injectable_site_ids(self) -> List[str]:
        return [s.site_id for s in self.attention_sites() if s.block_kind in ('mid', 'up')]

    def site_module(self, site_id: str) -> SpatialTransformer:
        for layer in self.res_trans_layers():
            if layer.attn is not None and layer.attn.site.site_id == site_id:
                return layer.attn
        raise SiteError(f"Unknown attention site '{site_id}'")

    @property
    def in_channels(self) -> int:
        return self.conv_in.in_channels

    # ── forward ───────────────────────────────────

    def forward(
        self,
        sample: torch.Tensor,
        timestep: Any,
        context: torch.Tensor,
        reference_bank: Optional[Mapping[str, torch.Tensor]] = None,
        num_frames: Optional[int] = None,
        capture: Optional[Dict[str, torch.Tensor]] = None,
    ) -> torch.Tensor:
        """
        Predict noise for a stack of frames

        Args:
            sample: (N, C_lat + C_extra, h, w); N = clips * frames
            timestep: scalar, (clips,) or (N,) timesteps
            context: (T, D) or (clips, T, D) context tokens
            reference_bank: site_id -> (clips, tokens, dim) reference features (mid/up only)
            num_frames: frames per clip (defaults to N, one clip)
            capture: if given, filled with pre-self-attention tokens of mid/up sites

        Returns:
            (N, C_lat, h, w) noise prediction
        """
        if sample.dim() != 4 or sample.shape[1] != self.in_channels:
            raise ShapeError(
                f"UNet expects {self.in_channels} input channels, got shape {tuple(sample.shape)}"
            )
        n = sample.shape[0]
        num_frames = num_frames or n
        if n % num_frames:
            raise ShapeError(f"batch {n} is not a multiple of num_frames={num_frames}")
        down_factor = 2 ** (self.config.levels - 1)
        if sample.shape[-1] % down_factor or sample.shape[-2] % down_factor:
            raise ShapeError(f"latent size {tuple(sample.shape[-2:])} not divisible by {down_factor}")

        timesteps = torch.as_tensor(timestep, device=sample.device).reshape(-1)
        if timesteps.numel() == 1:
            timesteps = timesteps.expand(n)
        timesteps = broadcast_batch(timesteps, n)
        if (timesteps < 0).any():
            raise ValueError("timesteps must be non-negative")

        if context.dim() == 2:
            context = context[None]
        context = broadcast_batch(context, n)

        bank = dict(reference_bank or {})
        allowed = set(self.injectable_site_ids())
        unknown = set(bank) - allowed
        if unknown:
            raise SiteError(f"reference_bank has entries for non-injectable sites: {sorted(unknown)}")

        temb = self.time_embed(timestep_embedding(timesteps, self.config.base_channels).to(sample.dtype))
        h = self.conv_in(sample)
        skips = [h]

        for level, layers in enumerate(self.down_layers):
            for layer in layers:
                h = layer(h, temb, context, num_frames)
                skips.append(h)
            if level < len(self.downsamplers):
                h = self.downsamplers[level](h)
                skips.append(h)

        h = self.mid_layer(h, temb, context, num_frames,
                           reference=bank.get("mid.0"), capture=capture)
        h = self.mid_res(h, temb)

        for idx, layers in enumerate(self.up_layers):
            for layer in layers:
                h = torch.cat([h, skips.pop()], dim=1)
                h = layer(h, temb, context, num_frames,
                          reference=bank.get(layer.layer_id), capture=capture)
            if idx < len(self.upsamplers):
                h = self.upsamplers[idx](h)

        return self.conv_out(F.silu(self.norm_out(h)))


def build_unet(config: UNetConfig, seed: int = 0) -> UNet:
    """Build a UNet with seeded initialization; expands conv-in when config asks for extra channels"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        unet = UNet(config.model_copy(update={'extra_channels': 0}))
    if config.extra_channels:
        expand_conv_in(unet, config.extra_channels)
    logger.debug(f"Built UNet: {count_parameters(unet):,} parameters, "
                 f"{len(unet.attention_sites())} attention sites")
    return unet


def expand_conv_in(unet: UNet, extra_channels: int) -> UNet:
    """Widen conv-in by extra_channels; existing weights kept bitwise, new weights zero"""
    if unet.conv_in_expanded:
        raise ValueError("conv-in has already been expanded")
    if extra_channels < 0:
        raise ValueError("extra_channels must be non-negative")
    old = unet.conv_in
    new = nn.Conv2d(
        old.in_channels + extra_channels, old.out_channels,
        old.kernel_size, stride=old.stride, padding=old.padding,
    ).to(device=old.weight.device, dtype=old.weight.dtype)
    with torch.no_grad():
        new.weight.zero_()
        new.weight[:, :old.in_channels] = old.weight
        new.bias.copy_(old.bias)
    unet.conv_in = new
    unet.conv_in_expanded = True
    unet.config = unet.config.model_copy(update={'extra_channels': extra_channels})
    return unet


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def import_weights(module: nn.Module, state_dict: Mapping[str, torch.Tensor]) -> Dict[str, List[str]]:
    """
    Load shape-compatible tensors from an external state dict

    Returns:
        Report with 'loaded', 'missing', 'unexpected' and 'mismatched' key lists
    """
    own = module.state_dict()
    report: Dict[str, List[str]] = {'loaded': [], 'missing': [], 'unexpected': [], 'mismatched': []}
    compatible = {}
    for key, value in state_dict.items():
        if key not in own:
            report['unexpected'].append(key)
        elif own[key].shape != value.shape:
            report['mismatched'].append(
                f"{key}: expected {tuple(own[key].shape)}, got {tuple(value.shape)}"
            )
        else:
            compatible[key] = value
            report['loaded'].append(key)
    report['missing'] = [k for k in own if k not in state_dict]
    module.load_state_dict(compatible, strict=False)
    if report['mismatched']:
        logger.warning(f"import_weights skipped {len(report['mismatched'])} mismatched tensors")
    return report
