"""Frame <-> latent codecs"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Type

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError
from ..models.config import CodecConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatentVolume:
    """Latent activations (F, C_lat, H/f, W/f) with the codec factor that produced them"""
    data: torch.Tensor
    factor: int

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ShapeError(f"LatentVolume expects (F, C, h, w), got {tuple(self.data.shape)}")
        if self.data.shape[0] < 1:
            raise ShapeError("LatentVolume needs at least one frame")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def spatial(self) -> tuple:
        return tuple(self.data.shape[-2:])


def check_frames(frames: torch.Tensor, factor: int) -> None:
    """Validate an (F, 3, H, W) frame stack in [0, 1]"""
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ShapeError(f"frames must be (F, 3, H, W), got {tuple(frames.shape)}")
    h, w = frames.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(
            f"frame size {h}x{w} is not divisible by codec downscale factor {factor}"
        )
    if not torch.isfinite(frames).all():
        raise ShapeError("frames contain non-finite values")
    if frames.min() < 0 or frames.max() > 1:
        raise ShapeError("frame pixels must lie in [0, 1]")


class Codec:
    """Base class: encode frames to LatentVolume and back"""

    codec_id: str = ""

    def __init__(self, factor: int, latent_channels: int, scaling_factor: float = 1.0):
        self.factor = factor
        self.latent_channels = latent_channels
        self.scaling_factor = scaling_factor

    @classmethod
    def from_config(cls, config: CodecConfig) -> "Codec":
        return cls(config.factor, config.latent_channels, config.scaling_factor)

    def encode(self, frames: torch.Tensor) -> LatentVolume:
        check_frames(frames, self.factor)
        latent = self._encode(frames)
        if latent.shape[1] != self.latent_channels:
            raise ShapeError(
                f"{self.codec_id} produced {latent.shape[1]} channels, "
                f"declared {self.latent_channels}"
            )
        if self.scaling_factor != 1.0:
            latent = latent * self.scaling_factor
        return LatentVolume(latent, self.factor)

    def decode(self, latent: LatentVolume) -> torch.Tensor:
        data = latent.data if isinstance(latent, LatentVolume) else latent
        if data.dim() != 4 or data.shape[1] != self.latent_channels:
            raise ShapeError(
                f"{self.codec_id} expects {self.latent_channels} latent channels, "
                f"got shape {tuple(data.shape)}"
            )
        if self.scaling_factor != 1.0:
            data = data / self.scaling_factor
        return self._decode(data)

    def _encode(self, frames: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class SpaceToDepthCodec(Codec):
    """Lossless rearrangement codec: f x f pixel blocks become channels"""

    codec_id = "space_to_depth"

    def __init__(self, factor: int = 4, scaling_factor: float = 1.0):
        super().__init__(factor, 3 * factor * factor, scaling_factor)

    @classmethod
    def from_config(cls, config: CodecConfig) -> "SpaceToDepthCodec":
        return cls(config.factor, config.scaling_factor)

    def _encode(self, frames: torch.Tensor) -> torch.Tensor:
        return F.pixel_unshuffle(frames, self.factor)

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        return F.pixel_shuffle(latent, self.factor)


class TinyAutoencoder(nn.Module):
    """Small conv autoencoder, stride = factor (power of two)"""

    def __init__(self, factor: int, latent_channels: int, width: int = 32):
        super().__init__()
        n_down = factor.bit_length() - 1
        if 2 ** n_down != factor:
            raise ValueError(f"learned_tiny codec needs a power-of-two factor, got {factor}")

        enc: List[nn.Module] = [nn.Conv2d(3, width, 3, padding=1), nn.SiLU()]
        for _ in range(n_down):
            enc += [nn.Conv2d(width, width, 4, stride=2, padding=1), nn.SiLU()]
        enc.append(nn.Conv2d(width, latent_channels, 3, padding=1))
        self.encoder = nn.Sequential(*enc)

        dec: List[nn.Module] = [nn.Conv2d(latent_channels, width, 3, padding=1), nn.SiLU()]
        for _ in range(n_down):
            dec += [nn.ConvTranspose2d(width, width, 4, stride=2, padding=1), nn.SiLU()]
        dec.append(nn.Conv2d(width, 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(self.encoder(frames)))


class LearnedTinyCodec(Codec):
    """Trained tiny autoencoder codec (lossy)"""

    codec_id = "learned_tiny"

    def __init__(self, factor: int = 8, latent_channels: int = 4, scaling_factor: float = 1.0):
        super().__init__(factor, latent_channels, scaling_factor)
        self.net = TinyAutoencoder(factor, latent_channels)
        self.net.requires_grad_(False).eval()

    def _encode(self, frames: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.net.encoder(frames.to(next(self.net.parameters()).dtype))

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return torch.sigmoid(self.net.decoder(latent)).clamp(0.0, 1.0)

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return self.net.state_dict()

    def load_state_dict(self, state: Dict[str, torch.Tensor]) -> None:
        self.net.load_state_dict(state)


def train_codec(
    codec: LearnedTinyCodec,
    frames: torch.Tensor,
    steps: int = 500,
    lr: float = 1e-3,
    batch_size: int = 8,
    seed: int = 0,
) -> List[float]:
    """
    Pre-train the tiny autoencoder on a frame stack

    Args:
        codec: codec whose network is trained in place
        frames: (N, 3, H, W) training frames in [0, 1]
        steps: optimizer steps
        lr: Adam learning rate
        batch_size: frames per step
        seed: sampling seed

    Returns:
        Reconstruction MSE per step
    """
    check_frames(frames, codec.factor)
    generator = torch.Generator().manual_seed(seed)
    net = codec.net
    net.requires_grad_(True).train()
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    history = []

    for step in range(steps):
        idx = torch.randint(0, frames.shape[0], (min(batch_size, frames.shape[0]),),
                            generator=generator)
        batch = frames[idx]
        loss = F.mse_loss(net(batch), batch)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(loss.item())
        if step % 100 == 0:
            logger.debug(f"codec step {step}: mse={history[-1]:.5f}")

    net.requires_grad_(False).eval()
    return history


def reconstruction_mse(codec: Codec, frames: torch.Tensor) -> float:
    return F.mse_loss(codec.decode(codec.encode(frames)), frames).item()


CODECS: Dict[str, Type[Codec]] = {
    SpaceToDepthCodec.codec_id: SpaceToDepthCodec,
    LearnedTinyCodec.codec_id: LearnedTinyCodec,
}


def build_codec(config: CodecConfig) -> Codec:
    """Instantiate the codec selected in config"""
    codec_cls = CODECS.get(config.codec_id)
    if codec_cls is None:
        available = ", ".join(sorted(CODECS))
        raise ValueError(f"Unknown codec: {config.codec_id} (available: {available})")
    return codec_cls.from_config(config)


def encode(frames: torch.Tensor, codec: Codec) -> LatentVolume:
    return codec.encode(frames)


def decode(latent: LatentVolume, codec: Codec) -> torch.Tensor:
    return codec.decode(latent)
