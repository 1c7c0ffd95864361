"""Configuration models using Pydantic"""
from pydantic import BaseModel, Field, ConfigDict, model_validator
from typing import List, Literal, Optional, Tuple
from pathlib import Path

StageName = Literal['stage1', 'gaze_ft', 'stage2']


class CodecConfig(BaseModel):
    """Frame <-> latent codec selection"""
    codec_id: Literal['space_to_depth', 'learned_tiny'] = 'space_to_depth'
    factor: int = Field(default=4, ge=1)
    # Only used by learned_tiny; space_to_depth always yields 3 * factor**2
    latent_channels: int = Field(default=4, ge=1)
    scaling_factor: float = Field(default=1.0, gt=0.0)

    @property
    def channels(self) -> int:
        if self.codec_id == 'space_to_depth':
            return 3 * self.factor ** 2
        return self.latent_channels


class UNetConfig(BaseModel):
    """Denoising UNet topology"""
    base_channels: int = Field(default=32, gt=0)
    channel_multipliers: List[int] = Field(default_factory=lambda: [1, 2, 2])
    levels: int = Field(default=3, ge=2)
    attention_levels: Optional[List[bool]] = None
    layers_per_block: int = Field(default=1, ge=1)
    attention_heads: int = Field(default=4, ge=1)
    context_dim: int = Field(default=64, gt=0)
    latent_channels: int = Field(default=48, gt=0)
    extra_channels: int = Field(default=0, ge=0)
    norm_groups: int = Field(default=8, gt=0)
    sample_size: int = Field(default=16, gt=0)

    @model_validator(mode='after')
    def _check_levels(self) -> 'UNetConfig':
        if len(self.channel_multipliers) != self.levels:
            raise ValueError(
                f"channel_multipliers has {len(self.channel_multipliers)} entries "
                f"but levels={self.levels}"
            )
        if any(m <= 0 for m in self.channel_multipliers):
            raise ValueError("channel multipliers must be positive")
        if self.attention_levels is not None and len(self.attention_levels) != self.levels:
            raise ValueError("attention_levels must have one flag per level")
        for mult in self.channel_multipliers:
            if (self.base_channels * mult) % self.norm_groups:
                raise ValueError(
                    f"channel count {self.base_channels * mult} not divisible by "
                    f"norm_groups={self.norm_groups}"
                )
        return self

    @property
    def block_channels(self) -> List[int]:
        return [self.base_channels * m for m in self.channel_multipliers]

    def has_attention(self, level: int) -> bool:
        if self.attention_levels is None:
            return True
        return self.attention_levels[level]


class MotionConfig(BaseModel):
    """DrivenEncoder conv stack"""
    channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 128])
    kernel_size: int = 4
    stride: int = 2
    modulation_hidden: int = Field(default=256, gt=0)

    @property
    def out_channels(self) -> int:
        return self.channels[-1]


class TemporalConfig(BaseModel):
    """Temporal attention layers"""
    attention_heads: int = Field(default=4, ge=1)
    max_frames: int = Field(default=32, ge=1)


class ContextConfig(BaseModel):
    """Background image encoder"""
    patch_size: int = Field(default=8, gt=0)
    width: int = Field(default=64, gt=0)
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=4, ge=1)
    image_size: int = Field(default=64, gt=0)

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


class ScheduleConfig(BaseModel):
    """Linear-beta DDPM training schedule"""
    num_train_timesteps: int = Field(default=100, ge=1)
    beta_start: float = Field(default=1e-3, gt=0.0, lt=1.0)
    beta_end: float = Field(default=0.2, gt=0.0, lt=1.0)


class SamplerConfig(BaseModel):
    """DDIM-style sampler"""
    steps: int = Field(default=20, ge=1)
    eta: float = Field(default=0.0, ge=0.0)


class DataConfig(BaseModel):
    """Corpus, augmentation and perturbation settings"""
    corpus_path: Path = Path("corpus")
    image_size: int = Field(default=64, gt=0)
    n_videos: int = Field(default=8, ge=1)
    frames_per_video: int = Field(default=192, ge=1)
    p_gray: float = Field(default=0.2, ge=0.0, le=1.0)
    p_resize: float = Field(default=0.5, ge=0.0, le=1.0)
    scale_range: Tuple[float, float] = (0.8, 1.2)
    posterize_levels: int = Field(default=4, ge=2)
    gaze_top_fraction: float = Field(default=0.05, gt=0.0, le=1.0)
    num_workers: int = Field(default=0, ge=0)
    # Decoded clips kept per CorpusReader (and per DataLoader worker)
    clip_cache_size: int = Field(default=8, ge=0)


class StageConfig(BaseModel):
    """One training phase"""
    stage: StageName = 'stage1'
    stride: int = Field(default=2, ge=1)
    clip_length: int = Field(default=16, ge=1)
    proportions: Tuple[float, float, float] = (0.4, 0.1, 0.5)
    learning_rate: float = Field(default=1e-4, gt=0.0)
    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=1, ge=1)
    grad_accum_steps: int = Field(default=1, ge=1)
    max_grad_norm: Optional[float] = None
    log_every: int = Field(default=10, ge=1)
    gaze_filtered: bool = False
    temporal_init: Optional[Path] = None

    @model_validator(mode='after')
    def _check_proportions(self) -> 'StageConfig':
        if any(p < 0 for p in self.proportions):
            raise ValueError("mixture proportions must be non-negative")
        if abs(sum(self.proportions) - 1.0) > 1e-6:
            raise ValueError(f"mixture proportions {self.proportions} do not sum to 1")
        return self


class TrainingConfig(BaseModel):
    """The three training phases"""
    stage1: StageConfig = Field(default_factory=lambda: StageConfig(stage='stage1'))
    gaze_ft: StageConfig = Field(
        default_factory=lambda: StageConfig(stage='gaze_ft', stride=12, gaze_filtered=True)
    )
    stage2: StageConfig = Field(default_factory=lambda: StageConfig(stage='stage2'))

    def for_stage(self, stage: str) -> StageConfig:
        return getattr(self, stage)


class InferenceConfig(BaseModel):
    """Sliding-window animation settings"""
    window: int = Field(default=16, ge=1)
    overlap: int = Field(default=8, ge=0)
    seed: int = 0
    appearance_transfer: bool = False
    appearance_plugin: str = 'color_match'
    stochastic: bool = False
    max_workers: int = Field(default=1, ge=1)

    @model_validator(mode='after')
    def _check_overlap(self) -> 'InferenceConfig':
        if self.overlap >= self.window:
            raise ValueError(f"overlap {self.overlap} must be smaller than window {self.window}")
        return self


class RunConfig(BaseModel):
    """Main run configuration"""
    model_config = ConfigDict(extra='forbid')

    profile: Literal['toy', 'full'] = 'toy'
    seed: int = 0
    device: str = 'cpu'
    workdir: Path = Path("runs")

    codec: CodecConfig = Field(default_factory=CodecConfig)
    unet: UNetConfig = Field(default_factory=UNetConfig)
    motion: MotionConfig = Field(default_factory=MotionConfig)
    temporal: TemporalConfig = Field(default_factory=TemporalConfig)
    context: ContextConfig = Field(default_factory=ContextConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)

    @model_validator(mode='after')
    def _check_profile_dims(self) -> 'RunConfig':
        size = self.data.image_size
        if size % self.codec.factor:
            raise ValueError(
                f"data.image_size={size} not divisible by codec factor {self.codec.factor}"
            )
        if self.unet.latent_channels != self.codec.channels:
            raise ValueError(
                f"unet.latent_channels={self.unet.latent_channels} does not match "
                f"codec channels {self.codec.channels}"
            )
        if self.unet.sample_size != size // self.codec.factor:
            raise ValueError(
                f"unet.sample_size={self.unet.sample_size} does not match latent side "
                f"{size // self.codec.factor}"
            )
        if self.context.image_size != size:
            raise ValueError("context.image_size must equal data.image_size")
        if size % self.context.patch_size:
            raise ValueError("data.image_size must be divisible by context.patch_size")
        max_frames = self.temporal.max_frames
        if self.inference.window > max_frames:
            raise ValueError(
                f"inference.window={self.inference.window} exceeds temporal.max_frames={max_frames}"
            )
        stage2 = self.training.stage2.clip_length
        if stage2 > max_frames:
            raise ValueError(
                f"training.stage2.clip_length={stage2} exceeds temporal.max_frames={max_frames}"
            )
        return self
