"""Core functionality"""
from .config import ConfigManager
from .codec import build_codec, encode, decode
from .backbone import build_unet, expand_conv_in
from .refnet import extract_reference_features, inject
from .temporal import insert_temporal_layers, load_temporal_init
from .model import PortraitModel, build_model
from .schedule import NoiseSchedule, DDIMSampler
from .trainer import Trainer, diffusion_loss, trainable_params
from .animate import animate, plan_windows, blend_windows, generate_window
from .audit import run_audit

__all__ = [
    "ConfigManager",
    "build_codec",
    "encode",
    "decode",
    "build_unet",
    "expand_conv_in",
    "extract_reference_features",
    "inject",
    "insert_temporal_layers",
    "load_temporal_init",
    "PortraitModel",
    "build_model",
    "NoiseSchedule",
    "DDIMSampler",
    "Trainer",
    "diffusion_loss",
    "trainable_params",
    "animate",
    "plan_windows",
    "blend_windows",
    "generate_window",
    "run_audit",
]
