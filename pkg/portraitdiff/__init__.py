"""
portraitdiff - conditional diffusion pipeline for raw-video driven portrait animation
"""

__version__ = "0.3.0"
__license__ = "MIT"

import os
import logging

# Configure logging based on PORTRAITDIFF_DEBUG
log_level = logging.DEBUG if os.environ.get("PORTRAITDIFF_DEBUG") else logging.INFO
logging.basicConfig(
    level=log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

from .core.config import ConfigManager
from .core.model import PortraitModel, build_model
from .core.trainer import Trainer
from .core.animate import animate

__all__ = [
    "ConfigManager",
    "PortraitModel",
    "build_model",
    "Trainer",
    "animate",
]
