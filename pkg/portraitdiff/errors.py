"""Domain exceptions"""


class ConfigError(ValueError):
    """Invalid or unparsable run configuration"""


class ShapeError(ValueError):
    """Tensor dimensions violate a module contract"""


class SiteError(KeyError):
    """Unknown or disallowed attention site"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StageOrderError(RuntimeError):
    """Checkpoint carries the wrong prerequisite stage"""


class CheckpointError(FileNotFoundError):
    """Missing or corrupt checkpoint directory"""


class FreezeViolationError(RuntimeError):
    """A parameter outside the trainable set changed during a stage"""


class TemporalInitError(ValueError):
    """Temporal initialization source does not fit the model"""

    def __init__(self, message: str, mismatched: list[str]):
        super().__init__(message)
        self.mismatched = mismatched


class ClipTooShortError(ValueError):
    """Video cannot provide the requested clip span"""


class PluginError(KeyError):
    """Unknown perturbation plugin"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class CoverageError(ValueError):
    """Window outputs leave frames uncovered"""
