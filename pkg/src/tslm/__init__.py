"""Text and time-series fusion language models at desk scale."""

from .backbone import Backbone, BackboneConfig, ContextOverflowError, CorruptCheckpointError
from .config import FusionConfig
from .crossattn import FlamingoModel
from .softprompt import SoftPromptModel
from .timeseries import PatchConfig, TimeSeries, normalize

__all__ = [
    "Backbone", "BackboneConfig", "ContextOverflowError", "CorruptCheckpointError",
    "FusionConfig", "FlamingoModel", "SoftPromptModel", "PatchConfig", "TimeSeries", "normalize",
]
__version__ = "0.1.0"
