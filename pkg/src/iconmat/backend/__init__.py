from .base import AttentionScale, FeatureBundle, FeatureScale
from .diffusion import DiffusionBackend, DiffusionConfig
from .dumps import DumpBackend, load_bundle, save_bundle
from .schedule import NoiseSchedule, add_noise
from .toy import ToyBackend, ToyConfig

__all__ = [
    "AttentionScale",
    "FeatureBundle",
    "FeatureScale",
    "DiffusionBackend",
    "DiffusionConfig",
    "DumpBackend",
    "load_bundle",
    "save_bundle",
    "NoiseSchedule",
    "add_noise",
    "ToyBackend",
    "ToyConfig",
]
