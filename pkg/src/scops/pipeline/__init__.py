from .config import DEFAULTS, ConfigError, TrainConfig, load_config
from .manifest import CollectionManifest, ManifestError, ManifestRecord, build_manifest
from .synthetic import generate_synthetic
from .train import TrainingAborted, train
from .infer import infer
from .evaluate import evaluate

__all__ = [
    "DEFAULTS",
    "ConfigError",
    "TrainConfig",
    "load_config",
    "CollectionManifest",
    "ManifestError",
    "ManifestRecord",
    "build_manifest",
    "generate_synthetic",
    "TrainingAborted",
    "train",
    "infer",
    "evaluate",
]
