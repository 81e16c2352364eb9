"""Multi-view feature lifting and query-based 3D instance segmentation on superpoints."""

from .config import RunConfig
from .pipeline import Predictions, infer
from .scene import SceneBundle, load_bundle, save_bundle
from .synth import GeneratorConfig, generate_synthetic

__all__ = [
    "GeneratorConfig",
    "Predictions",
    "RunConfig",
    "SceneBundle",
    "generate_synthetic",
    "infer",
    "load_bundle",
    "save_bundle",
]

__version__ = "0.1.0"
