"""dmapalign: invertible transformations between neural-network activation
spaces via diffusion maps with an anisotropic (Mahalanobis-style) kernel."""

from . import align, dmap, experiments, mahalanobis, nn, sampling, transform
from ._core import HAVE_COMPILED
from .align import OrthogonalMap, kabsch_align
from .dmap import DiffusionMapModel, fit
from .errors import DmapAlignError
from .nn import ArchitectureSpec, Mlp, TapSelection, TrainingConfig
from .sampling import Dataset, DiffeomorphismSpec, NeighborhoodSet
from .transform import NetworkTransform, apply_transform, build_transform, detect_fold, invert_transform

__version__ = "0.1.0"

__all__ = [
    "align",
    "dmap",
    "experiments",
    "mahalanobis",
    "nn",
    "sampling",
    "transform",
    "HAVE_COMPILED",
    "OrthogonalMap",
    "kabsch_align",
    "DiffusionMapModel",
    "fit",
    "DmapAlignError",
    "ArchitectureSpec",
    "Mlp",
    "TapSelection",
    "TrainingConfig",
    "Dataset",
    "DiffeomorphismSpec",
    "NeighborhoodSet",
    "NetworkTransform",
    "apply_transform",
    "build_transform",
    "detect_fold",
    "invert_transform",
    "__version__",
]
