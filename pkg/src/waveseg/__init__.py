"""Anatomy-guided spatial-frequency coronary segmentation toolkit.

A self-contained CPU implementation: a small reverse-mode autodiff engine,
orthonormal 3D Haar wavelet transforms, the attention/wavelet network
blocks, synthetic vessel phantoms, and the training/evaluation pipeline.
Compute-heavy 3D convolutions run through a compiled C backend when it is
available, with a pure numpy fallback (see waveseg.backend.BACKEND).
"""

__version__ = "0.1.0"

from .backend import BACKEND, has_compiled
from .errors import (ConfigError, DimensionError, FormatError,
                     TrainingDiverged, UsageError, WavesegError)
from .network import NetworkConfig, WaveSegNet

__all__ = [
    "__version__",
    "BACKEND",
    "has_compiled",
    "NetworkConfig",
    "WaveSegNet",
    "WavesegError",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "UsageError",
    "TrainingDiverged",
]
