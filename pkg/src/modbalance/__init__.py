"""Balanced multimodal conversation training at desk scale.

The package trains a three-modality (text / audio / visual) utterance
classifier whose training loop actively counteracts modality imbalance:
tensor-ring feature weighting, cosine-normalized modality fusion, and
discrepancy-ratio gradient modulation with optional Gaussian exploration
noise on the encoder updates.
"""

from .errors import (
    ConfigError,
    DatasetError,
    DivergenceError,
    ModBalanceError,
    ShapeError,
)
from .tensor import Tensor

__all__ = [
    "ConfigError",
    "DatasetError",
    "DivergenceError",
    "ModBalanceError",
    "ShapeError",
    "Tensor",
]

__version__ = "0.1.0"
