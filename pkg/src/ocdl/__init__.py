"""Multimodal image reconstruction with jointly sparse convolutional
coding and online dictionary learning from streamed, noisy, subsampled
measurements."""

from .conv import BACKEND
from .types import (
    CoeffMaps,
    Dictionary,
    ImageStack,
    Measurements,
    SensingOp,
    SolverParams,
)

__all__ = [
    "BACKEND",
    "CoeffMaps",
    "Dictionary",
    "ImageStack",
    "Measurements",
    "SensingOp",
    "SolverParams",
]

__version__ = "0.1.0"
