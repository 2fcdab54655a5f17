"""Pareto-optimal risk sharing with one rank-dependent utility agent."""

from .distortion import (
    ConfigurationError,
    Conjugate,
    EndpointSingularity,
    Hurwicz,
    Linear,
    Mixture,
    Prelec,
    Rescaled,
    Shape,
    ShapeReport,
    TverskyKahneman,
    WeightingFunction,
    classify,
    conjugate,
)

__version__ = "0.1.0"
