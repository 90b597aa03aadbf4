"""Diversity-controlled multi-agent reinforcement learning toolkit."""

__version__ = "0.1.0"

from .diversity import (DiagGaussian, DistanceMatrix, ObservationSet,
                        behavioral_distance, pairwise_distance_matrix, snd,
                        wasserstein2)

__all__ = [
    "__version__",
    "DiagGaussian", "DistanceMatrix", "ObservationSet",
    "behavioral_distance", "pairwise_distance_matrix", "snd", "wasserstein2",
]
