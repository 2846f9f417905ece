"""Collaborative Kalman filter for time-evolving dyadic data.

Each row and column entity carries a Gaussian belief over a latent vector
that drifts as a Brownian motion; events on a dyad update both beliefs by
mean-field coordinate ascent, and the drift rates themselves follow learned
geometric Brownian motions.
"""

from .belief import (
    DriftMode,
    DriftScope,
    EntityId,
    GaussianBelief,
    ModelConfig,
    Side,
    commit_posterior,
    init_belief,
    propagate,
)
from .engine import CollaborativeKalmanFilter
from .inference import DyadEvent, EventDiagnostics, QState
from .kernels import DEFAULT_BACKEND, compiled_available
from .probit import Partition, build_partition, class_of, class_prob, trunc_norm_mean

__version__ = "0.1.0"

__all__ = [
    "CollaborativeKalmanFilter",
    "DEFAULT_BACKEND",
    "DriftMode",
    "DriftScope",
    "DyadEvent",
    "EntityId",
    "EventDiagnostics",
    "GaussianBelief",
    "ModelConfig",
    "Partition",
    "QState",
    "Side",
    "build_partition",
    "class_of",
    "class_prob",
    "commit_posterior",
    "compiled_available",
    "init_belief",
    "propagate",
    "trunc_norm_mean",
]
