"""Predictive class distributions and point predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import GaussianBelief
from .probit import Partition, class_probs


@dataclass(frozen=True)
class ClassDistribution:
    probs: np.ndarray
    labels: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.labels),):
            raise ValueError("one probability per label expected")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "probs", p)


def predict_plugin(q_u: GaussianBelief, q_w: GaussianBelief, partition: Partition, sigma: float) -> ClassDistribution:
    """Class probabilities at the dot product of the two posterior means."""
    return ClassDistribution(class_probs(float(q_u.mean @ q_w.mean), sigma, partition), partition.labels)


def _sqrt_cov(cov: np.ndarray) -> np.ndarray:
    lam, Q = np.linalg.eigh(cov)
    return Q * np.sqrt(np.clip(lam, 0.0, None))


def predict_mc(
    q_u: GaussianBelief,
    q_w: GaussianBelief,
    partition: Partition,
    sigma: float,
    S: int,
    rng: np.random.Generator,
) -> ClassDistribution:
    """Monte Carlo average of class probabilities over draws of ``(u, w)``.

    Each draw contributes its exact class probabilities rather than a sampled
    class, which keeps the estimator unbiased with lower variance.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    if not np.any(q_u.cov) and not np.any(q_w.cov):
        return predict_plugin(q_u, q_w, partition, sigma)
    d = q_u.dim
    u = q_u.mean + rng.standard_normal((S, d)) @ _sqrt_cov(q_u.cov).T
    w = q_w.mean + rng.standard_normal((S, d)) @ _sqrt_cov(q_w.cov).T
    dots = np.einsum("sd,sd->s", u, w)
    probs = class_probs(dots, sigma, partition).mean(axis=0)
    return ClassDistribution(probs / probs.sum(), partition.labels)


def expected_rating(dist: ClassDistribution) -> float:
    return float(np.dot(dist.labels, dist.probs))


def predict_real(q_u: GaussianBelief, q_w: GaussianBelief) -> float:
    """Point prediction in observed-y mode: the dot product of the means."""
    return float(q_u.mean @ q_w.mean)
