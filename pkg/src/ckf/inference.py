"""Per-event mean-field updates for one dyad.

For an event on dyad ``(u, w)`` the posterior over ``(u, w, y)`` is
approximated by ``q(u) q(w) q(y)``; ``q(u)`` and ``q(w)`` are Gaussian and
``q(y)`` is a normal truncated to the observed class cell (or a point mass
when ``y`` itself is observed).  The functions here are single coordinate
updates; :mod:`ckf.engine` chains them into sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .belief import EntityId, GaussianBelief, Side
from .probit import Partition, trunc_norm_mean, trunc_norm_moments

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DyadEvent:
    """One observation.  ``obs`` is a 1-based class in ordinal mode, else the value."""

    row: EntityId
    col: EntityId
    t: float
    obs: float

    def __post_init__(self):
        if self.row.side is not Side.ROW or self.col.side is not Side.COL:
            raise ValueError("event needs a row entity and a column entity")
        if not math.isfinite(self.t):
            raise ValueError("event time must be finite")


@dataclass
class QState:
    q_u: GaussianBelief
    q_w: GaussianBelief
    ey: float = 0.0
    m_ij: float = 0.0


@dataclass
class EventDiagnostics:
    elbo_trace: np.ndarray
    iterations_run: int
    converged: bool
    ey: float = math.nan
    drift_updates: list = field(default_factory=list)


def _is_point_mass(b: GaussianBelief) -> bool:
    return not np.any(b.cov)


def _cell_update_q_y(q: QState, lo: float, hi: float, sigma: float) -> QState:
    m = float(q.q_u.mean @ q.q_w.mean)
    return replace(q, m_ij=m, ey=trunc_norm_mean(m, sigma, lo, hi))


def update_q_y(q: QState, partition: Partition, sigma: float, z: int) -> QState:
    """Truncated-normal update: center at the dot product of the current means."""
    lo, hi = partition.cell(z)
    return _cell_update_q_y(q, lo, hi, sigma)


def _gaussian_update(prior: GaussianBelief, other: GaussianBelief, ey: float, sigma: float) -> GaussianBelief:
    if _is_point_mass(prior):
        return prior.copy()
    s2 = sigma * sigma
    prior_prec = np.linalg.inv(prior.cov)
    prec = prior_prec + (np.outer(other.mean, other.mean) + other.cov) / s2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (ey * other.mean / s2 + prior_prec @ prior.mean)
    return GaussianBelief(mean, cov, prior.last_time)


def update_q_u(q: QState, prior_u: GaussianBelief, sigma: float) -> QState:
    """Gaussian update of ``q(u)`` given the current ``q(w)`` and ``E[y]``.

    A prior with all-zero covariance is a clamped point mass and is returned
    unchanged.
    """
    return replace(q, q_u=_gaussian_update(prior_u, q.q_w, q.ey, sigma))


def update_q_w(q: QState, prior_w: GaussianBelief, sigma: float) -> QState:
    return replace(q, q_w=_gaussian_update(prior_w, q.q_u, q.ey, sigma))


def gaussian_kl(q: GaussianBelief, p: GaussianBelief) -> float:
    """``KL(q || p)``; zero when ``p`` is a clamped point mass."""
    if _is_point_mass(p):
        return 0.0
    d = q.dim
    p_inv = np.linalg.inv(p.cov)
    diff = q.mean - p.mean
    _, logdet_p = np.linalg.slogdet(p.cov)
    _, logdet_q = np.linalg.slogdet(q.cov)
    return 0.5 * (float(np.sum(p_inv * q.cov)) + float(diff @ p_inv @ diff) - d + logdet_p - logdet_q)


def expected_sq_residual(q: QState, ey: float, ey2: float) -> float:
    """``E_q[(y - <u, w>)^2]`` given the first two moments of ``y``."""
    su = q.q_u.cov + np.outer(q.q_u.mean, q.q_u.mean)
    sw = q.q_w.cov + np.outer(q.q_w.mean, q.q_w.mean)
    return ey2 - 2.0 * ey * float(q.q_u.mean @ q.q_w.mean) + float(np.sum(su * sw))


def compute_elbo(
    q: QState,
    prior_u: GaussianBelief,
    prior_w: GaussianBelief,
    sigma: float,
    partition: Partition | None = None,
    z: int | None = None,
    y: float | None = None,
) -> float:
    """Closed-form variational objective for one event.

    Ordinal mode (``partition`` and ``z`` given): ``q(y)`` is the normal
    centered at ``q.m_ij`` truncated to the cell of ``z``.  Observed mode:
    pass ``y``.
    """
    if partition is not None:
        lo, hi = partition.cell(z)
        return _elbo_cell(q, prior_u, prior_w, sigma, lo, hi)
    if y is None:
        raise ValueError("observed mode needs y")
    lik = -0.5 * (LOG_2PI + 2.0 * math.log(sigma)) - expected_sq_residual(q, y, y * y) / (2.0 * sigma * sigma)
    return lik - gaussian_kl(q.q_u, prior_u) - gaussian_kl(q.q_w, prior_w)


def _elbo_cell(q, prior_u, prior_w, sigma, lo, hi):
    ey, var, ent = trunc_norm_moments(q.m_ij, sigma, lo, hi)
    lik = -0.5 * (LOG_2PI + 2.0 * math.log(sigma)) - expected_sq_residual(q, ey, var + ey * ey) / (2.0 * sigma * sigma)
    return lik + ent - gaussian_kl(q.q_u, prior_u) - gaussian_kl(q.q_w, prior_w)
