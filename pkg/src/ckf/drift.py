"""Point estimation of the log-drift Brownian motion ``a(t)``.

The drift ``exp(a)`` sets how much an entity's covariance inflates per unit
time.  For one entity and one event the part of the variational objective
that depends on ``a`` is

    f(a) = -1/2 sum_d [ln(lam_d + e^a dt) + s_d / (lam_d + e^a dt)]
           - (a - a_prev)^2 / (2 c dt_a)

where ``lam_d`` are the eigenvalues of the entity's previous posterior
covariance and ``s_d = v_d^2 + M_dd`` are the squared mean shift and the
posterior covariance projected onto the matching eigenvectors.  ``a`` is
moved by a clamped Newton step on this function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .belief import EIG_FLOOR, GaussianBelief

MAX_STEP = 1.0
CURVATURE_GUARD = 1e-8
A_MIN = -40.0
A_MAX = 15.0


class DriftScopeKind:
    PER_ENTITY = "per-entity"
    SHARED_ROW = "shared-row"
    SHARED_COL = "shared-col"


@dataclass
class DriftProcess:
    """State of one log-drift process.

    ``updates`` counts the events at which the process was moved; with
    ``c == 0`` the Newton step is damped by ``1 / updates``.
    """

    a: float
    c: float
    last_time: float
    scope: str = DriftScopeKind.PER_ENTITY
    updates: int = 0

    @property
    def rate(self) -> float:
        return math.exp(self.a)


@dataclass
class EigenCache:
    eigvals: np.ndarray
    eigvecs: np.ndarray
    v: np.ndarray
    M: np.ndarray
    dt: float

    @property
    def s(self) -> np.ndarray:
        return self.v**2 + np.diag(self.M)

    def refresh(self, curr_posterior: GaussianBelief, prior_mean: np.ndarray) -> None:
        """Recompute ``v`` and ``M`` after the owning entity's q was updated."""
        Q = self.eigvecs
        self.v = (curr_posterior.mean - prior_mean) @ Q
        self.M = Q.T @ curr_posterior.cov @ Q


def eig_floor(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam, Q = np.linalg.eigh(cov)
    return np.maximum(lam, EIG_FLOOR), Q


def build_eigen_cache(
    prev_posterior: GaussianBelief,
    curr_posterior: GaussianBelief,
    prior_mean: np.ndarray,
    dt: float,
) -> EigenCache:
    """Eigendecomposition of the previous posterior covariance plus projections.

    Eigenvalues below ``EIG_FLOOR`` are raised to it.
    """
    if not dt > 0:
        raise ValueError("drift cache needs positive elapsed time")
    try:
        lam, Q = eig_floor(prev_posterior.cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"eigendecomposition failed: {exc}") from exc
    cache = EigenCache(lam, Q, np.empty(0), np.empty((0, 0)), float(dt))
    cache.refresh(curr_posterior, prior_mean)
    return cache


def anchor_precision(c: float, dt_a: float) -> float:
    """Precision ``1 / (c dt_a)`` of the Brownian prior on ``a``; 0 when there is none."""
    return 1.0 / (c * dt_a) if c > 0 and dt_a > 0 else 0.0


def _lik_terms(a, cache):
    ea_dt = math.exp(a) * cache.dt
    den = cache.eigvals + ea_dt
    eta = ea_dt / den
    ratio = cache.s / den
    f = -0.5 * float(np.sum(np.log(den) + cache.s / den))
    f1 = -0.5 * float(np.sum(eta * (1.0 - ratio)))
    f2 = -0.5 * float(np.sum(eta * (1.0 - eta))) + 0.5 * float(np.sum(eta * (1.0 - 2.0 * eta) * ratio))
    return f, f1, f2


def drift_objective(a: float, cache: EigenCache, a_prev: float, c: float, dt_a: float) -> float:
    """Drift-dependent part of the objective, up to a constant.

    The prior term is dropped when ``c == 0``.
    """
    k = anchor_precision(c, dt_a)
    return _lik_terms(a, cache)[0] - 0.5 * k * (a - a_prev) ** 2


def drift_derivatives(a: float, cache: EigenCache, a_prev: float, c: float, dt_a: float) -> tuple[float, float]:
    """First and second derivatives of :func:`drift_objective` in ``a``."""
    k = anchor_precision(c, dt_a)
    _, f1, f2 = _lik_terms(a, cache)
    return f1 - k * (a - a_prev), f2 - k


def drift_newton_step(a_eval: float, f1: float, f2: float) -> float:
    """Newton update ``a - f1/f2``, only on concave curvature and clamped to +-1."""
    if not f2 < -CURVATURE_GUARD:
        return a_eval
    step = -f1 / f2
    step = min(max(step, -MAX_STEP), MAX_STEP)
    return a_eval + step


def shared_drift_accumulate(
    contributions: Iterable[tuple[float, float]],
    prior: tuple[float, float] = (0.0, 0.0),
) -> tuple[float, float] | None:
    """Sum per-entity likelihood derivatives for a shared process.

    ``prior`` holds the prior's ``(f1, f2)`` contribution, added once.
    Returns ``None`` for an empty list.
    """
    items = list(contributions)
    if not items:
        return None
    f1 = sum(c[0] for c in items) + prior[0]
    f2 = sum(c[1] for c in items) + prior[1]
    return f1, f2


def drift_update(
    a_cur: float,
    cache: EigenCache,
    a_prev: float,
    c: float,
    dt_a: float,
    gamma: float = 1.0,
) -> float:
    """One guarded ascent step on :func:`drift_objective`.

    The clamped Newton step is scaled by ``gamma`` and then halved until the
    objective does not decrease; ``a`` stays within ``[A_MIN, A_MAX]``.
    """
    f1, f2 = drift_derivatives(a_cur, cache, a_prev, c, dt_a)
    step = gamma * (drift_newton_step(a_cur, f1, f2) - a_cur)
    step = min(max(a_cur + step, A_MIN), A_MAX) - a_cur
    if step == 0.0:
        return a_cur
    f0 = drift_objective(a_cur, cache, a_prev, c, dt_a)
    for _ in range(40):
        if drift_objective(a_cur + step, cache, a_prev, c, dt_a) >= f0:
            return a_cur + step
        step *= 0.5
    return a_cur
