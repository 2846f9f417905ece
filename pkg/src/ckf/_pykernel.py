"""Pure-Python event kernel.

Chains the public coordinate updates into the per-event sweep loop.  The
compiled kernel in ``_ckernel.pyx`` implements the same contract; see
:func:`event_update` for the argument list shared by both.
"""

from __future__ import annotations

import math

import numpy as np

from .belief import EIG_FLOOR, DriftMode, GaussianBelief, propagate
from .drift import EigenCache, drift_update
from .inference import QState, _cell_update_q_y, _elbo_cell, compute_elbo, update_q_u, update_q_w

_MODES = (DriftMode.NONE, DriftMode.FIXED, DriftMode.GBM)


class _Side:
    """Prior/posterior bookkeeping for one of the two entities."""

    def __init__(self, mean, cov, dt, a, prec, gamma, learn, frozen, mode, fixed_alpha):
        self.frozen = frozen
        self.dt = dt
        self.a_prev = a
        self.a = a
        self.prec = prec
        self.gamma = gamma
        self.learn = learn and not frozen and dt > 0
        self.mode = mode
        self.fixed_alpha = fixed_alpha
        if frozen:
            self.prev = GaussianBelief(mean.copy(), cov.copy(), 0.0)
            self.cache = None
        else:
            lam, Q = np.linalg.eigh(cov)
            if lam[0] < EIG_FLOOR:
                lam = np.maximum(lam, EIG_FLOOR)
                cov = (Q * lam) @ Q.T
                cov = 0.5 * (cov + cov.T)
            self.prev = GaussianBelief(mean.copy(), cov.copy(), 0.0)
            self.cache = EigenCache(lam, Q, np.zeros_like(lam), np.zeros((lam.size, lam.size)), dt)
        self.reprior()

    def reprior(self):
        if self.frozen:
            self.prior = self.prev
        else:
            self.prior = propagate(self.prev, self.a, self.dt, self.mode, self.fixed_alpha)

    def move_drift(self, post: GaussianBelief):
        if not self.learn:
            return
        self.cache.refresh(post, self.prior.mean)
        # a Brownian prior with c * dt_a = 1 / prec has exactly this anchor term
        c, dta = (1.0 / self.prec, 1.0) if self.prec > 0 else (0.0, 0.0)
        a_new = drift_update(self.a, self.cache, self.a_prev, c, dta, self.gamma)
        if a_new != self.a:
            self.a = a_new
            self.reprior()

    def prior_logpdf_a(self):
        if self.learn:
            return -0.5 * self.prec * (self.a - self.a_prev) ** 2
        return 0.0


def event_update(
    mu_u, cov_u, mu_w, cov_w,
    dt_u, dt_w,
    mode, fixed_alpha,
    a_u, prec_u, gamma_u, learn_u,
    a_w, prec_w, gamma_w, learn_w,
    frozen_u, frozen_w,
    ordinal, obs, lo, hi, sigma,
    iters, tol,
    elbo_out,
):
    """Run up to ``iters`` coordinate sweeps for one event.

    ``mu_*`` / ``cov_*`` hold the previous posteriors on entry and are
    overwritten with the new posteriors.  ``mode`` is 0/1/2 for no drift,
    fixed drift, learned drift.  ``elbo_out[k]`` receives the objective
    after sweep ``k``, including the anchor term ``-prec/2 (a - a_start)^2``
    of each drift being learned; ``gamma_*`` scales that drift's Newton
    step.

    Returns ``(a_u, a_w, iterations_run, converged, E[y])``.
    """
    mode = _MODES[int(mode)]
    su = _Side(mu_u, cov_u, dt_u, a_u, prec_u, gamma_u, learn_u, frozen_u, mode, fixed_alpha)
    sw = _Side(mu_w, cov_w, dt_w, a_w, prec_w, gamma_w, learn_w, frozen_w, mode, fixed_alpha)
    q = QState(su.prior.copy(), sw.prior.copy(), ey=obs, m_ij=0.0)
    converged = False
    n = 0
    for n in range(1, iters + 1):
        old_u, old_w = q.q_u.mean, q.q_w.mean
        if ordinal:
            q = _cell_update_q_y(q, lo, hi, sigma)
        q = update_q_u(q, su.prior, sigma)
        q = update_q_w(q, sw.prior, sigma)
        su.move_drift(q.q_u)
        sw.move_drift(q.q_w)
        if ordinal:
            elbo = _elbo_cell(q, su.prior, sw.prior, sigma, lo, hi)
        else:
            elbo = compute_elbo(q, su.prior, sw.prior, sigma, y=obs)
        elbo_out[n - 1] = elbo + su.prior_logpdf_a() + sw.prior_logpdf_a()
        move = max(float(np.max(np.abs(q.q_u.mean - old_u))), float(np.max(np.abs(q.q_w.mean - old_w))))
        if move < tol:
            converged = True
            break
    if not frozen_u:
        mu_u[:] = q.q_u.mean
        cov_u[:] = q.q_u.cov
    if not frozen_w:
        mu_w[:] = q.q_w.mean
        cov_w[:] = q.q_w.cov
    return su.a, sw.a, n, converged, float(q.ey)
