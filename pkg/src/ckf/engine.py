"""The streaming engine: beliefs, drift processes and per-event updates."""

from __future__ import annotations

import numpy as np

from .belief import (
    BeliefStore,
    DriftMode,
    DriftScope,
    EntityId,
    GaussianBelief,
    ModelConfig,
    Side,
    init_belief,
    propagate,
)
from .drift import DriftProcess, DriftScopeKind, anchor_precision
from .errors import TimeOrderError
from .inference import DyadEvent, EventDiagnostics
from .kernels import DEFAULT_BACKEND, get_kernel

_MODE_CODE = {DriftMode.NONE: 0, DriftMode.FIXED: 1, DriftMode.GBM: 2}


class CollaborativeKalmanFilter:
    """Sequential dyadic filter.

    Events must be fed in non-decreasing time order.  Entities are created on
    first sight, in index order, from the engine's seeded generator.

    Parameters
    ----------
    config : ModelConfig
    backend : {"compiled", "python"}, optional
        Event kernel to use; defaults to the compiled one when available.
    """

    def __init__(self, config: ModelConfig, backend: str | None = None):
        self.config = config
        self.backend = backend or DEFAULT_BACKEND
        self._kernel = get_kernel(self.backend)
        self.store = BeliefStore(config.latent_dim)
        self.rng = np.random.default_rng(config.seed)
        self.entity_drifts: dict[Side, list[DriftProcess]] = {Side.ROW: [], Side.COL: []}
        self.shared_drifts: dict[Side, DriftProcess | None] = {Side.ROW: None, Side.COL: None}
        self._elbo = np.empty(config.iters)
        self._partition_cells = None
        if config.partition is not None:
            self._partition_cells = [config.partition.cell(k) for k in range(1, config.partition.m + 1)]

    # -- entities -----------------------------------------------------------

    def create(self, eid: EntityId, t: float) -> None:
        self.store.add(eid, init_belief(self.config, self.rng, t))
        self._new_drift(eid, t)

    def clamp(self, eid: EntityId, mean, t: float = 0.0) -> None:
        """Add an entity held fixed at ``mean`` (zero covariance, never updated)."""
        d = self.config.latent_dim
        self.store.add(eid, GaussianBelief(np.asarray(mean, dtype=float).copy(), np.zeros((d, d)), t), frozen=True)
        self._new_drift(eid, t)

    def ensure(self, eid: EntityId, t: float) -> None:
        """Create ``eid`` (and any lower unseen indices on its side) at time ``t``."""
        for k in range(self.store.size(eid.side), eid.index + 1):
            self.create(EntityId(eid.side, k), t)

    def _new_drift(self, eid, t):
        if self.config.drift_mode is not DriftMode.GBM:
            return
        c = self.config.c(eid.side)
        if self.config.scope(eid.side) is DriftScope.ENTITY:
            self.entity_drifts[eid.side].append(DriftProcess(self.config.init_log_drift, c, t, DriftScopeKind.PER_ENTITY))
        elif self.shared_drifts[eid.side] is None:
            kind = DriftScopeKind.SHARED_ROW if eid.side is Side.ROW else DriftScopeKind.SHARED_COL
            self.shared_drifts[eid.side] = DriftProcess(self.config.init_log_drift, c, t, kind)

    def drift_process(self, eid: EntityId) -> DriftProcess | None:
        if self.config.drift_mode is not DriftMode.GBM:
            return None
        if self.config.scope(eid.side) is DriftScope.ENTITY:
            return self.entity_drifts[eid.side][eid.index]
        return self.shared_drifts[eid.side]

    def belief(self, eid: EntityId) -> GaussianBelief:
        return self.store.get(eid)

    def prior(self, eid: EntityId, t: float) -> GaussianBelief:
        """Belief propagated to time ``t`` under the current drift."""
        b = self.store.get(eid)
        if self.store.is_frozen(eid):
            return GaussianBelief(b.mean, b.cov, t)
        proc = self.drift_process(eid)
        a = proc.a if proc is not None else 0.0
        return propagate(b, a, t, self.config.drift_mode, self.config.fixed_alpha)

    # -- events -------------------------------------------------------------

    def _drift_args(self, eid, t, dt):
        proc = self.drift_process(eid)
        if proc is None:
            return proc, 0.0, 0.0, 1.0, False
        dta = t - proc.last_time
        if dta < 0:
            raise TimeOrderError(f"time {t} precedes drift process update at {proc.last_time}")
        learn = dt > 0 and not self.store.is_frozen(eid) and (proc.c == 0 or dta > 0)
        # without a prior (c == 0) the step is damped by 1 / n instead
        gamma = 1.0 if proc.c > 0 else 1.0 / (proc.updates + 1)
        return proc, proc.a, anchor_precision(proc.c, dta), gamma, learn

    def process_event(self, event: DyadEvent) -> EventDiagnostics:
        """Fold one observation into the two entities' beliefs and drifts."""
        cfg = self.config
        t = event.t
        u, w = event.row, event.col
        self.ensure(u, t)
        self.ensure(w, t)
        su, sw = self.store.side(Side.ROW), self.store.side(Side.COL)
        i, j = u.index, w.index
        dt_u = t - su.last_time[i]
        dt_w = t - sw.last_time[j]
        if dt_u < 0 or dt_w < 0:
            raise TimeOrderError(f"event at {t} precedes last update of {u if dt_u < 0 else w}")
        pu, a_u, k_u, g_u, learn_u = self._drift_args(u, t, dt_u)
        pw, a_w, k_w, g_w, learn_w = self._drift_args(w, t, dt_w)
        if self._partition_cells is not None:
            lo, hi = self._partition_cells[int(event.obs) - 1]
            ordinal, obs = True, 0.0
        else:
            lo, hi = 0.0, 0.0
            ordinal, obs = False, float(event.obs)
        a_u_new, a_w_new, n_iter, converged, ey = self._kernel(
            su.means[i], su.covs[i], sw.means[j], sw.covs[j],
            dt_u, dt_w,
            _MODE_CODE[cfg.drift_mode], cfg.fixed_alpha,
            a_u, k_u, g_u, learn_u,
            a_w, k_w, g_w, learn_w,
            bool(su.frozen[i]), bool(sw.frozen[j]),
            ordinal, obs, lo, hi, cfg.obs_sigma,
            cfg.iters, cfg.tol,
            self._elbo,
        )
        su.last_time[i] = t
        sw.last_time[j] = t
        su.counts[i] += 1
        sw.counts[j] += 1
        updates = []
        for eid, proc, a_new, learn in ((u, pu, a_u_new, learn_u), (w, pw, a_w_new, learn_w)):
            if proc is None:
                continue
            proc.last_time = t
            if learn:
                proc.a = a_new
                proc.updates += 1
                updates.append((eid, proc))
        return EventDiagnostics(self._elbo[:n_iter].copy(), n_iter, converged, ey, updates)
