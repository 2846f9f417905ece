"""Per-entity Gaussian beliefs, model configuration and the belief store."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import ConfigError, DuplicateEntityError, InvariantError, TimeOrderError
from .probit import Partition

EIG_FLOOR = 1e-10
SYM_RTOL = 1e-12


class Side(str, enum.Enum):
    ROW = "row"
    COL = "col"

    @property
    def other(self) -> "Side":
        return Side.COL if self is Side.ROW else Side.ROW


@dataclass(frozen=True, order=True)
class EntityId:
    side: Side
    index: int

    def __post_init__(self):
        object.__setattr__(self, "side", Side(self.side))
        if self.index < 0:
            raise ValueError("entity index must be nonnegative")


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    last_time: float

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy(), self.last_time)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class DriftMode(str, enum.Enum):
    NONE = "none"
    FIXED = "fixed"
    GBM = "gbm"


class DriftScope(str, enum.Enum):
    ENTITY = "entity"
    SHARED = "shared"


@dataclass(frozen=True)
class ModelConfig:
    """Model hyperparameters.

    ``partition=None`` selects observed-y (real-valued) mode.  ``c_row`` /
    ``c_col`` are the Brownian variance rates of the log-drift processes;
    ``init_log_drift`` is their starting value.
    """

    latent_dim: int = 10
    obs_sigma: float = 1.76
    drift_mode: DriftMode = DriftMode.GBM
    fixed_alpha: float = 0.0
    row_scope: DriftScope = DriftScope.SHARED
    col_scope: DriftScope = DriftScope.SHARED
    c_row: float = 0.0
    c_col: float = 0.0
    init_log_drift: float = -5.0
    partition: Partition | None = None
    iters: int = 5
    tol: float = 1e-6
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "drift_mode", DriftMode(self.drift_mode))
        object.__setattr__(self, "row_scope", DriftScope(self.row_scope))
        object.__setattr__(self, "col_scope", DriftScope(self.col_scope))
        if int(self.latent_dim) < 1:
            raise ConfigError("latent_dim must be >= 1")
        if not self.obs_sigma > 0:
            raise ConfigError("obs_sigma must be > 0")
        if int(self.iters) < 1:
            raise ConfigError("iters must be >= 1")
        if self.c_row < 0 or self.c_col < 0:
            raise ConfigError("drift variance rates must be nonnegative")
        if self.drift_mode is DriftMode.FIXED and not self.fixed_alpha >= 0:
            raise ConfigError("fixed drift must be nonnegative")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")

    @property
    def ordinal(self) -> bool:
        return self.partition is not None

    def scope(self, side: Side) -> DriftScope:
        return self.row_scope if side is Side.ROW else self.col_scope

    def c(self, side: Side) -> float:
        return self.c_row if side is Side.ROW else self.c_col

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("drift_mode", "row_scope", "col_scope"):
            d[k] = getattr(self, k).value
        d["partition"] = None if self.partition is None else self.partition.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("partition") is not None:
            d["partition"] = Partition.from_dict(d["partition"])
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def init_belief(config: ModelConfig, rng: np.random.Generator, t: float) -> GaussianBelief:
    """Fresh belief: standard-normal mean (times ``init_scale``), identity covariance."""
    d = config.latent_dim
    mean = config.init_scale * rng.standard_normal(d)
    return GaussianBelief(mean, np.eye(d), float(t))


def drift_rate(config: ModelConfig, log_drift: float) -> float:
    if config.drift_mode is DriftMode.NONE:
        return 0.0
    if config.drift_mode is DriftMode.FIXED:
        return config.fixed_alpha
    return math.exp(log_drift)


def propagate(
    belief: GaussianBelief,
    log_drift: float,
    t: float,
    mode: DriftMode = DriftMode.GBM,
    fixed_alpha: float = 0.0,
) -> GaussianBelief:
    """Prior at ``t``: covariance grows by ``exp(log_drift) * (t - last_time)`` on the diagonal.

    ``mode`` NONE leaves the covariance unchanged; FIXED uses ``fixed_alpha``
    in place of ``exp(log_drift)``.
    """
    dt = t - belief.last_time
    if dt < 0:
        raise TimeOrderError(f"time {t} precedes last update {belief.last_time}")
    mode = DriftMode(mode)
    if mode is DriftMode.NONE:
        rate = 0.0
    elif mode is DriftMode.FIXED:
        rate = fixed_alpha
    else:
        rate = math.exp(log_drift)
    cov = belief.cov.copy()
    if dt > 0 and rate > 0:
        cov[np.diag_indices_from(cov)] += rate * dt
    return GaussianBelief(belief.mean.copy(), cov, float(t))


def check_belief(belief: GaussianBelief, dim: int | None = None, allow_zero: bool = False) -> None:
    mean, cov = belief.mean, belief.cov
    if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
        raise InvariantError(f"shape mismatch: mean {mean.shape}, covariance {cov.shape}")
    if dim is not None and mean.shape[0] != dim:
        raise InvariantError(f"belief dimension {mean.shape[0]} != latent_dim {dim}")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise InvariantError("belief contains non-finite values")
    scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
    asym = float(np.max(np.abs(cov - cov.T))) / scale
    if asym > SYM_RTOL:
        raise InvariantError(f"covariance not symmetric (relative asymmetry {asym:.3g})")
    if allow_zero and not np.any(cov):
        return
    lam = np.linalg.eigvalsh(cov)
    if lam[0] <= 0:
        raise InvariantError(f"covariance not positive definite (min eigenvalue {lam[0]:.3g})")


@dataclass
class _SideStore:
    dim: int
    means: np.ndarray = field(init=False)
    covs: np.ndarray = field(init=False)
    last_time: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    frozen: np.ndarray = field(init=False)
    n: int = 0

    def __post_init__(self):
        self._alloc(16)

    def _alloc(self, cap):
        d = self.dim
        old = None if not hasattr(self, "means") else (self.means, self.covs, self.last_time, self.counts, self.frozen)
        self.means = np.zeros((cap, d))
        self.covs = np.zeros((cap, d, d))
        self.last_time = np.zeros(cap)
        self.counts = np.zeros(cap, dtype=np.int64)
        self.frozen = np.zeros(cap, dtype=bool)
        if old is not None:
            n = self.n
            self.means[:n], self.covs[:n], self.last_time[:n], self.counts[:n], self.frozen[:n] = (
                a[:n] for a in old
            )

    def append(self) -> int:
        if self.n == self.means.shape[0]:
            self._alloc(2 * self.n)
        self.n += 1
        return self.n - 1


class BeliefStore:
    """One belief per entity, held in contiguous per-side arrays.

    The arrays are exposed (``means``, ``covs``...) so the event kernel can
    update rows in place; everything else goes through :meth:`get` and
    :meth:`commit`.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._sides = {Side.ROW: _SideStore(dim), Side.COL: _SideStore(dim)}

    def side(self, side: Side) -> _SideStore:
        return self._sides[Side(side)]

    def size(self, side: Side) -> int:
        return self._sides[Side(side)].n

    def __contains__(self, eid: EntityId) -> bool:
        return eid.index < self._sides[eid.side].n

    def __len__(self) -> int:
        return sum(s.n for s in self._sides.values())

    def ids(self) -> Iterator[EntityId]:
        for side in Side:
            for i in range(self._sides[side].n):
                yield EntityId(side, i)

    def add(self, eid: EntityId, belief: GaussianBelief, frozen: bool = False) -> None:
        s = self._sides[eid.side]
        if eid.index < s.n:
            raise DuplicateEntityError(f"entity {eid} already exists")
        if eid.index != s.n:
            raise KeyError(f"entity indices must be created in order; next {eid.side.value} index is {s.n}")
        check_belief(belief, self.dim, allow_zero=frozen)
        i = s.append()
        s.means[i] = belief.mean
        s.covs[i] = belief.cov
        s.last_time[i] = belief.last_time
        s.frozen[i] = frozen

    def get(self, eid: EntityId) -> GaussianBelief:
        s = self._sides[eid.side]
        if eid.index >= s.n:
            raise KeyError(f"unknown entity {eid}")
        i = eid.index
        return GaussianBelief(s.means[i].copy(), s.covs[i].copy(), float(s.last_time[i]))

    def commit(self, eid: EntityId, belief: GaussianBelief) -> None:
        """Replace the stored belief after validating it."""
        s = self._sides[eid.side]
        if eid.index >= s.n:
            raise KeyError(f"unknown entity {eid}")
        check_belief(belief, self.dim, allow_zero=bool(s.frozen[eid.index]))
        i = eid.index
        s.means[i] = belief.mean
        s.covs[i] = belief.cov
        s.last_time[i] = belief.last_time

    def count(self, eid: EntityId) -> int:
        return int(self._sides[eid.side].counts[eid.index])

    def is_frozen(self, eid: EntityId) -> bool:
        return bool(self._sides[eid.side].frozen[eid.index])


def commit_posterior(store: BeliefStore, eid: EntityId, belief: GaussianBelief) -> None:
    store.commit(eid, belief)
