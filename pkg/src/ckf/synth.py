"""Synthetic dyadic streams and brute-force reference computations.

Nothing in this module calls the inference code; the references here are
used to check it.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .belief import EntityId, Side
from .inference import DyadEvent
from .probit import Partition, build_partition


@dataclass(frozen=True)
class DriftSchedule:
    """Piecewise-constant drift rate: ``rates[k]`` applies on ``[starts[k], starts[k+1])``.

    The last rate extends to infinity; ``starts[0]`` must be 0.
    """

    starts: tuple[float, ...] = (0.0,)
    rates: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "starts", tuple(float(s) for s in self.starts))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.starts) != len(self.rates) or not self.starts:
            raise ValueError("one rate per segment start required")
        if self.starts[0] != 0.0:
            raise ValueError("schedule must start at time 0")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError("segment starts must increase")
        if any(not (r >= 0 and math.isfinite(r)) for r in self.rates):
            raise ValueError("rates must be finite and nonnegative")

    @classmethod
    def constant(cls, rate: float) -> "DriftSchedule":
        return cls((0.0,), (rate,))

    @classmethod
    def alternating(cls, rates: Sequence[float], segment: float, n_segments: int) -> "DriftSchedule":
        """Cycle through ``rates`` in segments of equal length."""
        return cls(
            tuple(k * segment for k in range(n_segments)),
            tuple(rates[k % len(rates)] for k in range(n_segments)),
        )

    def segment_of(self, t: float) -> int:
        return max(bisect.bisect_right(self.starts, t) - 1, 0)

    def rate_at(self, t: float) -> float:
        return self.rates[self.segment_of(t)]

    def _cumulative(self, t: float) -> float:
        k = self.segment_of(t)
        return self._cum[k] + self.rates[k] * (t - self.starts[k])

    def integrated(self, t0: float, t1: float) -> float:
        """Integral of the rate over ``[t0, t1]``."""
        if t1 < t0:
            raise ValueError("t1 < t0")
        return self._cumulative(t1) - self._cumulative(t0)

    @property
    def _cum(self) -> list[float]:
        cum = self.__dict__.get("_cum_cache")
        if cum is None:
            cum = [0.0]
            for k in range(1, len(self.starts)):
                cum.append(cum[-1] + self.rates[k - 1] * (self.starts[k] - self.starts[k - 1]))
            object.__setattr__(self, "_cum_cache", cum)
        return cum


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``partition=None`` draws real observations ``u.w + N(0, sigma^2)``;
    otherwise the noisy value is binned into a class.  Arrivals are Poisson
    with ``dyad_rate`` per dyad, each event landing on a uniformly chosen dyad.
    """

    n_rows: int
    n_cols: int
    latent_dim: int
    horizon: int
    row_drift: DriftSchedule = field(default_factory=DriftSchedule)
    col_drift: DriftSchedule = field(default_factory=DriftSchedule)
    sigma: float = 1.0
    partition: Partition | None = None
    init_scale: float = 1.0
    dyad_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_rows", "n_cols", "latent_dim", "horizon"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.sigma > 0 and self.init_scale > 0 and self.dyad_rate > 0):
            raise ValueError("sigma, init_scale and dyad_rate must be positive")


@dataclass
class SynthData:
    """A generated stream with the true latents at each event time."""

    spec: SynthSpec
    events: list[DyadEvent]
    values: np.ndarray
    times: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    true_u: np.ndarray
    true_w: np.ndarray

    @property
    def true_dot(self) -> np.ndarray:
        return np.einsum("nd,nd->n", self.true_u, self.true_w)

    def write_csv(self, fh) -> None:
        """Write the stream in the harness input format."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_key", "col_key", "t", "value"])
        for t, i, j, v in zip(self.times, self.rows, self.cols, self.values):
            w.writerow([f"r{i}", f"c{j}", repr(float(t)), _fmt_value(v)])

    def write_truth(self, fh) -> None:
        d = self.spec.latent_dim
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "row_key", "col_key", "dot"] + [f"u{k}" for k in range(d)] + [f"w{k}" for k in range(d)])
        for n in range(len(self.times)):
            w.writerow(
                [repr(float(self.times[n])), f"r{self.rows[n]}", f"c{self.cols[n]}", repr(float(self.true_dot[n]))]
                + [repr(float(x)) for x in self.true_u[n]]
                + [repr(float(x)) for x in self.true_w[n]]
            )


def _fmt_value(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def generate(spec: SynthSpec) -> SynthData:
    """Draw a stream from the drifting latent-factor model.

    Each latent vector starts at ``N(0, init_scale^2 I)`` and moves by an exact
    Gaussian increment with variance ``integral of alpha`` between the events
    that touch it.
    """
    rng = np.random.default_rng(spec.seed)
    d, n = spec.latent_dim, spec.horizon
    u = spec.init_scale * rng.standard_normal((spec.n_rows, d))
    w = spec.init_scale * rng.standard_normal((spec.n_cols, d))
    u_time = np.zeros(spec.n_rows)
    w_time = np.zeros(spec.n_cols)
    total_rate = spec.dyad_rate * spec.n_rows * spec.n_cols
    times = np.cumsum(rng.exponential(1.0 / total_rate, size=n))
    rows = rng.integers(0, spec.n_rows, size=n)
    cols = rng.integers(0, spec.n_cols, size=n)
    noise = spec.sigma * rng.standard_normal(n)
    true_u = np.empty((n, d))
    true_w = np.empty((n, d))
    for k in range(n):
        t, i, j = times[k], rows[k], cols[k]
        var_u = spec.row_drift.integrated(u_time[i], t)
        if var_u > 0:
            u[i] += math.sqrt(var_u) * rng.standard_normal(d)
        var_w = spec.col_drift.integrated(w_time[j], t)
        if var_w > 0:
            w[j] += math.sqrt(var_w) * rng.standard_normal(d)
        u_time[i] = w_time[j] = t
        true_u[k] = u[i]
        true_w[k] = w[j]
    y = np.einsum("nd,nd->n", true_u, true_w) + noise
    if spec.partition is None:
        values = y
        obs = y
    else:
        bounds = np.asarray(spec.partition.boundaries)
        obs = np.searchsorted(bounds, y, side="left") + 1
        values = np.asarray(spec.partition.labels)[obs - 1]
    events = [
        DyadEvent(EntityId(Side.ROW, int(i)), EntityId(Side.COL, int(j)), float(t), float(o))
        for t, i, j, o in zip(times, rows, cols, obs)
    ]
    return SynthData(spec, events, np.asarray(values, dtype=float), times, rows, cols, true_u, true_w)


def sample_classes(dot: float, sigma: float, partition: Partition, size: int, rng: np.random.Generator) -> np.ndarray:
    """Classes of ``size`` independent noisy readouts of a fixed dot product."""
    y = dot + sigma * rng.standard_normal(size)
    return np.searchsorted(np.asarray(partition.boundaries), y, side="left") + 1


def star_partition(m: int, sigma: float, width_factor: float = 1.0) -> Partition:
    """Partition with labels ``1..m`` and cells ``width_factor * sigma`` wide."""
    return build_partition(m, width_factor * sigma, labels=[float(k) for k in range(1, m + 1)])


# -- reference computations --------------------------------------------------


def kalman_reference(
    series: Sequence[float],
    design: np.ndarray,
    sigma: float,
    alpha: float,
    mu0: np.ndarray,
    cov0: np.ndarray,
    dts: Sequence[float] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Classical forward recursion for ``y_n = a_n . x_n + N(0, sigma^2)``.

    ``x`` follows a random walk with covariance ``alpha * dt * I`` per step.
    ``design`` is one vector for all steps or a ``(n, d)`` array.  ``dts``
    defaults to unit steps.  Returns the posterior ``(mean, cov)`` after each
    observation.
    """
    y = np.asarray(series, dtype=float)
    n = y.shape[0]
    A = np.asarray(design, dtype=float)
    A = np.broadcast_to(A, (n, A.shape[-1])) if A.ndim == 1 else A
    dts = np.ones(n) if dts is None else np.asarray(dts, dtype=float)
    mu = np.asarray(mu0, dtype=float).copy()
    cov = np.asarray(cov0, dtype=float).copy()
    d = mu.shape[0]
    out = []
    for k in range(n):
        B = cov + alpha * dts[k] * np.eye(d)
        B_inv = np.linalg.inv(B)
        a = A[k]
        cov = np.linalg.inv(np.outer(a, a) / sigma**2 + B_inv)
        cov = 0.5 * (cov + cov.T)
        mu = cov @ (a * y[k] / sigma**2 + B_inv @ mu)
        out.append((mu.copy(), cov.copy()))
    return out


_QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-13, limit=500)


def _phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _shifted_moments(a: float, b: float) -> tuple[float, float, float]:
    """For ``0 <= a < b``: ``(log phi(a), I0, I1)`` with ``I_k`` the integrals of
    ``s^k exp(-a s - s^2 / 2)`` over ``[0, b - a]``.

    Mass is ``phi(a) * I0`` and the mean is ``a + I1 / I0``; the scaling keeps
    both finite far in the tail.
    """
    width = b - a
    f0 = lambda s: math.exp(-a * s - 0.5 * s * s)
    f1 = lambda s: s * math.exp(-a * s - 0.5 * s * s)
    # the integrand decays on a scale of 1 / a for large a
    scale = 1.0 / max(a, 1.0)
    pts = [p for p in (scale, 5 * scale, 20 * scale) if p < width] if math.isfinite(width) else None
    if math.isfinite(width):
        i0 = integrate.quad(f0, 0.0, width, points=pts or None, **_QUAD_OPTS)[0]
        i1 = integrate.quad(f1, 0.0, width, points=pts or None, **_QUAD_OPTS)[0]
    else:
        cut = 40.0 * scale
        i0 = integrate.quad(f0, 0.0, cut, points=[scale, 5 * scale], **_QUAD_OPTS)[0]
        i0 += integrate.quad(f0, cut, math.inf, **_QUAD_OPTS)[0]
        i1 = integrate.quad(f1, 0.0, cut, points=[scale, 5 * scale], **_QUAD_OPTS)[0]
        i1 += integrate.quad(f1, cut, math.inf, **_QUAD_OPTS)[0]
    return -0.5 * a * a - 0.5 * math.log(2.0 * math.pi), i0, i1


def _std_quad(a: float, b: float) -> tuple[float, float]:
    """Quadrature mass and mean of a standard normal restricted to ``(a, b)``."""
    if a >= 0.0:
        logphi, i0, i1 = _shifted_moments(a, b)
        return math.exp(logphi) * i0, a + i1 / i0
    if b <= 0.0:
        logphi, i0, i1 = _shifted_moments(-b, -a)
        return math.exp(logphi) * i0, b - i1 / i0
    # straddles zero: integrate each half directly
    mass = mom = 0.0
    for lo, hi in ((a, 0.0), (0.0, b)):
        mass += integrate.quad(_phi, lo, hi, **_QUAD_OPTS)[0]
        mom += integrate.quad(lambda x: x * _phi(x), lo, hi, **_QUAD_OPTS)[0]
    return mass, mom / mass


def quad_trunc_moment(center: float, sigma: float, l: float, r: float, order: int) -> float:
    """Normalizer (``order=0``) or mean (``order=1``) of ``N(center, sigma^2)`` on ``(l, r)``.

    Computed by adaptive quadrature.  Intervals that sit entirely in one tail
    are integrated after factoring out the density at the near bound, so the
    mean stays accurate when the mass underflows.
    """
    if not l < r:
        raise ValueError("need l < r")
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    a, b = (l - center) / sigma, (r - center) / sigma
    mass, mean = _std_quad(a, b)
    return mass if order == 0 else center + sigma * mean


def fd_derivatives(fn: Callable[[float], float], x: float, h: float) -> tuple[float, float]:
    """Central-difference first and second derivatives."""
    fp, f0, fm = fn(x + h), fn(x), fn(x - h)
    return (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)
