"""Ordered-probit partitions and truncated-normal moments.

A partition splits the real line into ``m`` right-closed cells
``(b_{k-1}, b_k]`` with ``b_0 = -inf`` and ``b_m = +inf``.  Class ``k``
(1-based) is the cell a latent Gaussian draw falls into.

The truncated-normal helpers work on standardized bounds and avoid the
``0/0`` that the textbook ``phi / (Phi - Phi)`` ratio produces in the tails:
an interval lying entirely on one side of zero is reflected into the lower
tail and evaluated with the scaled complementary error function.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfcx, ndtr

from .errors import ConfigError

SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_SQRT_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Partition:
    """Ordered class cells.

    ``boundaries`` holds the ``m - 1`` interior cut points, ``labels`` the
    ``m`` class values (e.g. star ratings) in ascending order.
    """

    boundaries: tuple[float, ...]
    labels: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        lab = tuple(float(x) for x in self.labels)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "labels", lab)
        if len(lab) != len(b) + 1:
            raise ConfigError(
                f"partition with {len(b)} boundaries needs {len(b) + 1} labels, got {len(lab)}"
            )
        if any(not math.isfinite(x) for x in b):
            raise ConfigError("partition boundaries must be finite")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ConfigError("partition boundaries must be strictly increasing")
        if any(lab[i] >= lab[i + 1] for i in range(len(lab) - 1)):
            raise ConfigError("partition labels must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.labels)

    def cell(self, k: int) -> tuple[float, float]:
        """Return ``(l_k, r_k)`` for 1-based class ``k``."""
        if not 1 <= k <= self.m:
            raise ValueError(f"class {k} outside 1..{self.m}")
        lo = -math.inf if k == 1 else self.boundaries[k - 2]
        hi = math.inf if k == self.m else self.boundaries[k - 1]
        return lo, hi

    def label_of(self, k: int) -> float:
        return self.labels[k - 1]

    def class_of_label(self, value: float, tol: float = 1e-9) -> int:
        """Map an observed label value to its class, rejecting off-grid values."""
        lab = np.asarray(self.labels)
        k = int(np.argmin(np.abs(lab - value)))
        if abs(lab[k] - value) > tol:
            raise ValueError(f"value {value!r} is not one of the labels {self.labels}")
        return k + 1

    def to_dict(self) -> dict:
        return {"boundaries": list(self.boundaries), "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(tuple(d["boundaries"]), tuple(d["labels"]))


def build_partition(m: int, width: float, labels: Sequence[float] | None = None) -> Partition:
    """Equal-width partition centered at zero.

    Interior boundaries are ``width * (k - m/2)`` for ``k = 1..m-1``.
    """
    if m < 2:
        raise ConfigError("a partition needs at least two classes")
    if not width > 0:
        raise ConfigError("partition width must be positive")
    bounds = tuple(width * (k - m / 2.0) for k in range(1, m))
    if labels is None:
        labels = tuple(float(k) for k in range(1, m + 1))
    return Partition(bounds, tuple(labels))


def class_of(partition: Partition, y: float) -> int:
    """1-based class whose right-closed cell contains ``y``."""
    return bisect.bisect_left(partition.boundaries, y) + 1


def _phi(x: float) -> float:
    if math.isinf(x):
        return 0.0
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _xphi(x: float) -> float:
    if math.isinf(x):
        return 0.0
    return x * INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _lower_tail(a: float, b: float) -> tuple[float, float, float]:
    """Standardized stats for ``a < b <= 0``; see :func:`std_trunc_stats`."""
    hb = 0.5 * b * b
    ex_b = float(erfcx(-b / SQRT2))
    if math.isinf(a):
        den = ex_b
        log_z = -hb + math.log(0.5 * den)
        mean = -SQRT_2_OVER_PI / den
        r2 = -b * SQRT_2_OVER_PI / den
        return log_z, mean, r2
    # everything scaled by exp(b^2 / 2); e = exp((b^2 - a^2) / 2) <= 1
    h = 0.5 * (b - a) * (b + a)
    e = math.exp(h)
    den = ex_b - e * float(erfcx(-a / SQRT2))
    if not den > 0.0:
        # interval too narrow to resolve the mass difference: point mass limit
        return -math.inf, 0.5 * (a + b), 0.5 * (a * a + b * b) - 1.0
    log_z = -hb + math.log(0.5 * den)
    mean = SQRT_2_OVER_PI * math.expm1(h) / den
    r2 = SQRT_2_OVER_PI * (a * e - b) / den
    return log_z, mean, r2


def std_trunc_stats(a: float, b: float) -> tuple[float, float, float]:
    """Statistics of a standard normal truncated to ``(a, b]``.

    Returns ``(log Z, E[x], r2)`` with ``Z = Phi(b) - Phi(a)`` and
    ``r2 = (a*phi(a) - b*phi(b)) / Z``, so that ``Var[x] = 1 + r2 - E[x]^2``.
    """
    if not a < b:
        raise ValueError(f"empty truncation interval ({a}, {b})")
    if a >= 0.0:
        log_z, mean, r2 = _lower_tail(-b, -a)
        return log_z, -mean, r2
    if b <= 0.0:
        return _lower_tail(a, b)
    z = float(ndtr(b) - ndtr(a))
    return math.log(z), (_phi(a) - _phi(b)) / z, (_xphi(a) - _xphi(b)) / z


def trunc_norm_mean(center: float, sigma: float, l: float, r: float) -> float:
    """Mean of ``N(center, sigma^2)`` truncated to ``(l, r]``."""
    _, m1, _ = std_trunc_stats((l - center) / sigma, (r - center) / sigma)
    out = center + sigma * m1
    # rounding must not push the mean outside a finite cell
    if out <= l:
        out = math.nextafter(l, math.inf)
    if out >= r:
        out = math.nextafter(r, -math.inf)
    return out


def trunc_norm_moments(center: float, sigma: float, l: float, r: float) -> tuple[float, float, float]:
    """``(mean, variance, entropy)`` of the truncated normal."""
    log_z, m1, r2 = std_trunc_stats((l - center) / sigma, (r - center) / sigma)
    var = sigma * sigma * max(1.0 + r2 - m1 * m1, 0.0)
    entropy = LOG_SQRT_2PI_E + math.log(sigma) + log_z + 0.5 * r2
    return center + sigma * m1, var, entropy


def _cell_mass(a, b):
    """``Phi(b) - Phi(a)`` evaluated on the side of zero that avoids cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    return np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def class_probs(mean_dot, sigma: float, partition: Partition) -> np.ndarray:
    """Probabilities of every class; vectorized over ``mean_dot``.

    The result has shape ``mean_dot.shape + (m,)``.
    """
    md = np.asarray(mean_dot, dtype=float)[..., None]
    edges = np.concatenate(([-np.inf], partition.boundaries, [np.inf]))
    z = (edges - md) / sigma
    return _cell_mass(z[..., :-1], z[..., 1:])


def class_prob(mean_dot: float, sigma: float, partition: Partition, k: int) -> float:
    lo, hi = partition.cell(k)
    return float(_cell_mass((lo - mean_dot) / sigma, (hi - mean_dot) / sigma))
