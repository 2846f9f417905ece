import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from ckf import Partition, build_partition, class_of, class_prob, trunc_norm_mean
from ckf.errors import ConfigError
from ckf.probit import class_probs, trunc_norm_moments
from ckf.synth import quad_trunc_moment

from oracles import trunc_density

finite = st.floats(-50, 50, allow_nan=False)


class TestBuildPartition:
    def test_binary(self):
        assert build_partition(2, 1.0).boundaries == (0.0,)

    def test_five_classes(self):
        s = 1.76
        p = build_partition(5, s)
        np.testing.assert_allclose(p.boundaries, [s * x for x in (-1.5, -0.5, 0.5, 1.5)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(np.diff(p.boundaries), s, rtol=1e-14)
        assert p.labels == (1.0, 2.0, 3.0, 4.0, 5.0)

    def test_boundary_goes_to_lower_class(self):
        p = build_partition(5, 0.7)
        for k, b in enumerate(p.boundaries, start=1):
            assert class_of(p, b) == k

    @pytest.mark.parametrize("m,w", [(1, 1.0), (0, 1.0), (3, 0.0), (3, -1.0)])
    def test_invalid(self, m, w):
        with pytest.raises(ConfigError):
            build_partition(m, w)

    def test_unsorted_rejected(self):
        with pytest.raises(ConfigError):
            Partition((1.0, 0.0), (1.0, 2.0, 3.0))

    def test_label_lookup(self):
        p = build_partition(5, 1.0)
        assert p.class_of_label(4.0) == 4
        with pytest.raises(ValueError):
            p.class_of_label(3.7)


class TestClassOf:
    def test_far_negative(self):
        assert class_of(build_partition(5, 1.0), -1e300) == 1

    def test_far_positive(self):
        assert class_of(build_partition(5, 1.0), 1e300) == 5

    def test_middle_cell(self):
        assert class_of(build_partition(5, 1.0), 0.4) == 3

    @given(y=finite, m=st.integers(2, 12), w=st.floats(0.05, 5))
    def test_cell_contains_value(self, y, m, w):
        p = build_partition(m, w)
        lo, hi = p.cell(class_of(p, y))
        assert lo < y <= hi


class TestTruncNormMean:
    def test_symmetric(self):
        assert trunc_norm_mean(0.0, 1.0, -1.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_untruncated(self):
        assert trunc_norm_mean(0.37, 2.0, -math.inf, math.inf) == pytest.approx(0.37, abs=1e-15)

    def test_half_line(self):
        # adaptive quadrature of the raw density, not the closed form
        dens, _ = trunc_density(0.0, 1.0, 0.0, math.inf)
        ref = integrate.quad(lambda y: y * dens(y), 0.0, math.inf, epsabs=1e-14)[0]
        assert ref == pytest.approx(0.7978845608, abs=1e-10)
        assert trunc_norm_mean(0.0, 1.0, 0.0, math.inf) == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize(
        "center,l,r",
        [(0.0, 30.0, 31.0), (0.0, -31.0, -30.0), (0.0, 40.0, math.inf), (0.0, -math.inf, -40.0), (5.0, -9.0, -8.0)],
    )
    def test_far_tails_finite_and_inside(self, center, l, r):
        m = trunc_norm_mean(center, 1.0, l, r)
        assert math.isfinite(m)
        assert l < m < r

    def test_far_tail_values(self):
        # within 1e-8 of the tail-shifted quadrature even when the mass underflows
        for l, r in [(38.0, 39.0), (-39.0, -38.0), (50.0, math.inf)]:
            assert trunc_norm_mean(0.0, 1.0, l, r) == pytest.approx(quad_trunc_moment(0.0, 1.0, l, r, 1), abs=1e-8)

    def test_empty_interval(self):
        with pytest.raises(ValueError):
            trunc_norm_mean(0.0, 1.0, 1.0, 1.0)

    @given(
        center=st.floats(-5, 5),
        sigma=st.floats(0.1, 3),
        a=st.floats(-8, 8),
        width=st.one_of(st.floats(0.01, 10), st.just(math.inf)),
        left_open=st.booleans(),
    )
    def test_matches_quadrature(self, center, sigma, a, width, left_open):
        l = -math.inf if left_open else center + sigma * a
        r = center + sigma * (a + width) if not math.isinf(width) else math.inf
        if not l < r:
            return
        assert abs(trunc_norm_mean(center, sigma, l, r) - quad_trunc_moment(center, sigma, l, r, 1)) < 1e-8

    @given(c1=st.floats(-8, 8), c2=st.floats(-8, 8), l=st.floats(-3, 3), w=st.floats(0.1, 4))
    def test_monotone_in_center(self, c1, c2, l, w):
        c1, c2 = sorted((c1, c2))
        assert trunc_norm_mean(c1, 1.0, l, l + w) <= trunc_norm_mean(c2, 1.0, l, l + w) + 1e-12

    @given(center=st.floats(-4, 4), l=st.floats(-4, 3), w=st.floats(0.05, 3))
    def test_variance_matches_quadrature(self, center, l, w):
        r = l + w
        mean, var, _ = trunc_norm_moments(center, 1.0, l, r)
        dens, _ = trunc_density(center, 1.0, l, r)
        ref = integrate.quad(lambda y: (y - mean) ** 2 * dens(y), l, r, epsabs=1e-13)[0]
        assert var == pytest.approx(ref, rel=1e-6, abs=1e-12)


class TestClassProb:
    def test_binary_center(self):
        p = build_partition(2, 1.0)
        assert class_prob(0.0, 1.0, p, 1) == pytest.approx(0.5, abs=1e-15)
        assert class_prob(0.0, 1.0, p, 2) == pytest.approx(0.5, abs=1e-15)

    def test_boundary_cdf(self):
        s = 1.3
        p = build_partition(5, s)
        b2 = p.boundaries[1]
        assert class_prob(b2, s, p, 1) + class_prob(b2, s, p, 2) == pytest.approx(0.5, abs=1e-14)

    @given(md=st.floats(-20, 20), sigma=st.floats(0.05, 5), m=st.integers(2, 10), w=st.floats(0.05, 4))
    def test_telescopes(self, md, sigma, m, w):
        p = build_partition(m, w)
        total = sum(class_prob(md, sigma, p, k) for k in range(1, m + 1))
        assert abs(total - 1.0) < 1e-12
        np.testing.assert_allclose(class_probs(md, sigma, p), [class_prob(md, sigma, p, k) for k in range(1, m + 1)], atol=1e-15)
