import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckf import GaussianBelief, Partition, QState, build_partition
from ckf.inference import compute_elbo, gaussian_kl, update_q_u, update_q_w, update_q_y

from conftest import spd
from oracles import scalar_elbo


def gb(mean, cov, t=0.0):
    return GaussianBelief(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)), t)


def scalar_q(qu, qw, m_ij):
    return QState(gb(qu[0], qu[1]), gb(qw[0], qw[1]), 0.0, m_ij)


class TestUpdateQY:
    def test_single_cell_is_untruncated(self):
        p = Partition((), (1.0,))
        q = update_q_y(QState(gb([0.3, 1.0], np.eye(2)), gb([2.0, -0.1], np.eye(2))), p, 1.0, 1)
        assert q.m_ij == pytest.approx(0.5, abs=1e-15)
        assert q.ey == pytest.approx(q.m_ij, abs=1e-15)

    def test_cell_center(self):
        p = build_partition(5, 1.0)  # class 4 is (0.5, 1.5]
        q = update_q_y(QState(gb([1.0], [[1.0]]), gb([1.0], [[1.0]])), p, 0.8, 4)
        assert q.ey == pytest.approx(1.0, abs=1e-14)

    def test_half_line(self):
        p = build_partition(2, 1.0)
        q = update_q_y(QState(gb([0.0], [[1.0]]), gb([1.0], [[1.0]])), p, 1.0, 2)
        assert q.ey == pytest.approx(0.7978845608028654, abs=1e-12)

    @given(mu=st.floats(-20, 20), z=st.integers(1, 5), sigma=st.floats(0.05, 4))
    def test_ey_in_cell(self, mu, z, sigma):
        p = build_partition(5, 1.0)
        q = update_q_y(QState(gb([mu], [[1.0]]), gb([1.0], [[1.0]])), p, sigma, z)
        lo, hi = p.cell(z)
        assert lo <= q.ey <= hi


class TestGaussianUpdate:
    def test_flat_likelihood(self, rng):
        prior = gb(rng.standard_normal(4), spd(rng, 4))
        q = QState(prior, gb(rng.standard_normal(4), spd(rng, 4)), ey=3.0)
        post = update_q_u(q, prior, 1e9).q_u
        assert np.max(np.abs(post.mean - prior.mean)) < 1e-6

    def test_scalar_conjugate(self):
        # u ~ N(0, 1), w = 2 exactly, y = 4, sigma = 1
        q = QState(gb(0.0, 1.0), gb(2.0, 0.0), ey=4.0)
        post = update_q_u(q, gb(0.0, 1.0), 1.0).q_u
        assert post.mean[0] == pytest.approx(8 / 5, abs=1e-14)
        assert post.cov[0, 0] == pytest.approx(1 / 5, abs=1e-14)

    def test_scalar_conjugate_column(self):
        q = QState(gb(2.0, 0.0), gb(0.0, 1.0), ey=4.0)
        post = update_q_w(q, gb(0.0, 1.0), 1.0).q_w
        assert post.mean[0] == pytest.approx(8 / 5, abs=1e-14)
        assert post.cov[0, 0] == pytest.approx(1 / 5, abs=1e-14)

    def test_flat_likelihood_column(self, rng):
        prior = gb(rng.standard_normal(3), spd(rng, 3))
        q = QState(gb(rng.standard_normal(3), spd(rng, 3)), prior, ey=-2.0)
        assert np.max(np.abs(update_q_w(q, prior, 1e9).q_w.mean - prior.mean)) < 1e-6

    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), ey=st.floats(-5, 5))
    def test_roles_swap_exactly(self, seed, d, ey):
        r = np.random.default_rng(seed)
        a = gb(r.standard_normal(d), spd(r, d))
        b = gb(r.standard_normal(d), spd(r, d))
        prior = gb(r.standard_normal(d), spd(r, d))
        via_u = update_q_u(QState(a, b, ey=ey), prior, 0.7).q_u
        via_w = update_q_w(QState(b, a, ey=ey), prior, 0.7).q_w
        np.testing.assert_array_equal(via_u.mean, via_w.mean)
        np.testing.assert_array_equal(via_u.cov, via_w.cov)

    def test_point_mass_prior_unchanged(self):
        prior = gb([1.0, 2.0], np.zeros((2, 2)))
        post = update_q_u(QState(prior, gb([1.0, 1.0], np.eye(2)), ey=5.0), prior, 1.0).q_u
        np.testing.assert_array_equal(post.mean, prior.mean)
        assert not post.cov.any()


class TestElbo:
    # Scalar cases checked against a brute-force Gauss-Hermite / quadrature oracle.
    # Each tuple: q_u, q_w, prior_u, prior_w, sigma, m_ij, (lo, hi), frozen value.
    CASES = [
        ((0.4, 0.5), (-0.2, 0.3), (0.3, 1.2), (-0.5, 0.8), 1.1, -0.08, (-0.55, 0.55), -1.4368294820853627),
        ((1.3, 0.2), (0.9, 0.15), (1.0, 1.0), (0.5, 1.0), 1.1, 1.17, (1.65, math.inf), -2.342141700830559),
        ((-0.7, 0.4), (1.1, 0.6), (0.0, 1.0), (0.0, 1.0), 0.8, -0.77, (-math.inf, -1.2), -3.0780886261906555),
    ]

    @staticmethod
    def _partition(lo, hi):
        if math.isinf(lo):
            return Partition((hi,), (1.0, 2.0)), 1
        if math.isinf(hi):
            return Partition((lo,), (1.0, 2.0)), 2
        return Partition((lo, hi), (1.0, 2.0, 3.0)), 2

    @pytest.mark.parametrize("case", CASES)
    def test_frozen_scalar_values(self, case):
        qu, qw, pu, pw, sigma, m_ij, (lo, hi), expected = case
        p, z = self._partition(lo, hi)
        got = compute_elbo(scalar_q(qu, qw, m_ij), gb(*pu), gb(*pw), sigma, p, z)
        assert abs(got - expected) < 1e-4
        assert got == pytest.approx(expected, abs=1e-9)

    @given(
        qu=st.tuples(st.floats(-1.5, 1.5), st.floats(0.1, 1.5)),
        qw=st.tuples(st.floats(-1.5, 1.5), st.floats(0.1, 1.5)),
        m_ij=st.floats(-2, 2),
        lo=st.floats(-2, 1),
        w=st.floats(0.3, 2),
    )
    def test_matches_brute_force(self, qu, qw, m_ij, lo, w):
        pu, pw, sigma = (0.2, 1.0), (-0.1, 0.9), 0.9
        hi = lo + w
        got = compute_elbo(scalar_q(qu, qw, m_ij), gb(*pu), gb(*pw), sigma, Partition((lo, hi), (1.0, 2.0, 3.0)), 2)
        assert abs(got - scalar_elbo(qu, qw, pu, pw, sigma, m_ij, lo, hi)) < 1e-4

    def test_prior_equals_q_flat_likelihood(self, rng):
        pu, pw = gb(rng.standard_normal(3), spd(rng, 3)), gb(rng.standard_normal(3), spd(rng, 3))
        assert gaussian_kl(pu, pu) == pytest.approx(0.0, abs=1e-12)
        sigma = 1e9
        got = compute_elbo(QState(pu, pw), pu, pw, sigma, y=1.0)
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi * sigma**2), rel=1e-12)

    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8), z=st.integers(1, 5))
    def test_sweeps_never_decrease(self, seed, d, z):
        r = np.random.default_rng(seed)
        p, sigma = build_partition(5, 1.0), 1.0
        pu = gb(r.standard_normal(d), spd(r, d))
        pw = gb(r.standard_normal(d), spd(r, d))
        q = QState(pu, pw)
        q = update_q_y(q, p, sigma, z)
        trace = []
        for _ in range(6):
            q = update_q_y(q, p, sigma, z)
            q = update_q_u(q, pu, sigma)
            q = update_q_w(q, pw, sigma)
            trace.append(compute_elbo(q, pu, pw, sigma, p, z))
        assert np.all(np.diff(trace) >= -1e-9)

    def test_observed_mode_needs_y(self, rng):
        b = gb([0.0], [[1.0]])
        with pytest.raises(ValueError):
            compute_elbo(QState(b, b), b, b, 1.0)
