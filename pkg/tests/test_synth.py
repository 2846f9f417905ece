import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckf.probit import class_prob
from ckf.synth import (
    DriftSchedule,
    SynthSpec,
    fd_derivatives,
    generate,
    kalman_reference,
    quad_trunc_moment,
    sample_classes,
    star_partition,
)


class TestSchedule:
    def test_alternating(self):
        s = DriftSchedule.alternating((1e-4, 1e-1), 10.0, 4)
        assert s.rate_at(5.0) == 1e-4 and s.rate_at(15.0) == 1e-1 and s.rate_at(1e9) == 1e-1
        assert s.integrated(5.0, 25.0) == pytest.approx(5e-4 + 1.0 + 5e-4, rel=1e-12)

    @given(t0=st.floats(0, 100), t1=st.floats(0, 100))
    def test_integrated_matches_quadrature(self, t0, t1):
        t0, t1 = sorted((t0, t1))
        s = DriftSchedule((0.0, 7.0, 30.0, 31.5), (0.2, 0.0, 3.0, 0.5))
        grid = np.linspace(t0, t1, 20001)
        approx = np.trapezoid([s.rate_at(t) for t in grid], grid)
        assert s.integrated(t0, t1) == pytest.approx(approx, abs=4e-3 * max(t1 - t0, 1e-9) + 1e-9)

    @pytest.mark.parametrize("starts,rates", [((1.0,), (0.1,)), ((0.0, 0.0), (1.0, 1.0)), ((0.0,), (-1.0,))])
    def test_invalid(self, starts, rates):
        with pytest.raises(ValueError):
            DriftSchedule(starts, rates)


class TestGenerate:
    def test_zero_drift_constant(self):
        data = generate(SynthSpec(3, 2, 4, 200, seed=5))
        for i in range(3):
            rows = data.true_u[data.rows == i]
            assert np.all(rows == rows[0])

    def test_same_seed(self):
        spec = SynthSpec(4, 3, 2, 100, DriftSchedule.constant(0.1), partition=star_partition(5, 1.0), seed=9)
        a, b = generate(spec), generate(spec)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.times, b.times)
        assert a.events == b.events
        fa, fb = io.StringIO(), io.StringIO()
        a.write_csv(fa)
        b.write_csv(fb)
        assert fa.getvalue() == fb.getvalue()

    def test_times_increase_at_dyad_rate(self):
        data = generate(SynthSpec(10, 10, 2, 20000, dyad_rate=0.5, seed=1))
        assert np.all(np.diff(data.times) > 0)
        # global rate is dyad_rate * n_rows * n_cols = 50
        assert data.times[-1] / 20000 == pytest.approx(1 / 50, rel=0.03)

    def test_ordinal_values_are_labels(self):
        part = star_partition(5, 1.0)
        data = generate(SynthSpec(4, 4, 2, 300, partition=part, seed=2))
        assert set(np.unique(data.values)) <= set(part.labels)

    def test_increment_variance(self):
        alpha = 0.05
        data = generate(SynthSpec(1, 1, 2, 10001, DriftSchedule.constant(alpha), seed=11))
        inc = np.diff(data.true_u[:, 0]) / np.sqrt(alpha * np.diff(data.times))
        assert inc.size == 10000
        assert abs(inc.var() - 1.0) < 0.1

    def test_class_frequencies(self):
        part = star_partition(5, 1.0)
        dot, n = 0.37, 100_000
        classes = sample_classes(dot, 1.0, part, n, np.random.default_rng(0))
        freq = np.bincount(classes, minlength=6)[1:] / n
        for k in range(1, 6):
            p = class_prob(dot, 1.0, part, k)
            assert abs(freq[k - 1] - p) < 3 * math.sqrt(p * (1 - p) / n)

    def test_truth_file(self):
        data = generate(SynthSpec(2, 2, 3, 10, DriftSchedule.constant(0.1), seed=4))
        fh = io.StringIO()
        data.write_truth(fh)
        lines = fh.getvalue().splitlines()
        assert len(lines) == 11
        assert lines[0].split(",")[:4] == ["t", "row_key", "col_key", "dot"]


class TestKalmanReference:
    def test_conjugate_variance(self):
        sigma, v0 = 0.7, 2.0
        out = kalman_reference([1.3] * 12, np.array([1.0]), sigma, 0.0, np.zeros(1), np.array([[v0]]))
        for n, (_, cov) in enumerate(out, start=1):
            assert cov[0, 0] == pytest.approx(1 / (1 / v0 + n / sigma**2), rel=1e-13)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_loewner_decreasing(self, seed):
        r = np.random.default_rng(seed)
        d = 3
        out = kalman_reference(r.standard_normal(15), r.standard_normal((15, d)), 0.5, 0.0, np.zeros(d), np.eye(d))
        covs = [np.eye(d)] + [c for _, c in out]
        for a, b in zip(covs, covs[1:]):
            assert np.linalg.eigvalsh(a - b).min() >= -1e-12

    def test_shift_by_alpha(self):
        # B = Sigma + alpha I: with a zero design the posterior is just the shifted prior
        cov0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        (_, cov), = kalman_reference([0.0], np.zeros(2), 1.0, 0.4, np.zeros(2), cov0)
        np.testing.assert_allclose(np.linalg.eigvalsh(cov), np.linalg.eigvalsh(cov0) + 0.4, atol=1e-13)


class TestQuadTruncMoment:
    def test_total_mass(self):
        assert quad_trunc_moment(0.3, 1.7, -math.inf, math.inf, 0) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.5])
    def test_half_line_mean(self, sigma):
        assert quad_trunc_moment(0.0, sigma, 0.0, math.inf, 1) == pytest.approx(math.sqrt(2 / math.pi) * sigma, abs=1e-12)

    def test_symmetric(self):
        assert quad_trunc_moment(1.2, 0.8, 0.2, 2.2, 1) == pytest.approx(1.2, abs=1e-12)

    def test_far_tail_mean_finite(self):
        m = quad_trunc_moment(0.0, 1.0, 40.0, 41.0, 1)
        assert 40.0 < m < 40.1
        assert quad_trunc_moment(0.0, 1.0, 40.0, 41.0, 0) < 1e-300


class TestFiniteDifferences:
    def test_square(self):
        f1, f2 = fd_derivatives(lambda x: x * x, 3.0, 1e-5)
        assert f1 == pytest.approx(6.0, abs=1e-6)
        # at h = 1e-5 the second difference carries ~ eps * 9 / h^2 = 2e-5 of rounding
        assert f2 == pytest.approx(2.0, abs=5e-5)
        _, f2_wide = fd_derivatives(lambda x: x * x, 3.0, 1e-3)
        assert f2_wide == pytest.approx(2.0, abs=1e-6)

    def test_sine(self):
        f1, f2 = fd_derivatives(math.sin, 0.0, 1e-5)
        assert f1 == pytest.approx(1.0, abs=1e-8)
        assert f2 == pytest.approx(0.0, abs=1e-8)
